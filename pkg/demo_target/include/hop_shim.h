/* Hook shim for instrumented demo targets.
 *
 * The target library calls the five hop_* hooks; the driving process calls
 * the control entry points around each forked execution. All feedback flows
 * through one shared memory area:
 *
 *   [ coverage map: 65536 x u32 ]
 *   [ event ring: u32 capacity, u32 count, then fixed-size entries ]
 *   [ control block: child status, crash info ]
 *
 * Arena allocations place the last payload byte at a page boundary and map
 * the following page PROT_NONE, so one-past-the-end access faults inside a
 * known guard range.
 */
#ifndef HOP_SHIM_H
#define HOP_SHIM_H

#include <stdint.h>
#include <stddef.h>

#define HOP_MAP_ENTRIES   65536u
#define HOP_MAP_BYTES     (HOP_MAP_ENTRIES * 4u)
#define HOP_RING_CAPACITY 4096u
#define HOP_PAGE          4096u

/* event kinds */
#define HOP_EV_CMP    1u
#define HOP_EV_ALLOC  2u
#define HOP_EV_FREE   3u
#define HOP_EV_FOPEN  4u
#define HOP_EV_ARENA  5u  /* guarded arena chunk: a=ptr, b=size, width=stmt */

#define HOP_CHILD_MAGIC 0xF00DFACEu
#define HOP_CRASH_MAGIC 0xDEADC0DEu

/* child exit kinds written to the control block */
#define HOP_EXIT_RUNNING 0u
#define HOP_EXIT_OK      1u
#define HOP_EXIT_ASSERT  2u

typedef struct {
    uint32_t kind;
    uint32_t width;
    uint64_t a;
    uint64_t b;
    char     name[64];
} hop_event;

typedef struct {
    uint32_t  capacity;
    uint32_t  count;
    hop_event events[HOP_RING_CAPACITY];
} hop_ring;

typedef struct {
    uint32_t magic;       /* HOP_CHILD_MAGIC once the child began */
    uint32_t exit_kind;
    uint32_t stmt;        /* statement currently executing */
    uint32_t crash_magic; /* HOP_CRASH_MAGIC once the signal handler ran */
    uint64_t fault_addr;
    uint32_t fault_site;
    uint32_t signo;
    char     detail[64];
} hop_control;

#define HOP_RING_OFFSET    HOP_MAP_BYTES
#define HOP_CONTROL_OFFSET (HOP_RING_OFFSET + sizeof(hop_ring))
#define HOP_AREA_BYTES     (HOP_CONTROL_OFFSET + sizeof(hop_control))

/* hooks called by the instrumented target */
void hop_branch(uint32_t site);
void hop_cmp(uint64_t a, uint64_t b, uint32_t width);
void hop_alloc(void* p, uint64_t n);
void hop_free(void* p);
void hop_fopen(const char* name);

/* control surface used by the driver */
int   hop_shim_init(const char* feedback_path);
void  hop_child_begin(void);
void  hop_child_finish(uint32_t exit_kind, const char* detail);
void  hop_set_context(uint32_t ctx_hash, uint32_t tracked);
void  hop_set_stmt(uint32_t stmt);
void* hop_arena_alloc(uint64_t size, uint32_t stmt);
void* hop_guard_ptr(void);

#endif /* HOP_SHIM_H */
