#include "hop_shim.h"

#include <fcntl.h>
#include <signal.h>
#include <string.h>
#include <sys/mman.h>
#include <unistd.h>

#define ARENA_RESERVE (64u << 20)

static uint8_t*     area;
static uint32_t*    cov_map;
static hop_ring*    ring;
static hop_control* control;

static uint8_t* arena_base;
static size_t   arena_cursor;

static uint32_t cur_ctx;
static uint32_t cur_tracked;
static uint32_t last_site;

int hop_shim_init(const char* feedback_path)
{
    int fd = open(feedback_path, O_RDWR | O_CREAT, 0644);
    if (fd < 0)
        return -1;
    if (ftruncate(fd, HOP_AREA_BYTES) != 0) {
        close(fd);
        return -1;
    }
    area = mmap(NULL, HOP_AREA_BYTES, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    close(fd);
    if (area == MAP_FAILED) {
        area = NULL;
        return -1;
    }
    cov_map = (uint32_t*)area;
    ring = (hop_ring*)(area + HOP_RING_OFFSET);
    control = (hop_control*)(area + HOP_CONTROL_OFFSET);
    /* one PROT_NONE reservation; pages are committed per allocation */
    arena_base = mmap(NULL, ARENA_RESERVE, PROT_NONE,
                      MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
    if (arena_base == MAP_FAILED) {
        arena_base = NULL;
        return -1;
    }
    return 0;
}

/* -- crash capture -------------------------------------------------------- */

static void crash_handler(int signo, siginfo_t* info, void* uctx)
{
    (void)uctx;
    if (control) {
        control->crash_magic = HOP_CRASH_MAGIC;
        control->fault_addr = (uint64_t)(uintptr_t)(info ? info->si_addr : 0);
        control->fault_site = last_site;
        control->signo = (uint32_t)signo;
    }
    _exit(128 + signo);
}

static void install_handlers(void)
{
    static uint8_t alt[SIGSTKSZ * 2];
    stack_t ss = {0};
    ss.ss_sp = alt;
    ss.ss_size = sizeof(alt);
    sigaltstack(&ss, NULL);

    struct sigaction sa = {0};
    sa.sa_sigaction = crash_handler;
    sa.sa_flags = SA_SIGINFO | SA_ONSTACK;
    sigemptyset(&sa.sa_mask);
    int signals[] = {SIGSEGV, SIGBUS, SIGFPE, SIGILL, SIGABRT};
    for (size_t i = 0; i < sizeof(signals) / sizeof(signals[0]); i++)
        sigaction(signals[i], &sa, NULL);
}

void hop_child_begin(void)
{
    memset(area, 0, HOP_AREA_BYTES);
    ring->capacity = HOP_RING_CAPACITY;
    control->magic = HOP_CHILD_MAGIC;
    control->exit_kind = HOP_EXIT_RUNNING;
    arena_cursor = 0;
    cur_ctx = 0;
    cur_tracked = 0;
    last_site = 0;
    install_handlers();
}

void hop_child_finish(uint32_t exit_kind, const char* detail)
{
    control->exit_kind = exit_kind;
    if (detail) {
        strncpy(control->detail, detail, sizeof(control->detail) - 1);
        control->detail[sizeof(control->detail) - 1] = '\0';
    }
}

void hop_set_context(uint32_t ctx_hash, uint32_t tracked)
{
    cur_ctx = ctx_hash;
    cur_tracked = tracked;
}

void hop_set_stmt(uint32_t stmt)
{
    if (control)
        control->stmt = stmt;
}

/* -- event ring ------------------------------------------------------------ */

static hop_event* push_event(uint32_t kind)
{
    if (!ring || ring->count >= ring->capacity)
        return NULL;
    hop_event* ev = &ring->events[ring->count++];
    memset(ev, 0, sizeof(*ev));
    ev->kind = kind;
    return ev;
}

/* -- hooks ------------------------------------------------------------------ */

void hop_branch(uint32_t site)
{
    last_site = site;
    if (!cur_tracked || !cov_map)
        return;
    uint32_t key = (site ^ cur_ctx) & (HOP_MAP_ENTRIES - 1);
    if (cov_map[key] != 0xFFFFFFFFu)
        cov_map[key]++;
}

void hop_cmp(uint64_t a, uint64_t b, uint32_t width)
{
    hop_event* ev = push_event(HOP_EV_CMP);
    if (ev) {
        ev->a = a;
        ev->b = b;
        ev->width = width;
    }
}

void hop_alloc(void* p, uint64_t n)
{
    hop_event* ev = push_event(HOP_EV_ALLOC);
    if (ev) {
        ev->a = (uint64_t)(uintptr_t)p;
        ev->b = n;
    }
}

void hop_free(void* p)
{
    hop_event* ev = push_event(HOP_EV_FREE);
    if (ev)
        ev->a = (uint64_t)(uintptr_t)p;
}

void hop_fopen(const char* name)
{
    hop_event* ev = push_event(HOP_EV_FOPEN);
    if (ev && name) {
        strncpy(ev->name, name, sizeof(ev->name) - 1);
        ev->name[sizeof(ev->name) - 1] = '\0';
    }
}

/* -- guarded arena ----------------------------------------------------------- */

void* hop_arena_alloc(uint64_t size, uint32_t stmt)
{
    if (!arena_base)
        return NULL;
    uint64_t payload_pages = (size + HOP_PAGE - 1) / HOP_PAGE;
    if (payload_pages == 0)
        payload_pages = 1;
    uint64_t total = (payload_pages + 1) * HOP_PAGE; /* payload + guard page */
    if (arena_cursor + total > ARENA_RESERVE)
        return NULL;
    uint8_t* start = arena_base + arena_cursor;
    if (mprotect(start, payload_pages * HOP_PAGE, PROT_READ | PROT_WRITE) != 0)
        return NULL;
    arena_cursor += total;
    /* last payload byte sits at the page boundary before the guard */
    uint8_t* ptr = start + payload_pages * HOP_PAGE - size;
    hop_event* ev = push_event(HOP_EV_ARENA);
    if (ev) {
        ev->a = (uint64_t)(uintptr_t)ptr;
        ev->b = size;
        ev->width = stmt;
    }
    return ptr;
}

void* hop_guard_ptr(void)
{
    if (!arena_base || arena_cursor + HOP_PAGE > ARENA_RESERVE)
        return NULL;
    uint8_t* start = arena_base + arena_cursor; /* stays PROT_NONE */
    arena_cursor += HOP_PAGE;
    hop_event* ev = push_event(HOP_EV_ARENA);
    if (ev) {
        ev->a = (uint64_t)(uintptr_t)start;
        ev->b = 0;
        ev->width = 0xFFFFFFFFu;
    }
    return start;
}
