/* Build sanity check for the instrumented demo library: exercises every
 * function on the happy path and verifies hook events land in the feedback
 * area. Crash paths are the fuzzer's business, not this smoke test's.
 */
#include "hop_shim.h"

#include <stdio.h>
#include <string.h>

typedef struct codec codec_t;
codec_t* codec_open(void);
int codec_close(codec_t* c);
int codec_version(void);
int codec_decode(const char* buf, int len);
int codec_encode(codec_t* c, int mode);
int codec_load(const char* path);

static int failures;

#define CHECK(cond) do { \
    if (!(cond)) { \
        fprintf(stderr, "FAIL %s:%d: %s\n", __FILE__, __LINE__, #cond); \
        failures++; \
    } \
} while (0)

int main(void)
{
    CHECK(hop_shim_init("/tmp/hop_selftest_area") == 0);
    hop_child_begin();
    hop_set_context(0x1234u, 1);

    CHECK(codec_version() == 0x0103);

    codec_t* c = codec_open();
    CHECK(c != NULL);
    CHECK(codec_encode(c, 3) == 0);
    CHECK(codec_close(c) == 1);

    char* buf = hop_arena_alloc(4, 0);
    CHECK(buf != NULL);
    memcpy(buf, "\x01\x02\x03\x04", 4);
    CHECK(codec_decode(buf, 4) == 10);
    CHECK(codec_decode(NULL, 4) == -1);
    CHECK(codec_decode(buf, 0) == 0);

    CHECK(codec_load("no_such_file") == 0);

    hop_child_finish(HOP_EXIT_OK, "");
    if (failures == 0)
        printf("selftest: all checks passed\n");
    return failures == 0 ? 0 : 1;
}
