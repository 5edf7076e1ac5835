/* demo_codec: a tiny buffer codec used to prove the foreign-function
 * backend end to end.
 *
 * Two seeded defects:
 *   - codec_decode trusts its len argument and reads past the buffer;
 *   - codec_close dereferences the handle without a null check.
 *
 * Instrumentation is hand-inserted hop_* calls with literal branch sites.
 */
#include "hop_shim.h"

#include <stdio.h>
#include <stdlib.h>

typedef struct codec {
    int mode;
    int count;
} codec_t;

codec_t* codec_open(void)
{
    hop_branch(10);
    codec_t* c = malloc(sizeof(codec_t));
    if (!c) {
        hop_branch(11);
        return NULL;
    }
    hop_alloc(c, sizeof(codec_t));
    c->mode = 0;
    c->count = 0;
    hop_branch(12);
    return c;
}

int codec_close(codec_t* c)
{
    hop_branch(30);
    int n = c->count; /* no null check */
    hop_free(c);
    free(c);
    hop_branch(31);
    return n;
}

int codec_version(void)
{
    hop_branch(20);
    return 0x0103;
}

int codec_decode(const char* buf, int len)
{
    hop_branch(40);
    if (!buf) {
        hop_branch(41);
        return -1;
    }
    if (len <= 0) {
        hop_branch(42);
        return 0;
    }
    hop_branch(43);
    int sum = 0;
    for (int i = 0; i < len; i++) /* trusts len: overflow when too large */
        sum += (unsigned char)buf[i];
    hop_cmp((uint64_t)sum, 0x5A5A, 32);
    if (sum == 0x5A5A) {
        hop_branch(44);
        return 1;
    }
    hop_branch(45);
    return sum;
}

int codec_encode(codec_t* c, int mode)
{
    hop_branch(50);
    if (!c) {
        hop_branch(51);
        return -1;
    }
    c->mode = mode;
    c->count++;
    if (mode > 0) {
        hop_branch(52);
    } else {
        hop_branch(53);
    }
    return 0;
}

int codec_load(const char* path)
{
    hop_branch(60);
    if (!path) {
        hop_branch(61);
        return -1;
    }
    hop_fopen(path);
    FILE* f = fopen(path, "rb");
    if (!f) {
        hop_branch(62);
        return 0;
    }
    hop_branch(63);
    int first = fgetc(f);
    fclose(f);
    if (first == 0x42) {
        hop_branch(64);
        return 2;
    }
    hop_branch(65);
    return 1;
}
