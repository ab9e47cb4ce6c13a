#include "rt.h"
static volatile int tid_reader, tid_busy;
static char stacks[2][16384] __attribute__((aligned(16)));
static char buf[64];
static volatile long got;

static int reader(void *arg) {
    got = read(0, buf, sizeof(buf));
    return 0;
}
static int busy(void *arg) {
    for (int i = 0; i < 50; i++) getpid();
    puts1("busy done\n");
    return 0;
}
int main(int argc, char **argv, char **envp) {
    fase_clone(THREAD_FLAGS, stacks[0] + 16384, (int *)&tid_reader, 0, (int *)&tid_reader, reader, 0);
    fase_clone(THREAD_FLAGS, stacks[1] + 16384, (int *)&tid_busy, 0, (int *)&tid_busy, busy, 0);
    join(&tid_busy);
    join(&tid_reader);
    puts1("read: ");
    if (got > 0) write(1, buf, got);
    return got > 0 ? 0 : 1;
}
