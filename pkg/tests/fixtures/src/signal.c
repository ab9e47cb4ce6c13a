#include "rt.h"
#define SIGUSR1 10
struct ksigaction { void (*handler)(int); unsigned long flags; unsigned long mask; };
static volatile int hits;
static void on_usr1(int sig) { if (sig == SIGUSR1) hits++; }
int main(int argc, char **argv, char **envp) {
    struct ksigaction sa = { on_usr1, 0, 0 };
    if (sys6(SYS_rt_sigaction, SIGUSR1, (long)&sa, 0, 8, 0, 0) != 0) return 4;
    long pid = getpid(), tid = gettid();
    for (int i = 0; i < 3; i++) {
        long r = sys3(SYS_tgkill, pid, tid, SIGUSR1);
        if (r != 0) return 5;
    }
    puts1("hits=");
    putnum(hits);
    puts1("\n");
    return hits == 3 ? 0 : 1;
}
