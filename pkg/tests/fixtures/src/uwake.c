#include "rt.h"
static volatile int word;
int main(int argc, char **argv, char **envp) {
    int n = 0;
    for (const char *s = argc > 1 ? argv[1] : "10"; *s; s++) n = n * 10 + (*s - '0');
    long woken = 0;
    for (int i = 0; i < n; i++) woken += futex_wake(&word, 1);
    puts1("woken=");
    putnum(woken);
    puts1("\n");
    return woken == 0 ? 0 : 1;
}
