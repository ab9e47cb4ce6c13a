#include "rt.h"
/* initialized data followed by bss, both written: exercises COW and lazy zero */
static long table[600] = {1, 2, 3};
static long zeros[3000];
int main(int argc, char **argv, char **envp) {
    long sum = 0;
    for (int i = 0; i < 600; i++) table[i] += i;
    for (int i = 0; i < 3000; i++) { sum += zeros[i]; zeros[i] = i; }
    for (int i = 0; i < 600; i++) sum += table[i];
    for (int i = 0; i < 3000; i++) sum += zeros[i];
    putnum(sum);
    puts1("\n");
    return 0;
}
