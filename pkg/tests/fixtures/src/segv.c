#include "rt.h"
int main(int argc, char **argv, char **envp) {
    volatile char *p = mmap(0, 8192, 3, 0x22, -1, 0);
    p[0] = 1;
    sys3(SYS_munmap, p, 8192, 0);
    puts1("unmapped\n");
    p[0] = 2;
    return 0;
}
