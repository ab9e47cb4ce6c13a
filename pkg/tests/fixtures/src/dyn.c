#include "rt.h"
int main(int argc, char **argv, char **envp) {
    puts1("dyn ok\n");
    return 0;
}
