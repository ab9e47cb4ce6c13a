/* Minimal freestanding runtime for riscv64 Linux test workloads. */
#ifndef FASE_RT_H
#define FASE_RT_H

typedef unsigned long size_t;
typedef long ssize_t;
typedef unsigned long uintptr_t;

#define SYS_openat 56
#define SYS_close 57
#define SYS_pipe2 59
#define SYS_lseek 62
#define SYS_read 63
#define SYS_write 64
#define SYS_fstat 80
#define SYS_exit 93
#define SYS_exit_group 94
#define SYS_set_tid_address 96
#define SYS_futex 98
#define SYS_clock_gettime 113
#define SYS_sched_yield 124
#define SYS_tgkill 131
#define SYS_rt_sigaction 134
#define SYS_rt_sigprocmask 135
#define SYS_getpid 172
#define SYS_gettid 178
#define SYS_brk 214
#define SYS_munmap 215
#define SYS_clone 220
#define SYS_mmap 222
#define SYS_mprotect 226
#define SYS_msync 227
#define SYS_getrandom 278

#define FUTEX_WAIT 0
#define FUTEX_WAKE 1
#define FUTEX_PRIVATE 128

#define CLONE_VM 0x100
#define CLONE_FS 0x200
#define CLONE_FILES 0x400
#define CLONE_SIGHAND 0x800
#define CLONE_THREAD 0x10000
#define CLONE_SYSVSEM 0x40000
#define CLONE_PARENT_SETTID 0x100000
#define CLONE_CHILD_CLEARTID 0x200000
#define THREAD_FLAGS (CLONE_VM | CLONE_FS | CLONE_FILES | CLONE_SIGHAND | CLONE_THREAD | \
                      CLONE_SYSVSEM | CLONE_PARENT_SETTID | CLONE_CHILD_CLEARTID)

static inline long sys6(long n, long a, long b, long c, long d, long e, long f) {
    register long a0 asm("a0") = a;
    register long a1 asm("a1") = b;
    register long a2 asm("a2") = c;
    register long a3 asm("a3") = d;
    register long a4 asm("a4") = e;
    register long a5 asm("a5") = f;
    register long a7 asm("a7") = n;
    asm volatile("ecall" : "+r"(a0) : "r"(a1), "r"(a2), "r"(a3), "r"(a4), "r"(a5), "r"(a7) : "memory");
    return a0;
}
#define sys3(n, a, b, c) sys6(n, (long)(a), (long)(b), (long)(c), 0, 0, 0)

static inline ssize_t write(int fd, const void *buf, size_t n) { return sys3(SYS_write, fd, buf, n); }
static inline ssize_t read(int fd, void *buf, size_t n) { return sys3(SYS_read, fd, buf, n); }
static inline void exit_group(int code) { sys3(SYS_exit_group, code, 0, 0); for (;;) {} }
static inline long getpid(void) { return sys3(SYS_getpid, 0, 0, 0); }
static inline long gettid(void) { return sys3(SYS_gettid, 0, 0, 0); }
static inline long futex_wait(volatile int *p, int v) { return sys6(SYS_futex, (long)p, FUTEX_WAIT | FUTEX_PRIVATE, v, 0, 0, 0); }
static inline long futex_wake(volatile int *p, int n) { return sys6(SYS_futex, (long)p, FUTEX_WAKE | FUTEX_PRIVATE, n, 0, 0, 0); }
static inline void *mmap(void *a, size_t len, int prot, int flags, int fd, long off) {
    return (void *)sys6(SYS_mmap, (long)a, len, prot, flags, fd, off);
}

static size_t strlen(const char *s) { size_t n = 0; while (s[n]) n++; return n; }
static void puts1(const char *s) { write(1, s, strlen(s)); }
static void putnum(long v) {
    char buf[24]; int i = 23; int neg = v < 0; unsigned long u = neg ? -v : v;
    buf[i] = 0;
    do { buf[--i] = '0' + u % 10; u /= 10; } while (u);
    if (neg) buf[--i] = '-';
    puts1(buf + i);
}

/* fn and arg are parked on the child stack across the ecall */
long fase_clone(unsigned long flags, void *stack, int *ptid, void *tls, int *ctid,
                int (*fn)(void *), void *arg);
asm(".text\n.globl fase_clone\nfase_clone:\n"
    "  addi a1, a1, -16\n  sd a5, 0(a1)\n  sd a6, 8(a1)\n"
    "  li a7, 220\n  ecall\n  bnez a0, 1f\n"
    "  ld a1, 0(sp)\n  ld a0, 8(sp)\n  jalr a1\n  li a7, 93\n  ecall\n"
    "1: ret\n");

int main(int argc, char **argv, char **envp);
void __cstart(long *sp) {
    int argc = (int)sp[0];
    char **argv = (char **)(sp + 1);
    exit_group(main(argc, argv, argv + argc + 1));
}
asm(".text\n.globl _start\n_start:\n  mv a0, sp\n  andi sp, sp, -16\n  call __cstart\n");

static void lock(volatile int *m) {
    int c = __sync_val_compare_and_swap(m, 0, 1);
    if (c != 0) {
        if (c != 2) c = __atomic_exchange_n(m, 2, __ATOMIC_ACQUIRE);
        while (c != 0) {
            futex_wait(m, 2);
            c = __atomic_exchange_n(m, 2, __ATOMIC_ACQUIRE);
        }
    }
}

/* Always issues a wake, like aggressive-wake runtimes do. */
static void unlock(volatile int *m) {
    __atomic_exchange_n(m, 0, __ATOMIC_RELEASE);
    futex_wake(m, 1);
}

static void join(volatile int *ctid) {
    int v;
    while ((v = *ctid) != 0) futex_wait(ctid, v);
}

#endif
