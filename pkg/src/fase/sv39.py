"""Sv39 page-table entry layout shared by the walker and the host materializer."""

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT
LEVELS = 3
VPN_BITS = 9
SATP_MODE_BARE = 0
SATP_MODE_SV39 = 8

PTE_V = 1 << 0
PTE_R = 1 << 1
PTE_W = 1 << 2
PTE_X = 1 << 3
PTE_U = 1 << 4
PTE_G = 1 << 5
PTE_A = 1 << 6
PTE_D = 1 << 7

PTE_PPN_SHIFT = 10
PPN_MASK = (1 << 44) - 1


def make_satp(root_ppn: int, asid: int = 0) -> int:
    return (SATP_MODE_SV39 << 60) | ((asid & 0xFFFF) << 44) | (root_ppn & PPN_MASK)


def satp_root(satp: int) -> int:
    return satp & PPN_MASK


def make_pte(ppn: int, flags: int) -> int:
    return ((ppn & PPN_MASK) << PTE_PPN_SHIFT) | flags


def pte_ppn(pte: int) -> int:
    return (pte >> PTE_PPN_SHIFT) & PPN_MASK


def vpn_index(vaddr: int, level: int) -> int:
    return (vaddr >> (PAGE_SHIFT + VPN_BITS * level)) & 0x1FF


def is_canonical(vaddr: int) -> bool:
    top = vaddr >> 38
    return top == 0 or top == (1 << 26) - 1
