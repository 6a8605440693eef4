"""SplitMix64, shared bit-for-bit by the compiled kernel and its Python twin.

numpy's generators cannot be driven from the compiled episode loop without a
round trip through Python, so both backends step this 64-bit state directly.
"""
from __future__ import annotations

MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


def next_u64(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN) & MASK
    z = state
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return state, z ^ (z >> 31)


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = seed & MASK

    def next_u64(self) -> int:
        self.state, z = next_u64(self.state)
        return z

    def random(self) -> float:
        return (self.next_u64() >> 11) * _INV53

    def randbelow(self, n: int) -> int:
        return int(self.random() * n)

    def spawn(self) -> "SplitMix64":
        """An independent stream seeded from this one."""
        return SplitMix64(self.next_u64())

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
