"""The seven candidate detector shapes derived from a feature-vector size."""

from __future__ import annotations

from dataclasses import dataclass

# N=4 must yield the "4,4,2"/"4,4,4,2"/"4,8,4,2" family, i.e. B=8.
MIN_B = 8


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_dim: int
    hidden_sizes: tuple[int, ...]

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_sizes, 2)

    @classmethod
    def from_dims(cls, dims) -> "ArchitectureSpec":
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2 or dims[-1] != 2:
            raise ValueError(f"architecture must end in 2 outputs: {dims}")
        return cls(format_name(dims), dims[0], dims[1:-1])

    @classmethod
    def parse(cls, name: str) -> "ArchitectureSpec":
        return cls.from_dims(int(tok) for tok in name.replace(" ", "").split(","))


def format_name(dims) -> str:
    return ",".join(str(int(d)) for d in dims)


def nearest_pow2(n: int) -> int:
    """Power of two closest to ``n``; ties go up, result is at least ``MIN_B``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lo = 1 << (n.bit_length() - 1)
    hi = lo << 1 if lo != n else lo
    b = hi if (hi - n) <= (n - lo) else lo
    return max(b, MIN_B)


def synthesize(n: int) -> list[ArchitectureSpec]:
    b = nearest_pow2(n)
    hidden = [(), (b // 2,), (b,), (2 * b,), (b // 2, b // 2), (b, b // 2), (2 * b, b // 2)]
    return [ArchitectureSpec.from_dims((n, *h, 2)) for h in hidden]
