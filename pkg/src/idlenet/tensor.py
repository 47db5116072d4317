"""Dense rank-4 tensor container and the MAC-counting execution context.

Tensor4 is the single activation/weight container used everywhere: batch,
channel, row, column order, 64-bit reals, C-contiguous. Instances are
immutable after construction (the underlying buffer is marked read-only), so
values can be shared freely between threads.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor4", "ExecContext"]


class Tensor4:
    """Immutable (n, c, h, w) array of float64 in row-major order."""

    __slots__ = ("arr",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(f"Tensor4 requires a rank-4 array, got rank {arr.ndim}")
        if any(d < 1 for d in arr.shape):
            raise ValueError(f"all dimensions must be >= 1, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        if arr is values or (isinstance(values, np.ndarray) and arr.base is values):
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "arr", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor4":
        """Adopt a freshly allocated C-contiguous float64 array without copying.

        Internal fast path for op outputs; the caller must not keep a writable
        reference to ``arr``.
        """
        t = object.__new__(cls)
        arr.flags.writeable = False
        object.__setattr__(t, "arr", arr)
        return t

    @classmethod
    def zeros(cls, n: int, c: int, h: int, w: int) -> "Tensor4":
        return cls._wrap(np.zeros((n, c, h, w), dtype=np.float64))

    @classmethod
    def full(cls, n: int, c: int, h: int, w: int, value: float) -> "Tensor4":
        return cls._wrap(np.full((n, c, h, w), float(value), dtype=np.float64))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.arr.shape

    @property
    def n(self) -> int:
        return self.arr.shape[0]

    @property
    def c(self) -> int:
        return self.arr.shape[1]

    @property
    def h(self) -> int:
        return self.arr.shape[2]

    @property
    def w(self) -> int:
        return self.arr.shape[3]

    @property
    def data(self) -> np.ndarray:
        """Flat read-only view in n -> c -> h -> w order."""
        return self.arr.reshape(-1)

    def __repr__(self) -> str:
        return f"Tensor4(shape={self.arr.shape})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Tensor4) and np.array_equal(self.arr, other.arr)

    def __hash__(self):
        return id(self)


class ExecContext:
    """Per-execution MAC accumulator.

    The counter is bumped once per convolution/dense call by the closed-form
    count of that call; permutation and elementwise ops contribute nothing.
    A context must not be shared by concurrent executions.
    """

    __slots__ = ("mac_counter", "counting_enabled")

    def __init__(self, counting_enabled: bool = True):
        self.mac_counter: int = 0
        self.counting_enabled = counting_enabled

    def add_macs(self, macs: int) -> None:
        if macs < 0:
            raise ValueError("MAC increments must be non-negative")
        if self.counting_enabled:
            self.mac_counter += int(macs)

    def reset(self) -> None:
        self.mac_counter = 0
