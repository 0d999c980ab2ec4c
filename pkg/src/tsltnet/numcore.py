"""Dense 2-D matrix arithmetic and a deterministic seeded random source.

Every higher layer of the package builds on these primitives. Matrices are
row-major float64 buffers; the random source is a splitmix64 counter
generator (never the interpreter's own RNG), so identical seeds give
identical streams on every platform. Bulk work is dispatched to the active
kernel backend.
"""

from __future__ import annotations

from array import array
from typing import Iterable, Sequence

from .backend import kernels

_M64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2POW53 = 1.0 / 9007199254740992.0


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


class EmptyInputError(ValueError):
    """Raised when an operation requires at least one row."""


def zeros_buf(n: int) -> array:
    """A zero-filled float64 buffer of length n."""
    return array("d", bytes(8 * n))


class Matrix:
    """Row-major float64 matrix.

    ``data`` always has length ``rows * cols`` and, after any public
    operation, contains only finite values unless the operation says
    otherwise.
    """

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, data: array | None = None):
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative dimensions ({rows}, {cols})")
        if data is None:
            data = zeros_buf(rows * cols)
        elif not isinstance(data, array) or data.typecode != "d":
            data = array("d", data)
        if len(data) != rows * cols:
            raise ShapeError(
                f"buffer length {len(data)} does not match shape ({rows}, {cols})"
            )
        self.rows = rows
        self.cols = cols
        self.data = data

    # -- constructors -------------------------------------------------

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(rows, cols)

    @classmethod
    def full(cls, rows: int, cols: int, value: float) -> "Matrix":
        return cls(rows, cols, array("d", [value] * (rows * cols)))

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        m = cls.zeros(n, n)
        for i in range(n):
            m.data[i * n + i] = 1.0
        return m

    @classmethod
    def from_rows(cls, rows: Sequence[Iterable[float]]) -> "Matrix":
        rows = [list(r) for r in rows]
        n = len(rows)
        m = len(rows[0]) if n else 0
        flat = array("d", bytes(0))
        for i, r in enumerate(rows):
            if len(r) != m:
                raise ShapeError(f"row {i} has {len(r)} entries, expected {m}")
            flat.extend(r)
        return cls(n, m, flat)

    # -- access --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def __getitem__(self, key: tuple[int, int]) -> float:
        i, j = key
        return self.data[i * self.cols + j]

    def __setitem__(self, key: tuple[int, int], value: float) -> None:
        i, j = key
        self.data[i * self.cols + j] = value

    def row(self, i: int) -> list[float]:
        return list(self.data[i * self.cols : (i + 1) * self.cols])

    def tolist(self) -> list[list[float]]:
        return [self.row(i) for i in range(self.rows)]

    def copy(self) -> "Matrix":
        return Matrix(self.rows, self.cols, array("d", self.data))

    def reshaped(self, rows: int, cols: int) -> "Matrix":
        """Reinterpret the same row-major buffer under a new shape (no copy)."""
        if rows * cols != self.rows * self.cols:
            raise ShapeError(
                f"cannot view shape ({self.rows}, {self.cols}) as ({rows}, {cols})"
            )
        return Matrix(rows, cols, self.data)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.data == other.data
        )

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


# ---------------------------------------------------------------------------
# public matrix operations
# ---------------------------------------------------------------------------

def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product a @ b."""
    if a.cols != b.rows:
        raise ShapeError(
            f"matmul shape mismatch: ({a.rows}, {a.cols}) x ({b.rows}, {b.cols})"
        )
    out = Matrix.zeros(a.rows, b.cols)
    kernels.bmm(a.data, b.data, out.data, 1, a.rows, a.cols, b.cols, False, False)
    return out


def rowwise_softmax(m: Matrix) -> Matrix:
    """Softmax over each row, computed with max subtraction; rows sum to 1."""
    out = Matrix.zeros(m.rows, m.cols)
    kernels.rowwise_softmax(m.data, out.data, m.rows, m.cols)
    return out


def mean_over_rows(m: Matrix) -> Matrix:
    """Column-wise arithmetic mean, as a 1 x cols matrix."""
    if m.rows == 0:
        raise EmptyInputError("mean_over_rows needs at least one row")
    out = Matrix.zeros(1, m.cols)
    kernels.block_mean_rows(m.data, out.data, 1, m.rows, m.cols)
    return out


def transpose(m: Matrix) -> Matrix:
    out = Matrix.zeros(m.cols, m.rows)
    for i in range(m.rows):
        base = i * m.cols
        for j in range(m.cols):
            out.data[j * m.rows + i] = m.data[base + j]
    return out


def elementwise_add(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Matrix.zeros(a.rows, a.cols)
    kernels.add(a.data, b.data, out.data, len(a.data))
    return out


def add_bias(x: Matrix, bias: Matrix) -> Matrix:
    """Broadcast-add a 1 x cols bias row to every row of x."""
    if bias.rows != 1 or bias.cols != x.cols:
        raise ShapeError(f"bias shape {bias.shape} does not broadcast over {x.shape}")
    out = Matrix.zeros(x.rows, x.cols)
    kernels.add_row_vec(x.data, bias.data, out.data, x.rows, x.cols)
    return out


# ---------------------------------------------------------------------------
# deterministic random source
# ---------------------------------------------------------------------------

def _mix64(z: int) -> int:
    z ^= z >> 30
    z = (z * _MIX1) & _M64
    z ^= z >> 27
    z = (z * _MIX2) & _M64
    return z ^ (z >> 31)


class RandSource:
    """Deterministic splitmix64 stream.

    The state is a plain 64-bit counter advanced by a fixed odd constant;
    each output is a finalizer hash of the counter. The raw integer stream
    is exactly reproducible across platforms and across both kernel
    backends. Single-consumer: one source must not be drawn from
    concurrently.
    """

    __slots__ = ("seed", "_state")

    def __init__(self, seed: int):
        self.seed = seed & _M64
        self._state = self.seed

    def derive(self, tag: int) -> "RandSource":
        """A decoupled child stream; distinct tags give distinct streams."""
        return RandSource(_mix64((self.seed ^ (tag * _GAMMA)) & _M64))

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _M64
        return _mix64(self._state)

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2POW53

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Box-Muller normal draw; consumes exactly two uniforms."""
        buf = array("d", [0.0])
        self._state = kernels.fill_normal(buf, 1, self._state, mean, std)
        return buf[0]

    def randint_below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randint_below needs n >= 1")
        limit = (_M64 + 1) - ((_M64 + 1) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint_below(i + 1)
            items[i], items[j] = items[j], items[i]

    # -- bulk fills (kernel-backed, stream-compatible with the scalar API) --

    def fill_uniform(self, buf: array) -> None:
        self._state = kernels.fill_uniform(buf, len(buf), self._state)

    def fill_normal(self, buf: array, mean: float = 0.0, std: float = 1.0) -> None:
        self._state = kernels.fill_normal(buf, len(buf), self._state, mean, std)

    def dropout(self, x: array, out: array, mask: array, rate: float) -> None:
        self._state = kernels.dropout_fwd(x, out, mask, len(x), rate, self._state)
