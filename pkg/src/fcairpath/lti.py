"""Minimal LTI toolbox: rational transfer functions, transfer matrices and
state-space models with the handful of operations the rest of the package
needs (frequency response, 2x2 rational inversion, realization, ZOH
discretization, JSON round-tripping).

Polynomials are stored as 1-D float arrays of coefficients in descending
powers of s.  Denominators are normalized to be monic on construction, and
coefficients whose magnitude falls below ``TRIM_RTOL`` times the largest
coefficient of the same polynomial are trimmed after every operation.  No
pole/zero cancellation is attempted; orders simply grow under addition and
multiplication, which is acceptable at the sizes used here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

__all__ = [
    "TRIM_RTOL",
    "LtiError",
    "ImproperRatioError",
    "PoleAtFrequencyError",
    "SingularTransferMatrixError",
    "PolynomialRatio",
    "TransferMatrix",
    "StateSpaceModel",
    "poly_trim",
    "poly_add",
    "poly_mul",
    "series",
    "parallel",
    "invert_2x2",
    "realize",
    "discretize",
]

TRIM_RTOL = 1e-12


class LtiError(ValueError):
    """Base class for LTI-layer errors."""


class ImproperRatioError(LtiError):
    """Numerator degree exceeds denominator degree where properness is required."""


class PoleAtFrequencyError(LtiError):
    """Frequency response requested at (or numerically on top of) a pole."""


class SingularTransferMatrixError(LtiError):
    """2x2 rational matrix has a structurally zero determinant."""


# ---------------------------------------------------------------------------
# polynomial helpers
# ---------------------------------------------------------------------------

def poly_trim(c) -> np.ndarray:
    """Trim leading near-zero coefficients relative to the largest magnitude.

    Returns ``[0.0]`` for the (numerically) zero polynomial.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.ndim != 1:
        raise LtiError("polynomial coefficients must be one-dimensional")
    peak = np.max(np.abs(c)) if c.size else 0.0
    if peak == 0.0:
        return np.zeros(1)
    keep = np.abs(c) >= TRIM_RTOL * peak
    first = int(np.argmax(keep))
    out = c[first:].copy()
    # interior coefficients below the trim threshold are zeroed, not removed
    out[np.abs(out) < TRIM_RTOL * peak] = 0.0
    return out


def poly_add(a, b) -> np.ndarray:
    a = poly_trim(a)
    b = poly_trim(b)
    n = max(a.size, b.size)
    out = np.zeros(n)
    out[n - a.size:] += a
    out[n - b.size:] += b
    return poly_trim(out)


def poly_mul(a, b) -> np.ndarray:
    return poly_trim(np.polymul(poly_trim(a), poly_trim(b)))


def _poly_is_zero(c) -> bool:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return bool(np.all(c == 0.0)) or (poly_trim(c).size == 1 and poly_trim(c)[0] == 0.0)


# ---------------------------------------------------------------------------
# rational transfer function
# ---------------------------------------------------------------------------

@dataclass
class PolynomialRatio:
    """Scalar rational transfer function num(s)/den(s).

    The denominator is normalized to be monic; the numerator is rescaled
    accordingly.  A zero denominator is rejected.
    """

    num: np.ndarray
    den: np.ndarray

    def __init__(self, num, den):
        num = poly_trim(num)
        den = poly_trim(den)
        if _poly_is_zero(den):
            raise LtiError("denominator polynomial is zero")
        lead = den[0]
        self.num = poly_trim(num / lead)
        self.den = poly_trim(den / lead)

    # -- queries ----------------------------------------------------------

    @property
    def num_degree(self) -> int:
        return 0 if _poly_is_zero(self.num) else self.num.size - 1

    @property
    def den_degree(self) -> int:
        return self.den.size - 1

    def is_proper(self) -> bool:
        return _poly_is_zero(self.num) or self.num.size <= self.den.size

    def is_strictly_proper(self) -> bool:
        return _poly_is_zero(self.num) or self.num.size < self.den.size

    def poles(self) -> np.ndarray:
        return np.roots(self.den) if self.den_degree > 0 else np.zeros(0, complex)

    def zeros(self) -> np.ndarray:
        return np.roots(self.num) if self.num.size > 1 else np.zeros(0, complex)

    # -- evaluation -------------------------------------------------------

    def __call__(self, s: complex) -> complex:
        dv = np.polyval(self.den, s)
        scale = max(1.0, float(np.max(np.abs(self.den))))
        if abs(dv) < 1e-12 * scale:
            raise PoleAtFrequencyError(f"denominator vanishes at s={s!r}")
        return complex(np.polyval(self.num, s) / dv)

    def freq_response(self, omegas) -> np.ndarray:
        """Evaluate at s = j*omega for each frequency in rad/s."""
        return np.array([self(1j * float(w)) for w in np.atleast_1d(omegas)])

    def dc_gain(self) -> float:
        if abs(self.den[-1]) < 1e-12 * float(np.max(np.abs(self.den))):
            raise PoleAtFrequencyError("pole at s=0: DC gain undefined")
        val = self(0.0)
        return float(val.real)

    # -- arithmetic -------------------------------------------------------

    def __mul__(self, other: "PolynomialRatio | float") -> "PolynomialRatio":
        if isinstance(other, PolynomialRatio):
            return PolynomialRatio(poly_mul(self.num, other.num),
                                   poly_mul(self.den, other.den))
        return PolynomialRatio(self.num * float(other), self.den)

    __rmul__ = __mul__

    def __add__(self, other: "PolynomialRatio") -> "PolynomialRatio":
        return PolynomialRatio(
            poly_add(poly_mul(self.num, other.den), poly_mul(other.num, self.den)),
            poly_mul(self.den, other.den))

    def __neg__(self) -> "PolynomialRatio":
        return PolynomialRatio(-self.num, self.den)

    def __sub__(self, other: "PolynomialRatio") -> "PolynomialRatio":
        return self + (-other)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {"num": self.num.tolist(), "den": self.den.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialRatio":
        return cls(d["num"], d["den"])

    @classmethod
    def constant(cls, k: float) -> "PolynomialRatio":
        return cls([float(k)], [1.0])


# ---------------------------------------------------------------------------
# transfer matrix
# ---------------------------------------------------------------------------

@dataclass
class TransferMatrix:
    """Dense matrix of :class:`PolynomialRatio` entries."""

    entries: list  # list of lists of PolynomialRatio

    def __init__(self, entries):
        if not entries or not entries[0]:
            raise LtiError("transfer matrix must have at least one entry")
        ncols = len(entries[0])
        for row in entries:
            if len(row) != ncols:
                raise LtiError("ragged transfer matrix")
            for e in row:
                if not isinstance(e, PolynomialRatio):
                    raise LtiError("entries must be PolynomialRatio")
        self.entries = [list(row) for row in entries]

    @property
    def shape(self) -> tuple:
        return (len(self.entries), len(self.entries[0]))

    def __getitem__(self, idx) -> PolynomialRatio:
        i, j = idx
        return self.entries[i][j]

    def freq_response(self, omega: float) -> np.ndarray:
        """Complex response matrix at a single frequency (rad/s)."""
        r, c = self.shape
        out = np.empty((r, c), dtype=complex)
        for i in range(r):
            for j in range(c):
                out[i, j] = self.entries[i][j](1j * float(omega))
        return out

    def dc_gain(self) -> np.ndarray:
        r, c = self.shape
        out = np.empty((r, c))
        for i in range(r):
            for j in range(c):
                out[i, j] = self.entries[i][j].dc_gain()
        return out

    def to_dict(self) -> dict:
        return {"entries": [[e.to_dict() for e in row] for row in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "TransferMatrix":
        return cls([[PolynomialRatio.from_dict(e) for e in row]
                    for row in d["entries"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TransferMatrix":
        return cls.from_dict(json.loads(text))

    @classmethod
    def identity(cls, n: int) -> "TransferMatrix":
        one = PolynomialRatio.constant(1.0)
        zero = PolynomialRatio.constant(0.0)
        return cls([[one if i == j else zero for j in range(n)] for i in range(n)])

    @classmethod
    def diagonal(cls, diag_entries) -> "TransferMatrix":
        n = len(diag_entries)
        zero = PolynomialRatio.constant(0.0)
        return cls([[diag_entries[i] if i == j else zero for j in range(n)]
                    for i in range(n)])


def series(first: TransferMatrix, second: TransferMatrix) -> TransferMatrix:
    """Cascade ``first`` then ``second``; the result is ``second @ first``."""
    rf, cf = first.shape
    rs, cs = second.shape
    if cs != rf:
        raise LtiError(f"series dimension mismatch: {second.shape} after {first.shape}")
    out = []
    for i in range(rs):
        row = []
        for j in range(cf):
            acc = PolynomialRatio.constant(0.0)
            for k in range(cs):
                acc = acc + second[i, k] * first[k, j]
            row.append(acc)
        out.append(row)
    return TransferMatrix(out)


def parallel(a: TransferMatrix, b: TransferMatrix) -> TransferMatrix:
    """Entrywise sum of two transfer matrices of identical shape."""
    if a.shape != b.shape:
        raise LtiError(f"parallel shape mismatch: {a.shape} vs {b.shape}")
    r, c = a.shape
    return TransferMatrix([[a[i, j] + b[i, j] for j in range(c)] for i in range(r)])


def invert_2x2(g: TransferMatrix) -> TransferMatrix:
    """Exact rational inverse of a 2x2 transfer matrix via the adjugate.

    Raises :class:`SingularTransferMatrixError` when the determinant
    numerator trims to the zero polynomial (structural singularity).
    """
    if g.shape != (2, 2):
        raise LtiError(f"invert_2x2 requires shape (2, 2), got {g.shape}")
    n11, d11 = g[0, 0].num, g[0, 0].den
    n12, d12 = g[0, 1].num, g[0, 1].den
    n21, d21 = g[1, 0].num, g[1, 0].den
    n22, d22 = g[1, 1].num, g[1, 1].den
    # det = (n11 n22 d12 d21 - n12 n21 d11 d22) / (d11 d22 d12 d21)
    det_num = poly_add(
        poly_mul(poly_mul(n11, n22), poly_mul(d12, d21)),
        -poly_mul(poly_mul(n12, n21), poly_mul(d11, d22)))
    if _poly_is_zero(det_num):
        raise SingularTransferMatrixError("determinant numerator is zero")
    inv11 = PolynomialRatio(poly_mul(n22, poly_mul(d11, poly_mul(d12, d21))), det_num)
    inv12 = PolynomialRatio(-poly_mul(n12, poly_mul(d11, poly_mul(d21, d22))), det_num)
    inv21 = PolynomialRatio(-poly_mul(n21, poly_mul(d11, poly_mul(d12, d22))), det_num)
    inv22 = PolynomialRatio(poly_mul(n11, poly_mul(d22, poly_mul(d12, d21))), det_num)
    return TransferMatrix([[inv11, inv12], [inv21, inv22]])


def determinant_numerator_2x2(g: TransferMatrix) -> np.ndarray:
    """Numerator polynomial of det(g) for a 2x2 rational matrix."""
    if g.shape != (2, 2):
        raise LtiError(f"expected shape (2, 2), got {g.shape}")
    n11, d11 = g[0, 0].num, g[0, 0].den
    n12, d12 = g[0, 1].num, g[0, 1].den
    n21, d21 = g[1, 0].num, g[1, 0].den
    n22, d22 = g[1, 1].num, g[1, 1].den
    return poly_add(
        poly_mul(poly_mul(n11, n22), poly_mul(d12, d21)),
        -poly_mul(poly_mul(n12, n21), poly_mul(d11, d22)))


# ---------------------------------------------------------------------------
# state space
# ---------------------------------------------------------------------------

@dataclass
class StateSpaceModel:
    """State-space model (A, B, C, D) with sample time ``ts``.

    ``ts = 0`` marks a continuous-time model; ``ts > 0`` a discrete-time
    model with that sample period in seconds.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    ts: float = 0.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise LtiError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n and not (n == 0 and self.B.size == 0):
            raise LtiError(f"B row count {self.B.shape[0]} != state dim {n}")
        if self.C.shape[1] != n and not (n == 0 and self.C.size == 0):
            raise LtiError(f"C column count {self.C.shape[1]} != state dim {n}")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise LtiError(
                f"D shape {self.D.shape} inconsistent with C/B "
                f"({self.C.shape[0]}x{self.B.shape[1]} expected)")
        if self.ts < 0:
            raise LtiError("ts must be >= 0")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def poles(self) -> np.ndarray:
        if self.n_states == 0:
            return np.zeros(0, dtype=complex)
        return np.linalg.eigvals(self.A)

    def is_stable(self, margin: float = 0.0) -> bool:
        p = self.poles()
        if p.size == 0:
            return True
        if self.ts == 0.0:
            return bool(np.all(p.real < -margin))
        return bool(np.all(np.abs(p) < 1.0 - margin))

    def freq_response(self, omega: float) -> np.ndarray:
        """Response C (sI - A)^-1 B + D at s = j*omega (continuous) or
        z = exp(j*omega*ts) (discrete)."""
        if self.n_states == 0:
            return self.D.astype(complex)
        if self.ts == 0.0:
            s = 1j * float(omega)
        else:
            s = np.exp(1j * float(omega) * self.ts)
        try:
            x = np.linalg.solve(s * np.eye(self.n_states) - self.A, self.B)
        except np.linalg.LinAlgError as exc:
            raise PoleAtFrequencyError(f"response singular at omega={omega}") from exc
        return self.C @ x + self.D

    def dc_gain(self) -> np.ndarray:
        if self.n_states == 0:
            return self.D.copy()
        eye = np.eye(self.n_states)
        mat = -self.A if self.ts == 0.0 else eye - self.A
        try:
            x = np.linalg.solve(mat, self.B)
        except np.linalg.LinAlgError as exc:
            raise PoleAtFrequencyError("pole at DC: gain undefined") from exc
        return self.C @ x + self.D

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(),
                "C": self.C.tolist(), "D": self.D.tolist(), "ts": self.ts}

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpaceModel":
        return cls(np.array(d["A"], dtype=float).reshape(len(d["A"]), -1)
                   if d["A"] else np.zeros((0, 0)),
                   np.array(d["B"], dtype=float).reshape(len(d["B"]), -1)
                   if d["B"] else np.zeros((0, len(d["D"][0]) if d["D"] else 0)),
                   np.array(d["C"], dtype=float).reshape(len(d["C"]), -1),
                   np.array(d["D"], dtype=float).reshape(len(d["D"]), -1),
                   float(d["ts"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "StateSpaceModel":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# realization
# ---------------------------------------------------------------------------

def _unique_denominators(ratios) -> list:
    """Distinct denominators (monic, trimmed) among the given ratios."""
    uniques = []
    for r in ratios:
        if not any(d.size == r.den.size and np.allclose(d, r.den, rtol=1e-12, atol=0.0)
                   for d in uniques):
            uniques.append(r.den)
    return uniques


def realize(g: TransferMatrix) -> StateSpaceModel:
    """Stacked per-column controllable-canonical realization.

    Each column uses the product of its distinct entry denominators as a
    common denominator; the column block is a controllable-canonical form of
    that polynomial.  No minimality reduction is applied, so the state order
    is bounded by the sum of column common-denominator degrees.  Raises
    :class:`ImproperRatioError` if any entry is improper, naming the entry.
    """
    nrows, ncols = g.shape
    col_blocks = []  # (A_block, c_rows) per column with dynamic order > 0
    col_order = []
    D = np.zeros((nrows, ncols))
    for j in range(ncols):
        col = [g[i, j] for i in range(nrows)]
        uniques = _unique_denominators(col)
        colden = np.ones(1)
        for d in uniques:
            colden = poly_mul(colden, d)
        n = colden.size - 1
        c_rows = np.zeros((nrows, n))
        for i in range(nrows):
            e = col[i]
            if not e.is_proper():
                raise ImproperRatioError(
                    f"entry ({i}, {j}) is improper "
                    f"(num degree {e.num_degree} > den degree {e.den_degree})")
            # multiply numerator by the other unique denominators so the
            # entry shares the column denominator without any division
            num_aug = e.num
            matched = False
            for d in uniques:
                if (not matched and d.size == e.den.size
                        and np.allclose(d, e.den, rtol=1e-12, atol=0.0)):
                    matched = True
                    continue
                num_aug = poly_mul(num_aug, d)
            if num_aug.size - 1 > n:
                raise ImproperRatioError(
                    f"entry ({i}, {j}) improper against column denominator")
            if num_aug.size - 1 == n and not _poly_is_zero(num_aug):
                D[i, j] = num_aug[0] / colden[0]
                num_aug = poly_add(num_aug, -D[i, j] * colden)
            if n > 0 and not _poly_is_zero(num_aug):
                # ascending state order: num = b1 s^(n-1) + ... + bn
                padded = np.zeros(n)
                padded[n - num_aug.size:] = num_aug
                c_rows[i, :] = padded[::-1]
        col_order.append(n)
        if n > 0:
            Ab = np.zeros((n, n))
            if n > 1:
                Ab[:-1, 1:] = np.eye(n - 1)
            Ab[-1, :] = -colden[1:][::-1]
            col_blocks.append((Ab, c_rows))
        else:
            col_blocks.append(None)
    ntot = sum(col_order)
    A = np.zeros((ntot, ntot))
    B = np.zeros((ntot, ncols))
    C = np.zeros((nrows, ntot))
    pos = 0
    for j in range(ncols):
        n = col_order[j]
        if n == 0:
            continue
        Ab, c_rows = col_blocks[j]
        A[pos:pos + n, pos:pos + n] = Ab
        B[pos + n - 1, j] = 1.0
        C[:, pos:pos + n] = c_rows
        pos += n
    return StateSpaceModel(A, B, C, D, ts=0.0)


def discretize(ss: StateSpaceModel, ts: float) -> StateSpaceModel:
    """Zero-order-hold discretization via the augmented matrix exponential."""
    if ss.ts != 0.0:
        raise LtiError("discretize expects a continuous-time model")
    if ts <= 0:
        raise LtiError("sample time must be positive")
    n, m = ss.n_states, ss.n_inputs
    if n == 0:
        return StateSpaceModel(np.zeros((0, 0)), np.zeros((0, m)),
                               ss.C.copy(), ss.D.copy(), ts=ts)
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = ss.A
    aug[:n, n:] = ss.B
    phi = expm(aug * ts)
    return StateSpaceModel(phi[:n, :n], phi[:n, n:], ss.C.copy(), ss.D.copy(), ts=ts)
