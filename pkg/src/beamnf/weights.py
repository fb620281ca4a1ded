"""Weight sequences object and norms on truncated sequence spaces.

Modes live on the symmetric window [-M, M].  Two weight families are
supported on that window:

* Sobolev            w_j = max(2,|j|)^p
* sub-exponential    w_j = max(2,|j|)^p * exp(s * lam(j, q))

where lam(y) = (ln(2 + max(1,|y|)))^q with 1 < q <= 2.  The
sub-exponential family sits strictly between Sobolev and Gevrey decay.

All values are immutable after construction and safe for concurrent
reads.  Weights are evaluated lazily from the formula; nothing is
tabulated per cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Tuple, Union

import numpy as np
from scipy.special import zeta

from .errors import DimensionError, ValidationError

IndexLike = Union[Mapping[int, int], Iterable[Tuple[int, int]]]


def index_pairs(obj: IndexLike):
    """Normalize a sparse multi-index to an iterable of (mode, exponent)."""
    if hasattr(obj, "items"):
        return obj.items()
    return obj


def clipped_abs(j, floor: int = 1):
    """max(floor, |j|), elementwise on arrays."""
    return np.maximum(floor, np.abs(j))


def lam(j, q: float):
    """Sub-logarithmic exponent (ln(2 + max(1,|j|)))^q; even in j.

    Requires q in (1, 2].  Sub-linear on the nonnegative integers:
    lam(a+b) <= lam(a) + lam(b).
    """
    if not 1.0 < q <= 2.0:
        raise ValidationError(f"q must lie in (1, 2], got {q}")
    return np.log(2.0 + clipped_abs(j)) ** q


class WeightKind(Enum):
    SUBEXP = "subexp"
    SOBOLEV = "sobolev"


@dataclass(frozen=True)
class Weight:
    """Weight sequence w_j on the mode window [-M, M].

    Use the :meth:`subexp` / :meth:`sobolev` constructors; the plain
    constructor validates but does not fill defaults.
    """

    kind: WeightKind
    p: float
    M: int
    s: float = 0.0
    q: float = 2.0

    def __post_init__(self):
        if self.p <= 0.5:
            raise ValidationError(f"p must exceed 1/2, got {self.p}")
        if self.M < 1 or int(self.M) != self.M:
            raise ValidationError(f"M must be a positive integer, got {self.M}")
        if self.kind is WeightKind.SUBEXP:
            if self.s < 0:
                raise ValidationError(f"s must be nonnegative, got {self.s}")
            if not 1.0 < self.q <= 2.0:
                raise ValidationError(f"q must lie in (1, 2], got {self.q}")

    @classmethod
    def subexp(cls, s: float, p: float, q: float, M: int) -> "Weight":
        return cls(kind=WeightKind.SUBEXP, p=p, M=M, s=s, q=q)

    @classmethod
    def sobolev(cls, p: float, M: int) -> "Weight":
        return cls(kind=WeightKind.SOBOLEV, p=p, M=M)

    def log_value(self, j):
        """ln w_j, elementwise; the stable primitive for products of weights."""
        out = self.p * np.log(clipped_abs(j, 2))
        if self.kind is WeightKind.SUBEXP and self.s > 0:
            out = out + self.s * lam(j, self.q)
        return out

    def __call__(self, j):
        return np.exp(self.log_value(j))

    def values(self) -> np.ndarray:
        """w_j for j = -M..M as an array of length 2M + 1."""
        return self(np.arange(-self.M, self.M + 1))

    def same_window(self, other: "Weight") -> bool:
        return self.M == other.M


@dataclass(frozen=True, eq=False)
class SeqState:
    """Complex coefficients u_j on the window [-M, M].

    Index i of the backing array corresponds to mode j = i - M.
    """

    coeff: np.ndarray
    M: int

    def __post_init__(self):
        arr = np.asarray(self.coeff, dtype=complex)
        if arr.shape != (2 * self.M + 1,):
            raise DimensionError(
                f"coefficient array has shape {arr.shape}, expected ({2 * self.M + 1},)"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "coeff", arr)

    @classmethod
    def zero(cls, M: int) -> "SeqState":
        return cls(np.zeros(2 * M + 1, dtype=complex), M)

    @classmethod
    def basis(cls, M: int, j: int, value: complex = 1.0) -> "SeqState":
        u = np.zeros(2 * M + 1, dtype=complex)
        u[j + M] = value
        return cls(u, M)

    @classmethod
    def from_modes(cls, M: int, entries: Mapping[int, complex]) -> "SeqState":
        u = np.zeros(2 * M + 1, dtype=complex)
        for j, val in entries.items():
            if abs(j) > M:
                raise DimensionError(f"mode {j} outside window [-{M}, {M}]")
            u[j + M] = val
        return cls(u, M)

    def __getitem__(self, j: int) -> complex:
        return complex(self.coeff[j + self.M])

    def modes(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)


def seq_norm(u: SeqState, w: Weight) -> float:
    """Weighted l2 norm sqrt(sum w_j^2 |u_j|^2)."""
    if u.M != w.M:
        raise DimensionError(f"cutoff mismatch: state M={u.M}, weight M={w.M}")
    wv = w.values()
    return float(np.sqrt(np.sum((wv * np.abs(u.coeff)) ** 2)))


def convolve(f: SeqState, g: SeqState) -> SeqState:
    """Index-sum convolution (f*g)_j = sum_{j1+j2=j} f_{j1} g_{j2}.

    The result is truncated to the shared window [-M, M]; that
    truncation is the deterministic desk-scale shadow of the full line.
    """
    if f.M != g.M:
        raise DimensionError(f"cutoff mismatch: {f.M} vs {g.M}")
    M = f.M
    full = np.convolve(f.coeff, g.coeff)  # length 4M+1, center index 2M
    return SeqState(full[M : 3 * M + 1], M)


def coeff_c(j: int, alpha: IndexLike, beta: IndexLike, r: float, w: Weight) -> float:
    """Norm coefficient c^(j)_{r,w}(alpha, beta) = r^(|a|+|b|-2) w_j^2 / w^(a+b).

    Computed in log space; the denominator overflows for moderate
    degrees at large s.
    """
    return math.exp(log_coeff_c(j, alpha, beta, r, w))


def log_coeff_c(j: int, alpha: IndexLike, beta: IndexLike, r: float, w: Weight) -> float:
    if r <= 0:
        raise ValidationError(f"r must be positive, got {r}")
    counts: dict = {}
    total = 0
    for i, e in index_pairs(alpha):
        counts[i] = counts.get(i, 0) + e
        total += e
    for i, e in index_pairs(beta):
        counts[i] = counts.get(i, 0) + e
        total += e
    if counts.get(j, 0) < 1:
        raise ValidationError(f"mode {j} does not appear in alpha + beta")
    out = (total - 2) * math.log(r) + 2.0 * float(w.log_value(j))
    for i, e in counts.items():
        out -= e * float(w.log_value(i))
    return out


def alg_constant(w: Weight) -> float:
    """Convolution algebra constant for the weight family.

    Sub-exponential: C(p) = 8^p (sum_i <i>^-p)^(1/2) with the sum over
    all integers, requiring p > 1.  Sobolev:
    C(p) = sqrt(2) sqrt(2 + (2p+1)/(2p-1)), valid for p > 1/2.
    """
    p = w.p
    if w.kind is WeightKind.SUBEXP:
        if p <= 1.0:
            raise ValidationError(f"sub-exponential algebra constant needs p > 1, got {p}")
        return 8.0**p * math.sqrt(1.0 + 2.0 * float(zeta(p, 1)))
    return math.sqrt(2.0) * math.sqrt(2.0 + (2.0 * p + 1.0) / (2.0 * p - 1.0))
