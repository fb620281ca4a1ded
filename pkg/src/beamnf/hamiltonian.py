"""Sparse polynomial Hamiltonians in the pair variables (u, conj u).

A Hamiltonian is a finite sum of monomials H_{alpha,beta} u^alpha
ubar^beta with sparse integer multi-indices supported on the mode
window [-M, M].  This module provides the Poisson algebra (brackets,
degree and resonant projections, Lie transforms), vector fields,
majorant norm brackets, and a line-based text serialization.

Conventions
-----------
* Poisson bracket: {H, G} = i sum_j (dG/du_j dH/dubar_j - dG/dubar_j dH/du_j).
* Lie derivative along a generator S: L_S H := {H, S}; the Lie
  transform is exp(L_S) H.  With this orientation the adjoint action of
  the diagonal quadratic sum_j omega_j |u_j|^2 multiplies a monomial by
  -i omega.(alpha - beta), and the homological division in
  normal_form.solve_homological inverts it exactly.
* Scaling degree of a monomial is |alpha| + |beta| - 2; the zero
  Hamiltonian has scaling degree +infinity.
* A monomial is resonant iff l = alpha - beta satisfies
  l_j + l_{-j} = 0 for every j; equivalently its divisor
  omega.(alpha-beta) vanishes identically in the mass parameter.
  The per-mode pairing test is the algebraic characterization; it is
  decided exactly, never by numerical smallness.

Instances are immutable after construction and safe for concurrent
reads.  All operations are pure with fixed reduction order, so results
are bitwise reproducible.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Dict, Iterable, Iterator, Mapping, NamedTuple, Tuple, Union

import numpy as np

from .errors import DimensionError, ValidationError
from .rng import generator
from .weights import SeqState, Weight, log_coeff_c

Pairs = Tuple[Tuple[int, int], ...]

DROP_TOL = 1e-15


def _canon_pairs(entries) -> Pairs:
    """Canonical sparse multi-index: sorted (mode, exponent), exponents >= 1."""
    if isinstance(entries, MultiIndex):
        return entries.pairs
    if hasattr(entries, "items"):
        entries = entries.items()
    acc: Dict[int, int] = {}
    for j, e in entries:
        j = int(j)
        e = int(e)
        if e < 0:
            raise ValidationError(f"negative exponent {e} at mode {j}")
        if e:
            acc[j] = acc.get(j, 0) + e
    return tuple(sorted(acc.items()))


class MultiIndex:
    """Immutable sparse multi-index: mode -> positive exponent."""

    __slots__ = ("pairs",)

    def __init__(self, entries=()):
        object.__setattr__(self, "pairs", _canon_pairs(entries))

    @classmethod
    def _from_canonical(cls, pairs: Pairs) -> "MultiIndex":
        obj = cls.__new__(cls)
        object.__setattr__(obj, "pairs", pairs)
        return obj

    @classmethod
    def single(cls, j: int, exponent: int = 1) -> "MultiIndex":
        return cls(((j, exponent),))

    def __setattr__(self, *_):
        raise AttributeError("MultiIndex is immutable")

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.pairs)

    def exponent(self, j: int) -> int:
        for mode, e in self.pairs:
            if mode == j:
                return e
        return 0

    def items(self):
        return self.pairs

    def support(self) -> Tuple[int, ...]:
        return tuple(j for j, _ in self.pairs)

    def as_dict(self) -> Dict[int, int]:
        return dict(self.pairs)

    def momentum(self) -> int:
        return sum(j * e for j, e in self.pairs)

    def __eq__(self, other) -> bool:
        return isinstance(other, MultiIndex) and self.pairs == other.pairs

    def __hash__(self) -> int:
        return hash(self.pairs)

    def __repr__(self) -> str:
        return f"MultiIndex({dict(self.pairs)!r})"


class Monomial(NamedTuple):
    alpha: MultiIndex
    beta: MultiIndex
    coeff: complex

    @property
    def total_degree(self) -> int:
        return self.alpha.degree + self.beta.degree

    @property
    def scaling_degree(self) -> int:
        return self.total_degree - 2

    def momentum(self) -> int:
        return self.alpha.momentum() - self.beta.momentum()

    def conjugate(self) -> "Monomial":
        return Monomial(self.beta, self.alpha, complex(self.coeff).conjugate())


Key = Tuple[Pairs, Pairs]


def _key_degree(key: Key) -> int:
    a, b = key
    return sum(e for _, e in a) + sum(e for _, e in b)


def _key_momentum(key: Key) -> int:
    a, b = key
    return sum(j * e for j, e in a) - sum(j * e for j, e in b)


def is_resonant_key(alpha: Pairs, beta: Pairs) -> bool:
    """True iff l = alpha - beta satisfies l_j + l_{-j} = 0 for all j."""
    l: Dict[int, int] = {}
    for j, e in alpha:
        l[j] = l.get(j, 0) + e
    for j, e in beta:
        l[j] = l.get(j, 0) - e
    for j in l:
        if l[j] + l.get(-j, 0) != 0:
            return False
    return True


class DegreePart(Enum):
    EQUAL = "equal"
    GREATER = "greater"


class ResonantPart(Enum):
    KERNEL = "kernel"
    RANGE = "range"


def _coerce(enum_cls, value):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(str(value).lower())
    except ValueError:
        raise ValidationError(
            f"{value!r} is not a valid {enum_cls.__name__}; "
            f"expected one of {[e.value for e in enum_cls]}"
        ) from None


class PolyHamiltonian:
    """Finite sum of monomials keyed by (alpha, beta) on modes |j| <= M.

    The plain constructor is permissive: it accepts any monomial set
    (reality and momentum are pipeline invariants, validated post hoc
    via :meth:`reality_defect` and :meth:`momentum_defect`).  Use
    :meth:`from_pair_representatives` to build a real Hamiltonian from
    one representative per conjugate pair.

    Terms are merged additively on canonical keys; entries with
    |coeff| < drop_tol * max|coeff| are dropped.  Iteration follows the
    canonical (total degree, key) order.
    """

    __slots__ = ("M", "_terms")

    def __init__(self, M: int, terms: Iterable = (), drop_tol: float = DROP_TOL):
        if M < 1 or int(M) != M:
            raise ValidationError(f"M must be a positive integer, got {M}")
        acc: Dict[Key, complex] = {}
        for term in terms:
            alpha, beta, coeff = term
            key = (_canon_pairs(alpha), _canon_pairs(beta))
            self._check_window(key, M)
            acc[key] = acc.get(key, 0.0) + complex(coeff)
        object.__setattr__(self, "M", int(M))
        object.__setattr__(self, "_terms", _canonicalize(acc, drop_tol))

    @staticmethod
    def _check_window(key: Key, M: int):
        for pairs in key:
            for j, _ in pairs:
                if abs(j) > M:
                    raise DimensionError(f"mode {j} outside window [-{M}, {M}]")

    @classmethod
    def _from_canonical(cls, M: int, terms: Dict[Key, complex]) -> "PolyHamiltonian":
        obj = cls.__new__(cls)
        object.__setattr__(obj, "M", M)
        object.__setattr__(obj, "_terms", terms)
        return obj

    @classmethod
    def zero(cls, M: int) -> "PolyHamiltonian":
        return cls(M)

    @classmethod
    def from_pair_representatives(
        cls, M: int, terms: Iterable, drop_tol: float = DROP_TOL
    ) -> "PolyHamiltonian":
        """Build a real Hamiltonian from one (alpha, beta, coeff) per pair.

        The conjugate partner (beta, alpha, conj coeff) is inserted
        automatically; diagonal keys (alpha == beta) are coerced real.
        """
        full = []
        for alpha, beta, coeff in terms:
            a = _canon_pairs(alpha)
            b = _canon_pairs(beta)
            c = complex(coeff)
            if a == b:
                full.append((a, b, complex(c.real)))
            else:
                full.append((a, b, c))
                full.append((b, a, c.conjugate()))
        return cls(M, full, drop_tol)

    def __setattr__(self, *_):
        raise AttributeError("PolyHamiltonian is immutable")

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[Monomial]:
        for (a, b), c in self._terms.items():
            yield Monomial(
                MultiIndex._from_canonical(a), MultiIndex._from_canonical(b), c
            )

    def keys(self):
        return self._terms.keys()

    def coeff(self, alpha, beta) -> complex:
        key = (_canon_pairs(alpha), _canon_pairs(beta))
        return self._terms.get(key, 0.0 + 0.0j)

    def max_abs_coeff(self) -> float:
        if not self._terms:
            return 0.0
        return max(abs(c) for c in self._terms.values())

    def reality_defect(self) -> float:
        """max |H_{alpha,beta} - conj H_{beta,alpha}|; zero for real Hamiltonians."""
        worst = 0.0
        for (a, b), c in self._terms.items():
            partner = self._terms.get((b, a), 0.0 + 0.0j)
            worst = max(worst, abs(c - complex(partner).conjugate()))
        return worst

    def momentum_defect(self) -> int:
        """max |pi(alpha - beta)| over stored monomials."""
        if not self._terms:
            return 0
        return max(abs(_key_momentum(k)) for k in self._terms)

    def is_real(self, tol: float = 1e-12) -> bool:
        scale = max(self.max_abs_coeff(), 1.0)
        return self.reality_defect() <= tol * scale

    def is_momentum_conserving(self) -> bool:
        return self.momentum_defect() == 0

    def support_modes(self) -> Tuple[int, ...]:
        modes = set()
        for a, b in self._terms:
            modes.update(j for j, _ in a)
            modes.update(j for j, _ in b)
        return tuple(sorted(modes))

    def degrees(self) -> Tuple[int, ...]:
        """Sorted distinct total degrees present."""
        return tuple(sorted({_key_degree(k) for k in self._terms}))

    # -- arithmetic ---------------------------------------------------

    def _binary(self, other: "PolyHamiltonian", sign: float) -> "PolyHamiltonian":
        if not isinstance(other, PolyHamiltonian):
            return NotImplemented
        if self.M != other.M:
            raise DimensionError(f"cutoff mismatch: {self.M} vs {other.M}")
        acc = dict(self._terms)
        for key, c in other._terms.items():
            acc[key] = acc.get(key, 0.0) + sign * c
        return PolyHamiltonian._from_canonical(self.M, _canonicalize(acc, DROP_TOL))

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __neg__(self):
        return self * (-1.0)

    def __mul__(self, scalar):
        if not isinstance(scalar, (int, float, complex)):
            return NotImplemented
        acc = {k: scalar * c for k, c in self._terms.items()}
        return PolyHamiltonian._from_canonical(self.M, _canonicalize(acc, DROP_TOL))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"PolyHamiltonian(M={self.M}, terms={len(self._terms)})"


def _canonicalize(acc: Dict[Key, complex], drop_tol: float) -> Dict[Key, complex]:
    if not acc:
        return {}
    scale = max(abs(c) for c in acc.values())
    floor = drop_tol * scale
    kept = {k: c for k, c in acc.items() if abs(c) > floor}
    return dict(sorted(kept.items(), key=lambda kv: (_key_degree(kv[0]), kv[0])))


# -- degree and resonant structure ------------------------------------


def scaling_degree(H: PolyHamiltonian) -> float:
    """Minimal |alpha|+|beta|-2 over stored monomials; +inf for zero."""
    if not H._terms:
        return math.inf
    return min(_key_degree(k) for k in H._terms) - 2


def project_degree(H: PolyHamiltonian, d: int, mode=DegreePart.EQUAL) -> PolyHamiltonian:
    """Keep monomials of scaling degree equal to d (or strictly greater)."""
    if d < 0:
        raise ValidationError(f"degree must be nonnegative, got {d}")
    mode = _coerce(DegreePart, mode)
    target = d + 2
    if mode is DegreePart.EQUAL:
        kept = {k: c for k, c in H._terms.items() if _key_degree(k) == target}
    else:
        kept = {k: c for k, c in H._terms.items() if _key_degree(k) > target}
    return PolyHamiltonian._from_canonical(H.M, kept)


def truncate_total_degree(H: PolyHamiltonian, max_total: int) -> PolyHamiltonian:
    kept = {k: c for k, c in H._terms.items() if _key_degree(k) <= max_total}
    return PolyHamiltonian._from_canonical(H.M, kept)


def project_resonant(H: PolyHamiltonian, part=ResonantPart.KERNEL) -> PolyHamiltonian:
    """Split along the resonant set; Kernel + Range = identity."""
    part = _coerce(ResonantPart, part)
    keep_kernel = part is ResonantPart.KERNEL
    kept = {
        k: c for k, c in H._terms.items() if is_resonant_key(*k) == keep_kernel
    }
    return PolyHamiltonian._from_canonical(H.M, kept)


# -- Poisson bracket --------------------------------------------------


def poisson_bracket(H: PolyHamiltonian, G: PolyHamiltonian) -> PolyHamiltonian:
    """{H, G} = i sum_j (dG/du_j dH/dubar_j - dG/dubar_j dH/du_j).

    Exact termwise product formula; bilinear, antisymmetric, preserves
    reality and momentum, and adds scaling degrees.  Brackets against a
    diagonal operand (all keys u_j ubar_j) collapse to a closed form
    summed with fsum, so algebraic cancellations (resonant against even
    diagonal) come out exactly zero, not merely small.
    """
    if H.M != G.M:
        raise DimensionError(f"cutoff mismatch: {H.M} vs {G.M}")
    if _is_diagonal(G):
        return _bracket_with_diagonal(H, G, -1.0)
    if _is_diagonal(H):
        return _bracket_with_diagonal(G, H, 1.0)
    g_prep = [
        (dict(a), dict(b), a, b, c) for (a, b), c in G._terms.items()
    ]
    acc: Dict[Key, complex] = {}
    for (ha, hb), c1 in H._terms.items():
        da = dict(ha)
        db = dict(hb)
        set_da = set(da)
        set_db = set(db)
        for ga_d, gb_d, ga, gb, c2 in g_prep:
            js = (set_db & ga_d.keys()) | (set_da & gb_d.keys())
            if not js:
                continue
            base = 1j * c1 * c2
            # (|j|, j) order keeps +-j contributions adjacent, so pairs
            # that cancel algebraically cancel exactly in floats too
            for j in sorted(js, key=lambda t: (abs(t), t)):
                factor = ga_d.get(j, 0) * db.get(j, 0) - gb_d.get(j, 0) * da.get(j, 0)
                if factor == 0:
                    continue
                new_a = _merge_decrement(da, ga_d, j)
                new_b = _merge_decrement(db, gb_d, j)
                key = (new_a, new_b)
                acc[key] = acc.get(key, 0.0) + base * factor
    return PolyHamiltonian._from_canonical(H.M, _canonicalize(acc, DROP_TOL))


def _merge_decrement(d1: Dict[int, int], d2: Dict[int, int], j: int) -> Pairs:
    merged = dict(d1)
    for k, e in d2.items():
        merged[k] = merged.get(k, 0) + e
    merged[j] -= 1
    return tuple(sorted((k, e) for k, e in merged.items() if e))


def _is_diagonal(H: PolyHamiltonian) -> bool:
    """True iff every term is g_j u_j ubar_j (quadratic action form)."""
    return all(
        a == b and len(a) == 1 and a[0][1] == 1 for a, b in H._terms
    )


def _bracket_with_diagonal(
    H: PolyHamiltonian, G: PolyHamiltonian, sign: float
) -> PolyHamiltonian:
    """sign * {G_diag, H} with G = sum_j g_j u_j ubar_j.

    Each monomial of H maps to itself times i sum_j g_j (alpha_j -
    beta_j); fsum makes symmetric +-cancellations exact.
    """
    g = {a[0][0]: c for (a, _), c in G._terms.items()}
    acc: Dict[Key, complex] = {}
    for (a, b), c in H._terms.items():
        da = dict(a)
        db = dict(b)
        re_parts = []
        im_parts = []
        for j in set(da) | set(db):
            gj = g.get(j)
            if gj is None:
                continue
            l_j = da.get(j, 0) - db.get(j, 0)
            if l_j:
                re_parts.append(gj.real * l_j)
                im_parts.append(gj.imag * l_j)
        total = complex(math.fsum(re_parts), math.fsum(im_parts))
        if total != 0.0:
            acc[(a, b)] = 1j * sign * c * total
    return PolyHamiltonian._from_canonical(H.M, _canonicalize(acc, DROP_TOL))


# -- Lie transform ----------------------------------------------------


def lie_transform(
    H: PolyHamiltonian, S: PolyHamiltonian, degree_cutoff: int
) -> PolyHamiltonian:
    """exp(L_S) H truncated to monomials of total degree <= degree_cutoff + 2.

    Each bracket with S raises scaling degree by at least
    scaling_degree(S) >= 1, so the truncated series terminates.  Inputs
    to each bracket are pruned to the degrees that can still produce
    kept output; the pruning is exact, not an approximation.
    """
    d_S = scaling_degree(S)
    if d_S == math.inf:
        return H
    if d_S < 1:
        raise ValidationError(
            "generator has scaling degree 0; the Lie series would not terminate"
        )
    d_H = scaling_degree(H)
    if degree_cutoff < d_H:
        raise ValidationError(
            f"degree_cutoff {degree_cutoff} below the scaling degree {d_H} of H"
        )
    max_total = degree_cutoff + 2
    out = dict(truncate_total_degree(H, max_total)._terms)
    cur = truncate_total_degree(H, max_total)
    k = 1
    while True:
        pruned = truncate_total_degree(cur, max_total - d_S)
        if not pruned._terms:
            break
        cur = truncate_total_degree(
            poisson_bracket(pruned, S) * (1.0 / k), max_total
        )
        if not cur._terms:
            break
        for key, c in cur._terms.items():
            out[key] = out.get(key, 0.0) + c
        k += 1
        if k > 500:  # unreachable given the degree argument; hard stop
            raise ValidationError("Lie series failed to terminate")
    return PolyHamiltonian._from_canonical(H.M, _canonicalize(out, DROP_TOL))


# -- evaluation and vector fields -------------------------------------


def evaluate(H: PolyHamiltonian, u: SeqState) -> complex:
    """H(u, conj u) by direct summation; use CompiledField for hot loops."""
    if u.M != H.M:
        raise DimensionError(f"cutoff mismatch: state M={u.M}, H M={H.M}")
    M = H.M
    arr = u.coeff
    total = 0.0 + 0.0j
    for (a, b), c in H._terms.items():
        val = c
        for j, e in a:
            val *= arr[j + M] ** e
        for j, e in b:
            val *= np.conj(arr[j + M]) ** e
        total += val
    return complex(total)


def vector_field(H: PolyHamiltonian, u: SeqState, majorant: bool = False) -> SeqState:
    """Hamiltonian vector field X_H^(j) = -i dH/dubar_j at u.

    With majorant=True, evaluates the majorant envelope instead:
    coefficients |H_{alpha,beta}|, the beta_j u^alpha ubar^(beta-e_j)
    formula, and |u_i| in place of u_i (the result is nonnegative).
    """
    if u.M != H.M:
        raise DimensionError(f"cutoff mismatch: state M={u.M}, H M={H.M}")
    M = H.M
    arr = np.abs(u.coeff).astype(complex) if majorant else u.coeff
    out = np.zeros(2 * M + 1, dtype=complex)
    for (a, b), c in H._terms.items():
        base = abs(c) if majorant else c
        for j, e in a:
            base *= arr[j + M] ** e
        for j, e in b:
            term = e * base
            for j2, e2 in b:
                ee = e2 - 1 if j2 == j else e2
                if ee:
                    factor = arr[j2 + M] if majorant else np.conj(arr[j2 + M])
                    term *= factor**ee
            out[j + M] += term
    out *= -1j
    if majorant:
        out = np.abs(out).astype(complex)
    return SeqState(out, M)


# -- majorant norm ----------------------------------------------------


def _norm_problem(H: PolyHamiltonian, r: float, w: Weight):
    """Assemble the Y-map data: out-mode index, coefficient, exponent rows.

    Y^(j)(y) = sum_terms k_t y^{E_t} with
    k_t = |H_{a,b}| (a_j + b_j)/2 * c^(j)_{r,w}(a,b) and
    E_t = a + b - e_j over the active modes.
    """
    modes = H.support_modes()
    mode_pos = {j: i for i, j in enumerate(modes)}
    coeffs = []
    rows = []
    out_idx = []
    for (a, b), c in H._terms.items():
        combined: Dict[int, int] = {}
        for j, e in a:
            combined[j] = combined.get(j, 0) + e
        for j, e in b:
            combined[j] = combined.get(j, 0) + e
        log_abs = math.log(abs(c))
        for j, tot in combined.items():
            k_log = log_abs + math.log(tot / 2.0) + log_coeff_c(j, a, b, r, w)
            row = [0] * len(modes)
            for i, e in combined.items():
                row[mode_pos[i]] = e
            row[mode_pos[j]] -= 1
            coeffs.append(math.exp(k_log))
            rows.append(row)
            out_idx.append(mode_pos[j])
    return (
        np.array(modes, dtype=int),
        np.array(out_idx, dtype=int),
        np.array(coeffs, dtype=float),
        np.array(rows, dtype=float),
    )


def _norm_value(y, out_idx, coeffs, rows, n_out):
    powers = np.prod(y[None, :] ** rows, axis=1)
    Y = np.bincount(out_idx, weights=coeffs * powers, minlength=n_out)
    return float(np.sqrt(np.sum(Y * Y))), Y, powers


def majorant_norm_upper(H: PolyHamiltonian, r: float, w: Weight) -> float:
    """Upper end of the majorant-norm bracket only (cheap, single pass).

    This is the bound used by theorem-side smallness gates, where the
    ascent lower bound is irrelevant.
    """
    if r <= 0:
        raise ValidationError(f"r must be positive, got {r}")
    if w.M != H.M:
        raise DimensionError(f"cutoff mismatch: weight M={w.M}, H M={H.M}")
    if not H._terms:
        return 0.0
    modes, out_idx, coeffs, _ = _norm_problem(H, r, w)
    upper_vec = np.bincount(out_idx, weights=coeffs, minlength=len(modes))
    return float(np.sqrt(np.sum(upper_vec**2)))


def majorant_norm(
    H: PolyHamiltonian,
    r: float,
    w: Weight,
    *,
    starts: int = 8,
    sphere_samples: int = 32,
    iters: int = 400,
    seed: int = 7,
) -> Tuple[float, float]:
    """Certified bracket [lower, upper] around the majorant norm |H|_{r,w}.

    The norm is the supremum of |Y(y)|_2 over the nonnegative unit
    l2-ball, a nonconvex polynomial maximization; it is bracketed, not
    computed exactly.  The lower end is the best of projected-gradient
    ascent from deterministic plus seeded random starts and direct
    sphere samples; the upper end is the l2 norm of per-mode coefficient
    sums (triangle inequality plus Cauchy-Schwarz, each y^E <= 1 on the
    ball).  Theorem-side smallness checks must use the upper end, "norm
    at least" assertions the lower end.
    """
    if r <= 0:
        raise ValidationError(f"r must be positive, got {r}")
    if w.M != H.M:
        raise DimensionError(f"cutoff mismatch: weight M={w.M}, H M={H.M}")
    if not H._terms:
        return 0.0, 0.0
    modes, out_idx, coeffs, rows = _norm_problem(H, r, w)
    n_out = len(modes)
    upper_vec = np.bincount(out_idx, weights=coeffs, minlength=n_out)
    upper = float(np.sqrt(np.sum(upper_vec**2)))

    n_modes = len(modes)
    best = 0.0
    rng = generator(seed, "majorant-norm")

    def ascend(y0):
        nonlocal best
        y = np.clip(y0, 1e-12, None)
        y /= np.linalg.norm(y)
        eta = 0.5
        f_prev, Y, powers = _norm_value(y, out_idx, coeffs, rows, n_out)
        for _ in range(iters):
            weights_t = coeffs * powers * Y[out_idx]
            grad = 2.0 * (weights_t[:, None] * rows).sum(axis=0) / y
            y_new = np.clip(y + eta * grad, 1e-12, None)
            y_new /= np.linalg.norm(y_new)
            f_new, Y_new, powers_new = _norm_value(y_new, out_idx, coeffs, rows, n_out)
            if f_new >= f_prev:
                y, f_prev, Y, powers = y_new, f_new, Y_new, powers_new
                eta = min(eta * 1.5, 64.0)
            else:
                eta *= 0.5
                if eta < 1e-14:
                    break
        # exact evaluation at the projected final point
        yf = np.where(y > 2e-12, y, 0.0)
        norm = np.linalg.norm(yf)
        if norm > 0:
            f_final, _, _ = _norm_value(yf / norm, out_idx, coeffs, rows, n_out)
            best = max(best, f_final)
        best = max(best, f_prev)

    ascend(np.full(n_modes, 1.0))
    for i in range(n_modes):
        y0 = np.full(n_modes, 1e-6)
        y0[i] = 1.0
        ascend(y0)
    for _ in range(max(0, starts - 1)):
        ascend(np.abs(rng.standard_normal(n_modes)) + 1e-9)
    for _ in range(sphere_samples):
        y = np.abs(rng.standard_normal(n_modes)) + 1e-12
        y /= np.linalg.norm(y)
        f, _, _ = _norm_value(y, out_idx, coeffs, rows, n_out)
        best = max(best, f)
    lower = min(best, upper)  # guard against roundoff inversion
    return lower, upper


# -- fast repeated evaluation -----------------------------------------


class CompiledField:
    """Vectorized evaluator of H and X_H for repeated calls on one H.

    Precompiles exponent matrices over the active modes; evaluation uses
    per-mode power tables and prefix/suffix products, so no divisions by
    possibly-zero coordinates occur.
    """

    def __init__(self, H: PolyHamiltonian):
        self.M = H.M
        modes = H.support_modes()
        self.modes = np.array(modes, dtype=int)
        pos = {j: i for i, j in enumerate(modes)}
        n_m = len(modes)
        n_t = len(H._terms)
        self.Ea = np.zeros((n_t, n_m), dtype=np.int64)
        self.Eb = np.zeros((n_t, n_m), dtype=np.int64)
        self.coeff = np.zeros(n_t, dtype=complex)
        for t, ((a, b), c) in enumerate(H._terms.items()):
            self.coeff[t] = c
            for j, e in a:
                self.Ea[t, pos[j]] = e
            for j, e in b:
                self.Eb[t, pos[j]] = e
        self.max_pow = int(max(1, self.Ea.max(initial=0), self.Eb.max(initial=0)))
        self._col = np.arange(n_m)
        self.Eb_dec = np.maximum(self.Eb - 1, 0)

    def _tables(self, u_active: np.ndarray):
        # rows: mode, cols: power 0..max_pow
        n_m = len(u_active)
        tab = np.empty((n_m, self.max_pow + 1), dtype=complex)
        tab[:, 0] = 1.0
        for k in range(1, self.max_pow + 1):
            tab[:, k] = tab[:, k - 1] * u_active
        return tab

    def _active(self, u: np.ndarray) -> np.ndarray:
        return u[self.modes + self.M]

    def value(self, u: np.ndarray) -> complex:
        """H(u) for a window array u of length 2M + 1."""
        if len(self.coeff) == 0:
            return 0.0 + 0.0j
        ua = self._active(u)
        ta = self._tables(ua)
        tb = self._tables(np.conj(ua))
        fa = ta[self._col[None, :], self.Ea]
        fb = tb[self._col[None, :], self.Eb]
        return complex(np.sum(self.coeff * fa.prod(axis=1) * fb.prod(axis=1)))

    def field(self, u: np.ndarray) -> np.ndarray:
        """X_H(u) = -i dH/dubar as a window array of length 2M + 1."""
        out = np.zeros(2 * self.M + 1, dtype=complex)
        if len(self.coeff) == 0:
            return out
        ua = self._active(u)
        n_m = len(ua)
        ta = self._tables(ua)
        tb = self._tables(np.conj(ua))
        fa = ta[self._col[None, :], self.Ea]
        fb = tb[self._col[None, :], self.Eb]
        A = self.coeff * fa.prod(axis=1)
        # prefix/suffix products of the conjugate factors along the mode axis
        n_t = fb.shape[0]
        prefix = np.ones((n_t, n_m + 1), dtype=complex)
        np.cumprod(fb, axis=1, out=prefix[:, 1:])
        suffix = np.ones((n_t, n_m + 1), dtype=complex)
        np.cumprod(fb[:, ::-1], axis=1, out=suffix[:, 1:])
        suffix = suffix[:, ::-1]
        dec = tb[self._col[None, :], self.Eb_dec]
        for i in range(n_m):
            contrib = (
                A
                * self.Eb[:, i]
                * prefix[:, i]
                * suffix[:, i + 1]
                * dec[:, i]
            )
            out[self.modes[i] + self.M] = -1j * contrib.sum()
        return out


# -- serialization ----------------------------------------------------


def _format_pairs(pairs: Pairs) -> str:
    return ",".join(f"{j}:{e}" for j, e in pairs)


def _parse_pairs(text: str) -> Pairs:
    text = text.strip()
    if not text:
        return ()
    entries = []
    for chunk in text.split(","):
        j, e = chunk.split(":")
        entries.append((int(j), int(e)))
    return _canon_pairs(entries)


def dumps_hamiltonian(H: PolyHamiltonian) -> str:
    """Text form: one line per monomial `coeff_re coeff_im | j:exp,... | j:exp,...`."""
    lines = [f"# M={H.M}"]
    for (a, b), c in H._terms.items():
        lines.append(
            f"{c.real:.17g} {c.imag:.17g} | {_format_pairs(a)} | {_format_pairs(b)}"
        )
    return "\n".join(lines) + "\n"


def loads_hamiltonian(text: str, M: int | None = None) -> PolyHamiltonian:
    terms = []
    seen_M = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "M=" in line:
                seen_M = int(line.split("M=")[1].split()[0])
            continue
        head, alpha_s, beta_s = (part.strip() for part in line.split("|"))
        re_s, im_s = head.split()
        terms.append(
            (_parse_pairs(alpha_s), _parse_pairs(beta_s), complex(float(re_s), float(im_s)))
        )
    if M is None:
        M = seen_M
    if M is None:
        M = max(
            (abs(j) for a, b, _ in terms for j, _ in (*a, *b)),
            default=1,
        )
    return PolyHamiltonian(M, terms)


def dump_hamiltonian(H: PolyHamiltonian, path) -> None:
    with open(path, "w", encoding="utf8") as fh:
        fh.write(dumps_hamiltonian(H))


def load_hamiltonian(path, M: int | None = None) -> PolyHamiltonian:
    with open(path, "r", encoding="utf8") as fh:
        return loads_hamiltonian(fh.read(), M)
