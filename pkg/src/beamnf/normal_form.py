"""Iterative Birkhoff normalization of the truncated beam Hamiltonian.

The engine removes nonresonant monomials degree by degree.  At step k
(zero-based) the working degree is N = k + 1 in the scaling grading
(total degree N + 2): the nonresonant part of the degree-N remainder is
killed by the time-1 flow of a generator obtained from the homological
equation, the resonant part joins the normal form, and everything else
is pushed up in degree by the Lie transform.

Conventions (shared with :mod:`beamnf.hamiltonian`):

* bracket {H, G} = i sum_j (dG/du_j dH/dubar_j - dG/dubar_j dH/du_j),
* adjoint of the quadratic part D = sum omega_j |u_j|^2 acts on a
  monomial u^a ubar^b as multiplication by -i omega.(a - b),
* hence the homological solution is S_ab = R_ab / (-i omega.(a - b)).

Norm bookkeeping follows a fixed parameter schedule: radii shrink from
r0 to r0/2 over K steps, sub-exponential weights grow from s0 to 3 s0/2
(Sobolev exponents grow by (36k)^2 per step), and each step carries a
divisor-loss budget J and a flow smallness budget delta_k.  Gates can
run in three modes: "theoretical" uses the worst-case budgets (they are
astronomically conservative), "empirical" measures the generator norm
directly, "off" skips the check.  A failed gate raises
StepRejectedError; the driver converts that into a partial result.

The lifespan estimates at the bottom evaluate the stability-time lower
bounds in log space so that thresholds far below float underflow still
compare correctly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .divisors import FrequencyVector, LatticeVector, divisor, reduce_superactions
from .errors import BudgetError, StepRejectedError, ValidationError
from .hamiltonian import (
    DegreePart,
    PolyHamiltonian,
    ResonantPart,
    _coerce,
    _format_pairs,
    lie_transform,
    majorant_norm_upper,
    project_degree,
    project_resonant,
    scaling_degree,
)
from .weights import Weight, WeightKind, index_pairs

__all__ = [
    "diagonal_quadratic",
    "lattice_of",
    "adjoint_action",
    "solve_homological",
    "j0_log",
    "j0_bound",
    "ParamSchedule",
    "NormalFormState",
    "StepRecord",
    "BnfReport",
    "bnf_step",
    "bnf_iterate",
    "LifespanParams",
    "TimeEstimate",
    "predicted_times",
    "optimal_sobolev_exponent",
]

LOG10 = math.log(10.0)

# float overflow guard for exp(); beyond this we report inf
_EXP_MAX = 700.0


def _exp_safe(x: float) -> float:
    if x > _EXP_MAX:
        return math.inf
    if x < -_EXP_MAX:
        return 0.0
    return math.exp(x)


def _log_sum(values) -> float:
    """log of a sum of nonnegative numbers given directly (not in logs)."""
    total = math.fsum(values)
    if total <= 0.0:
        return -math.inf
    return math.log(total)


# -- building blocks --------------------------------------------------


def diagonal_quadratic(freq: FrequencyVector) -> PolyHamiltonian:
    """D = sum_{|j| <= M} omega_j u_j ubar_j."""
    terms = []
    for j in range(-freq.M, freq.M + 1):
        terms.append((((j, 1),), ((j, 1),), complex(freq.omega(j))))
    return PolyHamiltonian(freq.M, terms)


def lattice_of(alpha, beta) -> LatticeVector:
    """The divisor vector l = alpha - beta of a monomial key.

    Accepts raw (mode, exponent) pair tuples or MultiIndex objects.
    """
    acc: Dict[int, int] = {}
    for j, e in index_pairs(alpha):
        acc[j] = acc.get(j, 0) + e
    for j, e in index_pairs(beta):
        acc[j] = acc.get(j, 0) - e
    return LatticeVector(acc)


def adjoint_action(H: PolyHamiltonian, freq: FrequencyVector) -> PolyHamiltonian:
    """{H, D} termwise: multiply each monomial by -i omega.(alpha - beta)."""
    if freq.M != H.M:
        raise ValidationError(f"cutoff mismatch: freq M={freq.M}, H M={H.M}")
    out = {}
    for key, c in H._terms.items():
        psi = divisor(lattice_of(*key), freq.m)
        if psi != 0.0:
            out[key] = -1j * psi * c
    return PolyHamiltonian._from_canonical(H.M, out)


def solve_homological(R: PolyHamiltonian, freq: FrequencyVector) -> PolyHamiltonian:
    """Solve {D, S} = -R for S, i.e. S_ab = R_ab / (-i omega.(a-b)).

    Every monomial of R must be nonresonant; a resonant key raises
    ValidationError naming the offending monomial.  The time-1 flow of
    the returned S cancels R at its own degree:
    R + {D, S} = 0 on the range of the adjoint action.
    """
    if freq.M != R.M:
        raise ValidationError(f"cutoff mismatch: freq M={freq.M}, R M={R.M}")
    out = {}
    for key, c in R._terms.items():
        l = lattice_of(*key)
        if not is_nonresonant(l):
            a, b = key
            raise ValidationError(
                "homological equation is singular on the resonant monomial "
                f"{_format_pairs(a)} | {_format_pairs(b)}"
            )
        psi = divisor(l, freq.m)
        if psi == 0.0:
            a, b = key
            raise ValidationError(
                "vanishing divisor on the nonresonant monomial "
                f"{_format_pairs(a)} | {_format_pairs(b)}; "
                "the mass is resonant at this cutoff"
            )
        out[key] = c / (-1j * psi)
    return PolyHamiltonian._from_canonical(R.M, out)


def is_nonresonant(l: LatticeVector) -> bool:
    return not reduce_superactions(l).is_zero()


# -- divisor-loss budgets ---------------------------------------------


def j0_log(
    kind: WeightKind,
    gap: float,
    N: int,
    gamma: float,
    q: Optional[float] = None,
    C: float = 1.0,
) -> float:
    """ln of the accumulated divisor-loss budget after N steps.

    Sub-exponential weights: J = gamma^{-4N} exp(exp((N^2 C / gap)^{1/(q-1)}))
    where gap is the analyticity margin sigma spent so far.  Sobolev
    weights: J = gamma^{-4N} e^{C zeta} where gap = zeta >= (36 N)^2 is
    the Sobolev-exponent margin.  Values overflow fast; everything stays
    in logs and +inf is a legitimate return.
    """
    kind = _coerce(WeightKind, kind)
    if not 0.0 < gamma <= 1.0:
        raise ValidationError(f"gamma must lie in (0, 1], got {gamma}")
    if N < 0:
        raise ValidationError(f"step count must be nonnegative, got {N}")
    if C <= 0:
        raise ValidationError(f"C must be positive, got {C}")
    if N == 0:
        return 0.0
    base = -4.0 * N * math.log(gamma)
    if kind is WeightKind.SUBEXP:
        if q is None or not 1.0 < q <= 2.0:
            raise ValidationError(f"q must lie in (1, 2], got {q}")
        if gap <= 0.0:
            return math.inf
        inner = (N * N * C / gap) ** (1.0 / (q - 1.0))
        return base + _exp_safe(inner)
    if kind is WeightKind.SOBOLEV:
        zeta = gap
        if zeta < (36 * N) ** 2:
            raise ValidationError(
                f"Sobolev budget needs zeta >= (36N)^2 = {(36 * N) ** 2}, got {zeta}"
            )
        return base + C * zeta
    raise ValidationError(f"unknown weight kind {kind!r}")


def j0_bound(
    kind: WeightKind,
    gap: float,
    N: int,
    gamma: float,
    q: Optional[float] = None,
    C: float = 1.0,
) -> float:
    """Plain-number version of :func:`j0_log` (inf on overflow)."""
    return _exp_safe(j0_log(kind, gap, N, gamma, q=q, C=C))


# -- parameter schedule -----------------------------------------------


@dataclass(frozen=True)
class ParamSchedule:
    """Radii, weights, and budgets for a K-step normalization run.

    r(k) = r0 (1 - k/(2K)) shrinks to r0/2; delta(k) is the flow
    smallness budget for the k-th step; sub-exponential runs grow
    s(k) = s0 (1 + k/(2K)) and spend the margin sigma(k) = s0 k/(2K),
    Sobolev runs grow the exponent by zeta(i) = (36 i)^2 per step.
    rbar is the radius at which the initial-remainder norm bound is
    taken (defaults to r0); C is the budget constant fed to j0_log.
    """

    kind: WeightKind
    K: int
    r0: float
    gamma: float
    p: float
    q: float = 2.0
    s0: float = 0.0
    rbar: Optional[float] = None
    C: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", _coerce(WeightKind, self.kind))
        if self.K < 1 or int(self.K) != self.K:
            raise ValidationError(f"K must be a positive integer, got {self.K}")
        if self.K > 6:
            raise BudgetError(
                f"K = {self.K} exceeds the supported budget of 6 steps; "
                "the degree-(K+2) truncations grow combinatorially beyond that"
            )
        if self.r0 <= 0:
            raise ValidationError(f"r0 must be positive, got {self.r0}")
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.p <= 0.5:
            raise ValidationError(f"p must exceed 1/2, got {self.p}")
        if self.kind is WeightKind.SUBEXP:
            if self.s0 <= 0:
                raise ValidationError(
                    f"sub-exponential schedule needs s0 > 0, got {self.s0}"
                )
            if not 1.0 < self.q <= 2.0:
                raise ValidationError(f"q must lie in (1, 2], got {self.q}")
        if self.rbar is None:
            object.__setattr__(self, "rbar", self.r0)
        elif self.rbar < self.r0:
            raise ValidationError(
                f"rbar must be at least r0, got rbar={self.rbar} < r0={self.r0}"
            )
        if self.C <= 0:
            raise ValidationError(f"C must be positive, got {self.C}")

    def _check_k(self, k: int, last: int):
        if not 0 <= k <= last:
            raise ValidationError(f"step index {k} outside [0, {last}]")

    def r(self, k: int) -> float:
        self._check_k(k, self.K)
        return self.r0 * (1.0 - k / (2.0 * self.K))

    def delta(self, k: int) -> float:
        """Flow budget of step k: (r_k - r_{k+1}) / (16 e r_k)."""
        self._check_k(k, self.K - 1)
        return (self.r(k) - self.r(k + 1)) / (16.0 * math.e * self.r(k))

    def s(self, k: int) -> float:
        self._check_k(k, self.K)
        return self.s0 * (1.0 + k / (2.0 * self.K))

    def sigma(self, k: int) -> float:
        """Analyticity margin spent after k steps (sub-exponential)."""
        self._check_k(k, self.K)
        return self.s0 * k / (2.0 * self.K)

    def zeta(self, k: int) -> float:
        """Sobolev-exponent increment of step k."""
        self._check_k(k, self.K)
        return float((36 * k) ** 2)

    def sobolev_p(self, k: int) -> float:
        self._check_k(k, self.K)
        return self.p + sum(self.zeta(i) for i in range(1, k + 1))

    def weight(self, k: int, M: int) -> Weight:
        if self.kind is WeightKind.SUBEXP:
            return Weight.subexp(s=self.s(k), p=self.p, q=self.q, M=M)
        return Weight.sobolev(p=self.sobolev_p(k), M=M)

    def j0_at(self, k: int) -> float:
        """ln J_k with the cumulative margin spent through step k."""
        self._check_k(k, self.K)
        if k == 0:
            return 0.0
        if self.kind is WeightKind.SUBEXP:
            return j0_log(self.kind, self.sigma(k), k, self.gamma, q=self.q, C=self.C)
        zeta_total = sum(self.zeta(i) for i in range(1, k + 1))
        return j0_log(self.kind, zeta_total, k, self.gamma, C=self.C)

    def j0_honest(self, k: int) -> float:
        """ln J of step k alone, charging only that step's margin."""
        self._check_k(k, self.K)
        if k == 0:
            return 0.0
        if self.kind is WeightKind.SUBEXP:
            return j0_log(
                self.kind, self.s0 / (2.0 * self.K), k, self.gamma, q=self.q, C=self.C
            )
        return j0_log(self.kind, max(self.zeta(k), (36 * k) ** 2), k, self.gamma, C=self.C)


# -- iteration state --------------------------------------------------


@dataclass
class NormalFormState:
    """Decomposition D + sum_d Z_d + sum_d R_d + tail after k steps.

    Z_d holds the resonant normal form at scaling degree d <= k, R_d the
    not-yet-normalized remainder at k < d <= K, and tail the transported
    terms of scaling degree in (K, K + tail_buffer].  The quadratic part
    is implicit in freq.
    """

    frequencies: FrequencyVector
    K: int
    Z_by_degree: Dict[int, PolyHamiltonian] = field(default_factory=dict)
    R_by_degree: Dict[int, PolyHamiltonian] = field(default_factory=dict)
    tail: Optional[PolyHamiltonian] = None
    k: int = 0
    tail_buffer: int = 2

    def __post_init__(self):
        if self.tail is None:
            self.tail = PolyHamiltonian.zero(self.frequencies.M)
        if self.K < 1:
            raise ValidationError(f"K must be positive, got {self.K}")
        if self.tail_buffer < 0:
            raise ValidationError(
                f"tail_buffer must be nonnegative, got {self.tail_buffer}"
            )

    @property
    def M(self) -> int:
        return self.frequencies.M

    @classmethod
    def initial(
        cls,
        H0: PolyHamiltonian,
        freq: FrequencyVector,
        K: int,
        tail_buffer: int = 2,
    ) -> "NormalFormState":
        """Split a perturbation (scaling degree >= 1) into degree slots.

        Scaling degrees above K + tail_buffer are discarded here; pick
        the builder's degree cutoff accordingly.
        """
        if H0.M != freq.M:
            raise ValidationError(f"cutoff mismatch: H0 M={H0.M}, freq M={freq.M}")
        d0 = scaling_degree(H0)
        if d0 < 1:
            raise ValidationError(
                f"perturbation must have scaling degree >= 1, got {d0}"
            )
        state = cls(frequencies=freq, K=K, tail_buffer=tail_buffer)
        top = K + tail_buffer
        tail_parts = PolyHamiltonian.zero(freq.M)
        for d in range(1, top + 1):
            part = project_degree(H0, d, DegreePart.EQUAL)
            if not len(part):
                continue
            if d <= K:
                state.R_by_degree[d] = part
            else:
                tail_parts = tail_parts + part
        state.tail = tail_parts
        return state

    def remainder(self) -> PolyHamiltonian:
        """Everything not yet in normal form: sum_d R_d + tail."""
        out = PolyHamiltonian.zero(self.M)
        for part in self.R_by_degree.values():
            out = out + part
        return out + self.tail

    def normal_part(self) -> PolyHamiltonian:
        out = PolyHamiltonian.zero(self.M)
        for part in self.Z_by_degree.values():
            out = out + part
        return out

    def perturbation(self) -> PolyHamiltonian:
        return self.normal_part() + self.remainder()

    def hamiltonian(self) -> PolyHamiltonian:
        return diagonal_quadratic(self.frequencies) + self.perturbation()

    def validate(self, tol: float = 1e-9) -> None:
        """Invariant sweep; raises ValidationError on the first failure."""
        H = self.perturbation()
        scale = max(H.max_abs_coeff(), 1.0)
        if H.reality_defect() > tol * scale:
            raise ValidationError(
                f"state is not real: defect {H.reality_defect():.3e}"
            )
        if H.momentum_defect() != 0:
            raise ValidationError("state violates momentum conservation")
        for d, part in self.Z_by_degree.items():
            if scaling_degree(part) not in (d, math.inf) or (
                len(part) and max(m.scaling_degree for m in part) != d
            ):
                raise ValidationError(f"Z[{d}] is not degree homogeneous")
            defect = project_resonant(part, ResonantPart.RANGE)
            if defect.max_abs_coeff() > tol * scale:
                raise ValidationError(
                    f"Z[{d}] contains nonresonant terms up to "
                    f"{defect.max_abs_coeff():.3e}"
                )
        for d, part in self.R_by_degree.items():
            if len(part) and {m.scaling_degree for m in part} != {d}:
                raise ValidationError(f"R[{d}] is not degree homogeneous")
        if len(self.tail) and scaling_degree(self.tail) <= self.K:
            raise ValidationError("tail contains degrees at or below K")


# -- step and driver records ------------------------------------------


@dataclass
class StepRecord:
    k: int
    degree: int
    n_remainder_terms: int
    n_resonant_terms: int
    n_generator_terms: int
    min_abs_divisor: float
    delta_k: float
    gate_mode: str
    gate_log_lhs: float
    gate_log_lhs_theoretical: float
    gate_log_lhs_empirical: float
    gate_log_rhs: float
    gate_passed: bool
    generator_norm_upper: float
    eps_by_degree: Dict[int, float]
    eps_tail: float
    range_residual: float
    truncation_loss_log: float
    wall_time_s: float

    def as_dict(self) -> dict:
        out = {}
        for key, val in self.__dict__.items():
            if isinstance(val, dict):
                out[key] = {str(k): _json_safe(v) for k, v in val.items()}
            else:
                out[key] = _json_safe(val)
        return out


@dataclass
class BnfReport:
    kind: str
    K: int
    M: int
    r0: float
    gamma: float
    p: float
    q: float
    s0: float
    rbar: float
    C: float
    tail_buffer: int
    gate_mode: str
    completed_steps: int
    rejected: bool
    rejection_reason: Optional[str]
    steps: List[StepRecord]
    j_log_by_step: List[float]
    s1_log_lhs: float
    s1_log_rhs: float
    s1_passed: bool
    log10_c2_bound: float
    log10_c3_bound: float
    z_norms: Dict[int, float]
    r_norms: Dict[int, float]
    tail_norm: float
    all_z_resonant: bool
    odd_z_max_coeff: float
    generators: List[PolyHamiltonian] = field(default_factory=list)

    def as_dict(self) -> dict:
        from .hamiltonian import dumps_hamiltonian

        out = {}
        for key, val in self.__dict__.items():
            if key == "steps":
                out[key] = [s.as_dict() for s in val]
            elif key == "generators":
                out[key] = [dumps_hamiltonian(S) for S in val]
            elif isinstance(val, dict):
                out[key] = {str(k): _json_safe(v) for k, v in val.items()}
            elif isinstance(val, list):
                out[key] = [_json_safe(v) for v in val]
            else:
                out[key] = _json_safe(val)
        return out


def _json_safe(val):
    if isinstance(val, float):
        if math.isinf(val):
            return "inf" if val > 0 else "-inf"
        if math.isnan(val):
            return "nan"
    return val


# -- one normalization step -------------------------------------------

GATE_MODES = ("theoretical", "empirical", "off")


def bnf_step(
    state: NormalFormState,
    schedule: ParamSchedule,
    gate_mode: str = "empirical",
) -> Tuple[NormalFormState, StepRecord, PolyHamiltonian]:
    """Normalize scaling degree N = state.k + 1; returns the generator too.

    Raises StepRejectedError when the selected gate fails; the attached
    record carries the measured and budgeted quantities.
    """
    if gate_mode not in GATE_MODES:
        raise ValidationError(
            f"gate_mode must be one of {GATE_MODES}, got {gate_mode!r}"
        )
    if state.K != schedule.K:
        raise ValidationError(
            f"state K={state.K} does not match schedule K={schedule.K}"
        )
    k = state.k
    if k >= state.K:
        raise ValidationError(f"iteration already complete: k={k}, K={state.K}")
    t0 = time.perf_counter()
    N = k + 1
    M = state.M
    freq = state.frequencies

    R_N = state.R_by_degree.get(N, PolyHamiltonian.zero(M))
    Z_new = project_resonant(R_N, ResonantPart.KERNEL)
    R_range = project_resonant(R_N, ResonantPart.RANGE)
    S = solve_homological(R_range, freq)

    min_div = math.inf
    for mono in R_range:
        psi = abs(divisor(lattice_of(mono.alpha, mono.beta), freq.m))
        min_div = min(min_div, psi)

    delta_k = schedule.delta(k)
    w_cur = schedule.weight(k, M)
    w_next = schedule.weight(k + 1, M)
    r_k = schedule.r(k)

    s_upper = majorant_norm_upper(S, r_k, w_next) if len(S) else 0.0

    # the per-degree remainder ledger at this step's parameters
    eps_by_degree: Dict[int, float] = {}
    for d in range(N, state.K + 1):
        part = state.R_by_degree.get(d)
        eps_by_degree[d] = (
            majorant_norm_upper(part, r_k, w_cur) if part is not None and len(part) else 0.0
        )
    eps_tail = majorant_norm_upper(state.tail, r_k, w_cur) if len(state.tail) else 0.0

    gate_log_rhs = math.log(delta_k)
    lhs_empirical = math.log(s_upper) if s_upper > 0.0 else -math.inf
    lhs_theoretical = schedule.j0_at(N) + _log_sum(
        list(eps_by_degree.values()) + [eps_tail]
    )
    if gate_mode == "empirical":
        gate_log_lhs = lhs_empirical
    elif gate_mode == "theoretical":
        gate_log_lhs = lhs_theoretical
    else:
        gate_log_lhs = -math.inf
    gate_passed = gate_mode == "off" or gate_log_lhs <= gate_log_rhs

    if not gate_passed:
        record = StepRecord(
            k=k,
            degree=N,
            n_remainder_terms=len(R_N),
            n_resonant_terms=len(Z_new),
            n_generator_terms=len(S),
            min_abs_divisor=min_div,
            delta_k=delta_k,
            gate_mode=gate_mode,
            gate_log_lhs=gate_log_lhs,
            gate_log_lhs_theoretical=lhs_theoretical,
            gate_log_lhs_empirical=lhs_empirical,
            gate_log_rhs=gate_log_rhs,
            gate_passed=False,
            generator_norm_upper=s_upper,
            eps_by_degree=eps_by_degree,
            eps_tail=eps_tail,
            range_residual=math.nan,
            truncation_loss_log=math.nan,
            wall_time_s=time.perf_counter() - t0,
        )
        raise StepRejectedError(
            f"step {k} gate failed ({gate_mode}): "
            f"log lhs {gate_log_lhs:.3f} > log rhs {gate_log_rhs:.3f}",
            gate_record=record,
        )

    cutoff = state.K + state.tail_buffer
    H_new = lie_transform(state.hamiltonian(), S, cutoff)

    # degree 0 must come back as D exactly; brackets only raise degree
    D = diagonal_quadratic(freq)
    quad_defect = (project_degree(H_new, 0, DegreePart.EQUAL) - D).max_abs_coeff()

    new_state = NormalFormState(
        frequencies=freq, K=state.K, k=k + 1, tail_buffer=state.tail_buffer
    )
    range_residual = quad_defect
    tail_parts = PolyHamiltonian.zero(M)
    for d in range(1, cutoff + 1):
        part = project_degree(H_new, d, DegreePart.EQUAL)
        if not len(part):
            continue
        if d <= N:
            kernel = project_resonant(part, ResonantPart.KERNEL)
            residual = project_resonant(part, ResonantPart.RANGE)
            range_residual = max(range_residual, residual.max_abs_coeff())
            if len(kernel):
                new_state.Z_by_degree[d] = kernel
        elif d <= state.K:
            new_state.R_by_degree[d] = part
        else:
            tail_parts = tail_parts + part
    new_state.tail = tail_parts

    # flow-lemma tail estimate for the discarded orders of the Lie series
    h = cutoff // N + 1
    if s_upper > 0.0 and delta_k > 0.0:
        H_upper = majorant_norm_upper(state.hamiltonian(), r_k, w_cur)
        loss_log = (
            math.log(2.0)
            + (math.log(H_upper) if H_upper > 0 else -math.inf)
            + h * (math.log(s_upper) - math.log(2.0 * delta_k))
        )
    else:
        loss_log = -math.inf

    record = StepRecord(
        k=k,
        degree=N,
        n_remainder_terms=len(R_N),
        n_resonant_terms=len(Z_new),
        n_generator_terms=len(S),
        min_abs_divisor=min_div,
        delta_k=delta_k,
        gate_mode=gate_mode,
        gate_log_lhs=gate_log_lhs,
        gate_log_lhs_theoretical=lhs_theoretical,
        gate_log_lhs_empirical=lhs_empirical,
        gate_log_rhs=gate_log_rhs,
        gate_passed=True,
        generator_norm_upper=s_upper,
        eps_by_degree=eps_by_degree,
        eps_tail=eps_tail,
        range_residual=range_residual,
        truncation_loss_log=loss_log,
        wall_time_s=time.perf_counter() - t0,
    )
    return new_state, record, S


# -- full iteration ---------------------------------------------------


def bnf_iterate(
    H0: PolyHamiltonian,
    freq: FrequencyVector,
    schedule: ParamSchedule,
    tail_buffer: int = 2,
    gate_mode: str = "empirical",
) -> Tuple[NormalFormState, BnfReport, List[PolyHamiltonian]]:
    """Run all K steps (or stop at the first rejected gate).

    Returns the final state, a report with per-step records and the
    worst-case constants evaluated on this schedule, and the list of
    generators in application order.
    """
    state = NormalFormState.initial(H0, freq, schedule.K, tail_buffer=tail_buffer)
    w0 = schedule.weight(0, freq.M)
    r0_norm = majorant_norm_upper(H0, schedule.rbar, w0) if len(H0) else 0.0

    steps: List[StepRecord] = []
    generators: List[PolyHamiltonian] = []
    rejected = False
    reason: Optional[str] = None
    for _ in range(schedule.K):
        try:
            state, record, S = bnf_step(state, schedule, gate_mode=gate_mode)
        except StepRejectedError as err:
            rejected = True
            reason = str(err)
            if err.gate_record is not None:
                steps.append(err.gate_record)
            break
        steps.append(record)
        generators.append(S)

    # smallness condition on the initial size, in logs
    lnJK = schedule.j0_at(schedule.K)
    eps0 = schedule.r0 / schedule.rbar
    delta0 = schedule.delta(0)
    if r0_norm > 0.0:
        s1_lhs = (
            math.log(r0_norm)
            + (schedule.K + 3) * math.log(4.0)
            + lnJK
            + math.log(eps0)
        )
    else:
        s1_lhs = -math.inf
    s1_rhs = math.log(delta0)

    # effective constants of the stability bounds on this schedule
    K = schedule.K
    ln_r0n = math.log(r0_norm) if r0_norm > 0.0 else -math.inf
    ln_c2 = (
        math.log(16.0 * math.e * K)
        + ln_r0n
        + (K + 1) * math.log(4.0)
        + lnJK
        - 2.0 * math.log(schedule.rbar)
    )
    ln_c3 = (
        ln_r0n
        + K * math.log(16.0 * math.e * K)
        + K * (K + 2) * math.log(4.0)
        + K * lnJK
        - (K + 1) * math.log(schedule.rbar)
    )
    log10_c2 = (ln_c2 + 2.0 * math.log(schedule.r0)) / LOG10
    log10_c3 = (ln_c3 + (K + 1) * math.log(schedule.r0)) / LOG10

    r_final = schedule.r(state.k)
    w_final = schedule.weight(state.k, freq.M)
    z_norms = {
        d: majorant_norm_upper(part, r_final, w_final)
        for d, part in sorted(state.Z_by_degree.items())
    }
    r_norms = {
        d: majorant_norm_upper(part, r_final, w_final)
        for d, part in sorted(state.R_by_degree.items())
    }
    tail_norm = (
        majorant_norm_upper(state.tail, r_final, w_final) if len(state.tail) else 0.0
    )

    all_res = all(
        project_resonant(part, ResonantPart.RANGE).max_abs_coeff() == 0.0
        for part in state.Z_by_degree.values()
    )
    odd_max = 0.0
    for d, part in state.Z_by_degree.items():
        if d % 2 == 1:
            odd_max = max(odd_max, part.max_abs_coeff())

    report = BnfReport(
        kind=schedule.kind.value,
        K=schedule.K,
        M=freq.M,
        r0=schedule.r0,
        gamma=schedule.gamma,
        p=schedule.p,
        q=schedule.q,
        s0=schedule.s0,
        rbar=schedule.rbar,
        C=schedule.C,
        tail_buffer=tail_buffer,
        gate_mode=gate_mode,
        completed_steps=state.k,
        rejected=rejected,
        rejection_reason=reason,
        steps=steps,
        j_log_by_step=[schedule.j0_at(i) for i in range(schedule.K + 1)],
        s1_log_lhs=s1_lhs,
        s1_log_rhs=s1_rhs,
        s1_passed=s1_lhs <= s1_rhs,
        log10_c2_bound=log10_c2,
        log10_c3_bound=log10_c3,
        z_norms=z_norms,
        r_norms=r_norms,
        tail_norm=tail_norm,
        all_z_resonant=all_res,
        odd_z_max_coeff=odd_max,
        generators=list(generators),
    )
    return state, report, generators


# -- lifespan estimates -----------------------------------------------


@dataclass(frozen=True)
class LifespanParams:
    """Inputs of the stability-time lower bounds.

    F_norm is the nonlinearity majorant |F|_R on the disc of radius R;
    gamma the Diophantine quality; p the Sobolev regularity (Sobolev
    bounds) or irrelevant (sub-exponential); s, q the sub-exponential
    weight parameters; c the structural exponent constant; C1..C3 the
    unspecified absolute constants, all defaulting to 1.
    """

    F_norm: float
    R: float
    gamma: float
    p: float = 2.0
    q: float = 2.0
    s: float = 1.0
    c: float = 1.0
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0

    def __post_init__(self):
        if self.F_norm <= 0:
            raise ValidationError(f"F_norm must be positive, got {self.F_norm}")
        if self.R <= 0:
            raise ValidationError(f"R must be positive, got {self.R}")
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.p <= 1.0:
            raise ValidationError(f"p must exceed 1, got {self.p}")
        if not 1.0 < self.q <= 2.0:
            raise ValidationError(f"q must lie in (1, 2], got {self.q}")
        if self.s <= 0:
            raise ValidationError(f"s must be positive, got {self.s}")
        if self.c <= 0:
            raise ValidationError(f"c must be positive, got {self.c}")
        for name in ("C1", "C2", "C3"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")

    @property
    def delta_sobolev(self) -> float:
        """Size scale of the Sobolev smallness condition: R / (2^5 |F|_R)."""
        return self.R / (32.0 * self.F_norm)

    @property
    def log_delta_subexp(self) -> float:
        """ln of the sub-exponential threshold (min of the two branches)."""
        inner = -((self.c / (self.gamma**4 * self.s)) ** (1.0 / (self.q - 1.0)))
        first = -math.log(self.C1 * self.F_norm) + _exp_safe(inner)
        second = -math.log(self.C2 * self.F_norm)
        return min(first, second)


@dataclass(frozen=True)
class TimeEstimate:
    """One evaluated bound; log fields stay finite when floats cannot."""

    kind: str
    delta: float
    log10_threshold: float
    within_threshold: bool
    log10_time: float

    @property
    def threshold(self) -> float:
        return _exp_safe(self.log10_threshold * LOG10)

    @property
    def time(self) -> float:
        return _exp_safe(self.log10_time * LOG10)


def optimal_sobolev_exponent(delta: float, params: LifespanParams) -> float:
    """Regularity that maximizes the Sobolev bound at size delta.

    p(delta) = 1 + (ln(delta_S/delta) / (24 c^2 ln(1/gamma)))^{3/5};
    requires delta < delta_S.
    """
    d_s = params.delta_sobolev
    if delta <= 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    if delta >= d_s:
        raise ValidationError(
            f"delta must lie below the size scale {d_s:.3e}, got {delta}"
        )
    ratio = math.log(d_s / delta)
    return 1.0 + (ratio / (24.0 * params.c**2 * math.log(1.0 / params.gamma))) ** 0.6


def predicted_times(delta: float, params: LifespanParams) -> Dict[str, object]:
    """Evaluate the three stability-time lower bounds at size delta.

    Returns {"T_sobolev", "T_coro", "T_subexp", "p_of_delta"}: the fixed-
    regularity bound, the regularity-optimized bound, the sub-exponential
    bound, and the optimizing exponent.  Everything is computed in logs,
    so thresholds far below float underflow still compare correctly.
    A delta above a bound's threshold yields NaN in that bound's time
    (and in p_of_delta when delta is not below the size scale): the
    formulas are only claims below threshold.
    """
    if delta <= 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    c = params.c
    gamma = params.gamma
    ln_delta = math.log(delta)
    out: Dict[str, object] = {}

    # fixed regularity: threshold delta_S gamma^{c p}, time
    # (R gamma^{c p^2} / (2 |F| delta)) (delta_S/delta)^{(1/c)(p-1)^{1/3}}
    d_s = params.delta_sobolev
    p = params.p
    ln_thr = math.log(d_s) + c * p * math.log(gamma)
    within = ln_delta <= ln_thr
    ln_ratio = math.log(d_s) - ln_delta
    if within:
        ln_T = (
            math.log(params.R)
            + c * p * p * math.log(gamma)
            - math.log(2.0 * params.F_norm)
            - ln_delta
            + (1.0 / c) * (p - 1.0) ** (1.0 / 3.0) * ln_ratio
        )
    else:
        ln_T = math.nan
    out["T_sobolev"] = TimeEstimate(
        kind="sobolev",
        delta=delta,
        log10_threshold=ln_thr / LOG10,
        within_threshold=within,
        log10_time=ln_T / LOG10,
    )

    # optimized regularity: threshold delta_S gamma^b with
    # b = 24 c^2 (2^6 36^2)^{5/3}; time gains exp(C (ln ratio)^{6/5})
    b = 24.0 * c * c * (64.0 * 36.0**2) ** (5.0 / 3.0)
    ln_thr_opt = math.log(d_s) + b * math.log(gamma)
    within_opt = ln_delta <= ln_thr_opt
    if within_opt:
        gain = (
            c
            * math.log(1.0 / gamma) ** (-0.2)
            / (24.0 * c * c) ** 1.2
            * max(ln_ratio, 0.0) ** 1.2
        )
        ln_T_opt = math.log(params.R) - math.log(2.0 * params.F_norm) - ln_delta + gain
    else:
        ln_T_opt = math.nan
    out["T_coro"] = TimeEstimate(
        kind="sobolev_optimal",
        delta=delta,
        log10_threshold=ln_thr_opt / LOG10,
        within_threshold=within_opt,
        log10_time=ln_T_opt / LOG10,
    )

    # sub-exponential weights: time C3 (delta_sE/delta) exp((1/2) ln(ratio)
    # (gamma^4 s lnln(ratio) / c)^{(q-1)/2}); lnln clamped at 0 so the
    # bound degrades continuously to C3 * ratio near the threshold
    ln_thr_se = params.log_delta_subexp
    within_se = ln_delta <= ln_thr_se
    ln_ratio_se = ln_thr_se - ln_delta
    if within_se:
        lnln = math.log(ln_ratio_se) if ln_ratio_se > 1.0 else 0.0
        boost = 0.5 * ln_ratio_se * (
            gamma**4 * params.s * lnln / c
        ) ** ((params.q - 1.0) / 2.0)
        ln_T_se = math.log(params.C3) + ln_ratio_se + boost
    else:
        ln_T_se = math.nan
    out["T_subexp"] = TimeEstimate(
        kind="subexp",
        delta=delta,
        log10_threshold=ln_thr_se / LOG10,
        within_threshold=within_se,
        log10_time=ln_T_se / LOG10,
    )

    if delta < d_s:
        out["p_of_delta"] = optimal_sobolev_exponent(delta, params)
    else:
        out["p_of_delta"] = math.nan
    return out
