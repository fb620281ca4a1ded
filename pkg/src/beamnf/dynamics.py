"""Beam equation dynamics on truncated Fourier modes.

The fourth-order beam equation on the circle, with mass term m and an
analytic nonlinearity F'(psi), becomes a first-order complex system in
the variables u_j = (omega_j^{1/2} psi_j + i omega_j^{-1/2} v_j)/sqrt(2)
with omega_j = sqrt(j^4 + m):

    du_j/dt = -i omega_j u_j - (i/sqrt 2) omega_j^{-1/2} fhat_j,

where fhat is the Fourier transform of F'(psi) restricted to the window
|j| <= M.  This module supplies the change of variables, the expansion
of the nonlinear energy into a PolyHamiltonian (the monomial form used
by the algebra), two time steppers with exact linear part, escape-time
measurement, and time-1 generator flows.

The nonlinear term during stepping is evaluated spectrally through full
convolution powers of psi-hat, truncating only the final result to the
window; that is exactly the gradient of the truncated polynomial
energy, so the stepped system is Hamiltonian at machine precision, not
just an approximation of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .errors import BlowUpError, FlowDomainError, ValidationError
from .hamiltonian import CompiledField, PolyHamiltonian, _coerce
from .weights import SeqState, Weight, seq_norm

__all__ = [
    "NonlinearitySpec",
    "BeamState",
    "omega_vector",
    "complexify",
    "realify",
    "build_R0",
    "r0_norm_bound",
    "nonlinear_field",
    "polynomial_energy",
    "energy",
    "momentum",
    "Scheme",
    "step",
    "StabilityResult",
    "stability_time",
    "apply_generator_flow",
    "write_trajectory_csv",
    "write_checkpoint",
    "read_checkpoint",
]

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class NonlinearitySpec:
    """Taylor data F(y) = sum_{d>=3} F_d y^d on |y| <= R.

    taylor maps degree d to the real coefficient F_d; F_norm is the
    majorant sum |F|_R = sum |F_d| R^d.
    """

    taylor: Tuple[Tuple[int, float], ...]
    R: float = 1.0

    def __init__(self, taylor, R: float = 1.0):
        if hasattr(taylor, "items"):
            taylor = taylor.items()
        acc: Dict[int, float] = {}
        for d, coeff in taylor:
            d = int(d)
            coeff = float(coeff)
            if d < 3:
                raise ValidationError(
                    f"nonlinearity degrees start at 3, got degree {d}"
                )
            if not math.isfinite(coeff):
                raise ValidationError(f"coefficient at degree {d} is not finite")
            if coeff != 0.0:
                acc[d] = acc.get(d, 0.0) + coeff
        if R <= 0 or not math.isfinite(R):
            raise ValidationError(f"radius R must be positive and finite, got {R}")
        object.__setattr__(self, "taylor", tuple(sorted(acc.items())))
        object.__setattr__(self, "R", float(R))

    @classmethod
    def cubic(cls, coeff: float = 1.0, R: float = 1.0) -> "NonlinearitySpec":
        """F(y) = coeff * y^3, the default beam nonlinearity."""
        return cls({3: coeff}, R=R)

    @property
    def F_norm(self) -> float:
        return math.fsum(abs(c) * self.R**d for d, c in self.taylor)

    @property
    def max_degree(self) -> int:
        return self.taylor[-1][0] if self.taylor else 0

    def is_zero(self) -> bool:
        return not self.taylor


@dataclass
class BeamState:
    """Complexified spectral state u_j for |j| <= M at time t, mass m."""

    u: np.ndarray
    m: float
    t: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=complex)
        if u.ndim != 1 or len(u) % 2 == 0:
            raise ValidationError(
                f"u must be a 1-d array of odd length 2M+1, got shape {u.shape}"
            )
        if not 0 < self.m or not math.isfinite(self.m):
            raise ValidationError(f"mass must be positive and finite, got {self.m}")
        self.u = u.copy()

    @property
    def M(self) -> int:
        return (len(self.u) - 1) // 2

    def mode(self, j: int) -> complex:
        return complex(self.u[j + self.M])

    def seq(self) -> SeqState:
        return SeqState(self.u, self.M)

    def norm(self, w: Weight) -> float:
        return seq_norm(self.seq(), w)

    def copy(self) -> "BeamState":
        return BeamState(self.u, self.m, self.t)


def omega_vector(m: float, M: int) -> np.ndarray:
    """Linear frequencies sqrt(j^4 + m) on the window, index j + M."""
    j = np.arange(-M, M + 1, dtype=float)
    return np.sqrt(j**4 + m)


# -- change of variables ----------------------------------------------


def _check_real_sequence(x: SeqState, label: str, tol: float = 1e-12):
    arr = x.coeff
    defect = np.max(np.abs(arr - np.conj(arr[::-1]))) if len(arr) else 0.0
    scale = max(float(np.max(np.abs(arr))), 1.0)
    if defect > tol * scale:
        raise ValidationError(
            f"{label} is not a real-valued field: conjugate-symmetry defect "
            f"{defect:.3e}"
        )


def complexify(psi: SeqState, v: SeqState, m: float) -> BeamState:
    """u = (omega^{1/2} psi + i omega^{-1/2} v) / sqrt 2 at t = 0.

    psi is the displacement, v the velocity; both must be real fields
    (coefficients conjugate-symmetric under j -> -j).
    """
    if psi.M != v.M:
        raise ValidationError(f"window mismatch: psi M={psi.M}, v M={v.M}")
    _check_real_sequence(psi, "displacement")
    _check_real_sequence(v, "velocity")
    omega = omega_vector(m, psi.M)
    u = (np.sqrt(omega) * psi.coeff + 1j * v.coeff / np.sqrt(omega)) / SQRT2
    return BeamState(u, m, 0.0)


def realify(state: BeamState) -> Tuple[SeqState, SeqState]:
    """Inverse of complexify: (psi, v) from u.

    psi_j = omega^{-1/2}(u_j + conj(u_{-j}))/sqrt 2 and
    v_j = -i omega^{1/2}(u_j - conj(u_{-j}))/sqrt 2.
    """
    omega = omega_vector(state.m, state.M)
    u = state.u
    uc = np.conj(u[::-1])
    psi = (u + uc) / np.sqrt(omega) / SQRT2
    v = -1j * np.sqrt(omega) * (u - uc) / SQRT2
    return SeqState(psi, state.M), SeqState(v, state.M)


# -- polynomial form of the nonlinear energy --------------------------


def build_R0(
    spec: NonlinearitySpec, m: float, M: int, degree_cutoff: int
) -> PolyHamiltonian:
    """Expand the nonlinear energy into monomials u^alpha ubar^beta.

    The coefficient of a key (alpha, beta) of total degree d is
    F_d 2^{-d/2} d!/(alpha! beta!) prod_j omega_j^{-(alpha_j+beta_j)/2},
    over momentum-conserving keys only.  Real, momentum conserving by
    construction.
    """
    if degree_cutoff < 3:
        raise ValidationError(
            f"degree_cutoff must be at least 3, got {degree_cutoff}"
        )
    if spec.taylor and degree_cutoff > spec.max_degree:
        raise ValidationError(
            f"degree_cutoff {degree_cutoff} exceeds the Taylor data's top "
            f"degree {spec.max_degree}"
        )
    if M < 1:
        raise ValidationError(f"M must be positive, got {M}")
    omega = omega_vector(m, M)
    terms = []
    # slots: (mode j, conjugated?) with charge +j for u_j, +j for ubar_{-j}
    # i.e. charge of ubar_k is -k; enumerate multisets of d slots with
    # zero total charge, largest |charge| first for momentum pruning
    slots = []
    for j in range(-M, M + 1):
        slots.append((j, 0, j))       # u_j, charge +j
        slots.append((j, 1, -j))      # ubar_j, charge -j
    slots.sort(key=lambda t: (-abs(t[2]), t[2], t[1]))
    charges = [t[2] for t in slots]

    for d, F_d in spec.taylor:
        if d > degree_cutoff:
            break
        base = F_d * 2.0 ** (-d / 2.0) * math.factorial(d)
        counts = [0] * len(slots)

        def rec(idx: int, remaining: int, charge: int):
            if remaining == 0:
                if charge != 0:
                    return
                alpha = []
                beta = []
                denom = 1.0
                wfac = 1.0
                for (j, conj_flag, _), e in zip(slots, counts):
                    if not e:
                        continue
                    denom *= math.factorial(e)
                    wfac *= omega[j + M] ** (-e / 2.0)
                    (beta if conj_flag else alpha).append((j, e))
                terms.append((tuple(alpha), tuple(beta), base / denom * wfac))
                return
            if idx == len(slots):
                return
            # remaining slots have |charge| <= |charges[idx]|; prune when
            # even maximal opposite charges cannot cancel the imbalance
            max_rest = abs(charges[idx]) * remaining
            if abs(charge) > max_rest:
                return
            for e in range(remaining, -1, -1):
                counts[idx] = e
                rec(idx + 1, remaining - e, charge + e * charges[idx])
            counts[idx] = 0

        rec(0, d, 0)
    return PolyHamiltonian(M, terms)


def r0_norm_bound(spec: NonlinearitySpec, w: Weight, rbar: float) -> float:
    """Theoretical majorant bound 8 C_alg(p)/R^3 * |F|_R * rbar.

    Valid on radii with 2 C_alg(p) rbar < R; raises outside that range.
    """
    from .weights import alg_constant

    if rbar <= 0:
        raise ValidationError(f"rbar must be positive, got {rbar}")
    c_alg = alg_constant(w)
    if 2.0 * c_alg * rbar >= spec.R:
        raise ValidationError(
            f"bound needs 2 C_alg rbar < R: 2*{c_alg:.3f}*{rbar} >= {spec.R}"
        )
    return 8.0 * c_alg / spec.R**3 * spec.F_norm * rbar


# -- spectral evaluation of the nonlinearity --------------------------


def _psi_hat(state: BeamState) -> np.ndarray:
    omega = omega_vector(state.m, state.M)
    return (state.u + np.conj(state.u[::-1])) / np.sqrt(omega) / SQRT2


def _conv_power_slices(psi_hat: np.ndarray, spec: NonlinearitySpec, M: int):
    """Full convolution powers psi_hat^{*k} for k up to max_degree - 1.

    Yields (degree d, window slice of psi_hat^{*(d-1)}, zero coefficient
    of psi_hat^{*d}) for each active Taylor degree.
    """
    if not spec.taylor:
        return
    power = psi_hat  # psi^{*1}
    k = 1
    degrees = dict(spec.taylor)
    d_max = spec.max_degree
    while k + 1 <= d_max:
        power_next = np.convolve(power, psi_hat)  # psi^{*(k+1)}
        k += 1
        if k in degrees:
            center = (len(power) - 1) // 2
            window = power[center - M : center + M + 1]
            zero = power_next[(len(power_next) - 1) // 2]
            yield k, window, zero
        power = power_next


def nonlinear_field(state: BeamState, spec: NonlinearitySpec) -> np.ndarray:
    """The nonlinear part of du/dt: -(i/sqrt 2) omega^{-1/2} fhat.

    fhat_j = sum_d d F_d (psi_hat^{*(d-1)})_j, full convolutions with a
    final window truncation; exactly the gradient of the truncated
    polynomial energy.
    """
    if spec.is_zero():
        return np.zeros_like(state.u)
    M = state.M
    psi_hat = _psi_hat(state)
    fhat = np.zeros(2 * M + 1, dtype=complex)
    for d, window, _ in _conv_power_slices(psi_hat, spec, M):
        fhat += d * dict(spec.taylor)[d] * window
    omega = omega_vector(state.m, M)
    return -1j / SQRT2 * fhat / np.sqrt(omega)


def polynomial_energy(state: BeamState, spec: NonlinearitySpec) -> float:
    """The nonlinear energy sum_d F_d (psi_hat^{*d})_0 of the window field."""
    if spec.is_zero():
        return 0.0
    psi_hat = _psi_hat(state)
    total = 0.0
    for d, _, zero in _conv_power_slices(psi_hat, spec, state.M):
        total += dict(spec.taylor)[d] * zero.real
    return total


def energy(state: BeamState, spec: NonlinearitySpec) -> float:
    """Conserved energy sum_j omega_j |u_j|^2 + nonlinear part."""
    omega = omega_vector(state.m, state.M)
    return float(omega @ (np.abs(state.u) ** 2)) + polynomial_energy(state, spec)


def momentum(state: BeamState) -> float:
    """Conserved momentum sum_j j |u_j|^2."""
    j = np.arange(-state.M, state.M + 1, dtype=float)
    return float(j @ (np.abs(state.u) ** 2))


# -- time stepping ----------------------------------------------------


class Scheme(Enum):
    STRANG_SPLIT = "strang"
    RK4_INTERACTION = "rk4i"


def _require_finite(u: np.ndarray, t_last: float):
    if not np.all(np.isfinite(u.view(float))):
        raise BlowUpError(
            f"state became non-finite after t = {t_last:.6g}",
            last_finite_time=t_last,
        )


def step(
    state: BeamState,
    spec: NonlinearitySpec,
    dt: float,
    scheme=Scheme.STRANG_SPLIT,
) -> BeamState:
    """One time step; the linear rotation e^{-i omega dt} is exact.

    StrangSplit: half rotation, explicit midpoint substep on the
    nonlinear field, half rotation; symmetric, second order.
    RK4Interaction: classical fourth-order step on the interaction-
    picture field v = e^{i omega (t - t0)} u.  Both conserve momentum
    to roundoff.
    """
    if dt <= 0 or not math.isfinite(dt):
        raise ValidationError(f"dt must be positive and finite, got {dt}")
    scheme = _coerce(Scheme, scheme)
    omega = omega_vector(state.m, state.M)
    if scheme is Scheme.STRANG_SPLIT:
        half = np.exp(-1j * omega * (dt / 2.0))
        u1 = half * state.u
        if not spec.is_zero():
            s1 = BeamState(u1, state.m, state.t)
            k_mid = nonlinear_field(
                BeamState(u1 + (dt / 2.0) * nonlinear_field(s1, spec), state.m, state.t),
                spec,
            )
            u1 = u1 + dt * k_mid
        u2 = half * u1
    else:
        t0 = state.t

        def rhs(tau: float, v: np.ndarray) -> np.ndarray:
            phase = np.exp(1j * omega * tau)
            inner = BeamState(v / phase, state.m, t0 + tau)
            return phase * nonlinear_field(inner, spec)

        v = state.u.copy()
        k1 = rhs(0.0, v)
        k2 = rhs(dt / 2.0, v + (dt / 2.0) * k1)
        k3 = rhs(dt / 2.0, v + (dt / 2.0) * k2)
        k4 = rhs(dt, v + dt * k3)
        v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        u2 = np.exp(-1j * omega * dt) * v
    _require_finite(u2, state.t)
    return BeamState(u2, state.m, state.t + dt)


# -- escape times -----------------------------------------------------


@dataclass
class StabilityResult:
    """Escape measurement: first sampled time with norm > 2 delta."""

    escape_time: float
    censored: bool
    delta: float
    dt: float
    times: np.ndarray
    norms: np.ndarray
    energies: np.ndarray
    momenta: np.ndarray
    final_state: BeamState


def stability_time(
    u0: BeamState,
    spec: NonlinearitySpec,
    delta: float,
    w: Weight,
    horizon: float,
    dt: float,
    sample_every: int = 10,
    scheme=Scheme.STRANG_SPLIT,
) -> StabilityResult:
    """March until the weighted norm exceeds 2 delta or horizon is hit.

    The initial state must lie in the closed delta-ball of the weight;
    the norm is sampled every sample_every steps (and at start and end),
    so the reported escape time is the first sampled exceedance.
    """
    if delta <= 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    if horizon <= 0:
        raise ValidationError(f"horizon must be positive, got {horizon}")
    if sample_every < 1:
        raise ValidationError(f"sample_every must be >= 1, got {sample_every}")
    n0 = u0.norm(w)
    if n0 > delta * (1.0 + 1e-12):
        raise ValidationError(
            f"initial norm {n0:.6g} exceeds delta = {delta:.6g}"
        )
    times = [u0.t]
    norms = [n0]
    energies = [energy(u0, spec)]
    momenta = [momentum(u0)]
    state = u0
    n_steps = 0
    escape = None
    while state.t < u0.t + horizon - 1e-12 * max(horizon, 1.0):
        state = step(state, spec, dt, scheme)
        n_steps += 1
        if n_steps % sample_every == 0 or state.t >= u0.t + horizon - 1e-12:
            nw = state.norm(w)
            times.append(state.t)
            norms.append(nw)
            energies.append(energy(state, spec))
            momenta.append(momentum(state))
            if nw > 2.0 * delta:
                escape = state.t
                break
    return StabilityResult(
        escape_time=horizon if escape is None else escape - u0.t,
        censored=escape is None,
        delta=delta,
        dt=dt,
        times=np.array(times),
        norms=np.array(norms),
        energies=np.array(energies),
        momenta=np.array(momenta),
        final_state=state,
    )


# -- generator flows --------------------------------------------------


def apply_generator_flow(
    state: BeamState,
    S: PolyHamiltonian,
    direction: int = 1,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> BeamState:
    """Time-1 flow of the Hamiltonian vector field of S (direction -1
    for the inverse transformation).

    Adaptive eighth-order integration; the flow is a coordinate change,
    so the state's time stamp is unchanged.
    """
    if direction not in (1, -1):
        raise ValidationError(f"direction must be +1 or -1, got {direction}")
    if S.M != state.M:
        raise ValidationError(f"cutoff mismatch: S M={S.M}, state M={state.M}")
    if not len(S):
        return state.copy()
    field = CompiledField(S)

    def rhs(_t: float, u: np.ndarray) -> np.ndarray:
        return direction * field.field(u)

    sol = solve_ivp(
        rhs,
        (0.0, 1.0),
        state.u.astype(complex),
        method="DOP853",
        rtol=rtol,
        atol=atol,
        dense_output=False,
    )
    if not sol.success:
        raise FlowDomainError(
            f"generator flow failed: {sol.message}",
            last_finite_time=float(sol.t[-1]) if len(sol.t) else 0.0,
        )
    u1 = sol.y[:, -1]
    if not np.all(np.isfinite(u1.view(float))):
        raise FlowDomainError(
            "generator flow left the finite domain",
            last_finite_time=float(sol.t[-1]),
        )
    return BeamState(u1, state.m, state.t)


# -- persistence ------------------------------------------------------


def write_trajectory_csv(path, result: StabilityResult) -> None:
    """Columns t, norm_w, energy, momentum, one row per sample."""
    with open(path, "w") as fh:
        fh.write("t,norm_w,energy,momentum\n")
        for t, n, e, p in zip(
            result.times, result.norms, result.energies, result.momenta
        ):
            fh.write(f"{t:.17g},{n:.17g},{e:.17g},{p:.17g}\n")


def write_checkpoint(path, state: BeamState) -> None:
    """Little-endian float64 record: M, m, t, then re/im pairs of u."""
    M = float(state.M)
    parts = [M, state.m, state.t]
    for z in state.u:
        parts.append(z.real)
        parts.append(z.imag)
    np.asarray(parts, dtype="<f8").tofile(path)


def read_checkpoint(path) -> BeamState:
    raw = np.fromfile(path, dtype="<f8")
    if len(raw) < 3:
        raise ValidationError(f"checkpoint {path} is truncated")
    M = int(raw[0])
    expected = 3 + 2 * (2 * M + 1)
    if len(raw) != expected:
        raise ValidationError(
            f"checkpoint {path} has {len(raw)} floats, expected {expected}"
        )
    m = float(raw[1])
    t = float(raw[2])
    re = raw[3::2]
    im = raw[4::2]
    return BeamState(re + 1j * im, m, t)
