import math

import numpy as np
import pytest

from beamnf.errors import DimensionError, ValidationError
from beamnf.hamiltonian import (
    CompiledField,
    DegreePart,
    MultiIndex,
    PolyHamiltonian,
    ResonantPart,
    dumps_hamiltonian,
    evaluate,
    is_resonant_key,
    lie_transform,
    loads_hamiltonian,
    majorant_norm,
    majorant_norm_upper,
    poisson_bracket,
    project_degree,
    project_resonant,
    scaling_degree,
    truncate_total_degree,
    vector_field,
)
from beamnf.rng import generator
from beamnf.weights import SeqState, Weight


def random_state(M, seed):
    rng = generator(seed, "test-hamiltonian")
    c = rng.normal(size=2 * M + 1) + 1j * rng.normal(size=2 * M + 1)
    return SeqState(0.3 * c, M)


def random_real_poly(M, n_terms, max_deg, seed, stream="poly"):
    """Real momentum-free polynomial: each draw adds (a, b, c) and (b, a, cbar)."""
    rng = generator(seed, stream)
    terms = []
    for _ in range(n_terms):
        deg = int(rng.integers(2, max_deg + 1))
        da = int(rng.integers(0, deg + 1))
        alpha: dict = {}
        beta: dict = {}
        for _ in range(da):
            j = int(rng.integers(-M, M + 1))
            alpha[j] = alpha.get(j, 0) + 1
        for _ in range(deg - da):
            j = int(rng.integers(-M, M + 1))
            beta[j] = beta.get(j, 0) + 1
        c = complex(rng.normal(), rng.normal())
        terms.append((alpha, beta, c))
        terms.append((beta, alpha, np.conj(c)))
    return PolyHamiltonian(M, terms)


# -- multi-indices and container basics --------------------------------


def test_multiindex_canonicalization():
    a = MultiIndex({3: 2, -1: 1, 5: 0})
    assert a.degree == 3
    assert a.exponent(5) == 0
    assert a.exponent(3) == 2
    assert a.support() == (-1, 3)
    assert a.momentum() == 3 * 2 - 1
    assert MultiIndex({-1: 1, 3: 2}) == a
    assert hash(MultiIndex({3: 2, -1: 1})) == hash(a)


def test_multiindex_rejects_negative_exponent():
    with pytest.raises(ValidationError):
        MultiIndex({2: -1})


def test_terms_merge_and_drop():
    H = PolyHamiltonian(3, [({1: 1}, {2: 1}, 1.0), ({1: 1}, {2: 1}, -1.0)])
    assert len(H) == 0
    G = PolyHamiltonian(3, [({1: 1}, {2: 1}, 1.0), ({1: 1}, {2: 1}, 0.5)])
    assert len(G) == 1
    assert G.coeff({1: 1}, {2: 1}) == pytest.approx(1.5)


def test_window_enforced():
    with pytest.raises(DimensionError):
        PolyHamiltonian(2, [({3: 1}, {}, 1.0)])


def test_reality_and_momentum_defects():
    H = random_real_poly(3, 8, 4, 21)
    assert H.reality_defect() <= 1e-14
    assert H.is_real()
    skew = H + PolyHamiltonian(3, [({2: 1}, {}, 1j)])
    assert not skew.is_real()
    P = PolyHamiltonian(3, [({1: 1, 2: 1}, {3: 1}, 1.0)])
    assert P.momentum_defect() == 0
    assert P.is_momentum_conserving()
    Q = PolyHamiltonian(3, [({1: 1}, {3: 1}, 1.0)])
    assert Q.momentum_defect() == 2


def test_arithmetic_is_termwise():
    H = random_real_poly(3, 5, 4, 22)
    G = random_real_poly(3, 5, 4, 23)
    S = H + G - G
    for mono in H:
        assert S.coeff(mono.alpha, mono.beta) == pytest.approx(
            mono.coeff, rel=1e-12, abs=1e-15
        )
    assert len((H * 0.0)) == 0
    assert (-H + H).max_abs_coeff() == 0.0


# -- degree and resonance projections ----------------------------------


def test_project_degree_partitions():
    # project_degree selects by scaling degree d, i.e. total degree d + 2
    H = random_real_poly(4, 12, 5, 31)
    parts = [project_degree(H, d) for d in range(0, 4)]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    assert len(total) == len(H)
    assert (total - H).max_abs_coeff() <= 1e-15
    high = project_degree(H, 1, DegreePart.GREATER)
    assert all(d > 3 for d in high.degrees())


def test_truncate_total_degree():
    H = random_real_poly(4, 12, 6, 32)
    T = truncate_total_degree(H, 4)
    assert all(d <= 4 for d in T.degrees())
    # the complement is exactly the scaling-degree > 2 projection
    rest = project_degree(H, 2, DegreePart.GREATER)
    assert ((T + rest) - H).max_abs_coeff() == 0.0


def test_resonance_predicate_and_split():
    # resonant means the reduced super-action vector of alpha - beta vanishes
    assert is_resonant_key(((-1, 1), (2, 1)), ((-2, 1), (1, 1)))
    assert not is_resonant_key(((1, 2),), ((2, 1),))
    assert not is_resonant_key(((-2, 1), (2, 1)), ((1, 1), (-1, 1)))
    H = random_real_poly(4, 15, 5, 33)
    Z = project_resonant(H, ResonantPart.KERNEL)
    N = project_resonant(H, ResonantPart.RANGE)
    assert ((Z + N) - H).max_abs_coeff() == 0.0
    for mono in Z:
        assert abs(mono.alpha.degree) == abs(mono.beta.degree)


def test_odd_degree_terms_are_never_resonant():
    H = random_real_poly(4, 20, 5, 34)
    Z = project_resonant(H, ResonantPart.KERNEL)
    assert all(d % 2 == 0 for d in Z.degrees())


def test_scaling_degree():
    H = PolyHamiltonian(3, [({1: 2}, {2: 1}, 1.0), ({1: 1}, {1: 1}, 2.0)])
    assert scaling_degree(H) == 0
    cub = PolyHamiltonian(3, [({1: 2}, {2: 1}, 1.0)])
    assert scaling_degree(cub) == 1
    assert scaling_degree(PolyHamiltonian.zero(3)) == math.inf


# -- Poisson bracket ---------------------------------------------------


def test_bracket_sign_convention():
    M = 2
    u1 = PolyHamiltonian(M, [({1: 1}, {}, 1.0)])
    ub1 = PolyHamiltonian(M, [({}, {1: 1}, 1.0)])
    out = poisson_bracket(u1, ub1)
    assert len(out) == 1
    assert out.coeff({}, {}) == pytest.approx(-1j)


def test_diagonal_bracket_eigenvalue():
    """Monomials are eigenvectors of bracketing with sum omega_j |u_j|^2."""
    M = 3
    omega = {j: math.sqrt(j**4 + 1.37) for j in range(-M, M + 1)}
    D = PolyHamiltonian(
        M, [({j: 1}, {j: 1}, omega[j]) for j in range(-M, M + 1)]
    )
    alpha, beta = {1: 2, -2: 1}, {3: 1}
    P = PolyHamiltonian(M, [(alpha, beta, 0.7 - 0.2j)])
    out = poisson_bracket(D, P)
    ell = {j: alpha.get(j, 0) - beta.get(j, 0) for j in set(alpha) | set(beta)}
    eig = 1j * sum(omega[j] * e for j, e in ell.items())
    assert len(out) == 1
    assert out.coeff(alpha, beta) == pytest.approx(eig * (0.7 - 0.2j), rel=1e-14)


def test_actions_commute():
    M = 3
    N1 = PolyHamiltonian(M, [({1: 1}, {1: 1}, 1.0)])
    N2 = PolyHamiltonian(M, [({2: 1}, {2: 1}, 3.0)])
    assert len(poisson_bracket(N1, N2)) == 0


def test_bracket_antisymmetry_and_bilinearity():
    H = random_real_poly(3, 6, 4, 41)
    G = random_real_poly(3, 6, 4, 42)
    anti = poisson_bracket(H, G) + poisson_bracket(G, H)
    assert anti.max_abs_coeff() <= 1e-13
    lin = poisson_bracket(H + G * 2.0, G) - (
        poisson_bracket(H, G) + poisson_bracket(G, G) * 2.0
    )
    assert lin.max_abs_coeff() <= 1e-13


def test_jacobi_identity():
    H = random_real_poly(3, 4, 3, 43)
    G = random_real_poly(3, 4, 3, 44)
    K = random_real_poly(3, 4, 3, 45)
    J = (
        poisson_bracket(poisson_bracket(H, G), K)
        + poisson_bracket(poisson_bracket(G, K), H)
        + poisson_bracket(poisson_bracket(K, H), G)
    )
    scale = max(
        1.0,
        H.max_abs_coeff() * G.max_abs_coeff() * K.max_abs_coeff(),
    )
    assert J.max_abs_coeff() / scale <= 1e-12


def test_bracket_preserves_reality_and_momentum():
    H = random_real_poly(3, 6, 4, 46)
    G = random_real_poly(3, 6, 4, 47)
    B = poisson_bracket(H, G)
    assert B.reality_defect() <= 1e-12
    Hm = PolyHamiltonian(3, [({1: 1, 2: 1}, {3: 1}, 1.0), ({3: 1}, {1: 1, 2: 1}, 1.0)])
    Gm = PolyHamiltonian(3, [({1: 2}, {2: 1}, 0.5), ({2: 1}, {1: 2}, 0.5)])
    assert poisson_bracket(Hm, Gm).momentum_defect() == 0


def test_bracket_degree_additivity():
    H = PolyHamiltonian(3, [({1: 2, 2: 1}, {}, 1.0), ({}, {1: 2, 2: 1}, 1.0)])
    G = PolyHamiltonian(3, [({2: 2}, {1: 1, 3: 1}, 1.0), ({1: 1, 3: 1}, {2: 2}, 1.0)])
    B = poisson_bracket(H, G)
    assert len(B) > 0
    assert set(B.degrees()) == {3 + 4 - 2}


# -- Lie transform -----------------------------------------------------


def manual_lie_series(H, S, max_total):
    out = truncate_total_degree(H, max_total)
    term = truncate_total_degree(H, max_total)
    k = 1
    while True:
        term = truncate_total_degree(poisson_bracket(term, S) * (1.0 / k), max_total)
        if term.max_abs_coeff() == 0.0:
            return out
        out = out + term
        k += 1


def test_lie_transform_matches_direct_series():
    M = 3
    H = random_real_poly(M, 6, 4, 51)
    S = PolyHamiltonian(
        M, [({1: 2}, {2: 1}, 0.3), ({2: 1}, {1: 2}, 0.3)]
    )
    cutoff = 4  # scaling degree; keeps total degree <= 6
    got = lie_transform(H, S, cutoff)
    want = manual_lie_series(H, S, cutoff + 2)
    assert (got - want).max_abs_coeff() <= 1e-13 * max(1.0, want.max_abs_coeff())


def test_lie_transform_identity_for_commuting_pair():
    M = 3
    H = PolyHamiltonian(M, [({1: 1}, {1: 1}, 2.0)])
    S = PolyHamiltonian(M, [({2: 1, 1: 1}, {2: 1, 1: 1}, 0.1)])
    out = lie_transform(H, S, 6)
    assert (out - H).max_abs_coeff() <= 1e-15


def test_lie_transform_rejects_quadratic_generator():
    M = 2
    H = PolyHamiltonian(M, [({1: 1}, {1: 1}, 1.0)])
    S = PolyHamiltonian(M, [({1: 1}, {2: 1}, 1.0)])
    with pytest.raises(ValidationError):
        lie_transform(H, S, 4)


# -- evaluation, vector field, compiled form ---------------------------


def test_evaluate_against_direct_sum():
    M = 3
    H = random_real_poly(M, 8, 4, 61)
    u = random_state(M, 62)
    direct = 0.0 + 0.0j
    for mono in H:
        val = mono.coeff
        for j, e in mono.alpha.items():
            val *= u[j] ** e
        for j, e in mono.beta.items():
            val *= np.conj(u[j]) ** e
        direct += val
    assert evaluate(H, u) == pytest.approx(direct, rel=1e-13)
    assert abs(evaluate(H, u).imag) <= 1e-13  # real Hamiltonian


def test_vector_field_matches_finite_differences():
    M = 3
    H = random_real_poly(M, 6, 4, 63)
    u = random_state(M, 64)
    X = vector_field(H, u)
    h = 1e-6
    for k in range(-M, M + 1):
        def shifted(dz):
            c = u.coeff.copy()
            c[k + M] += dz
            return SeqState(c, M)

        d_re = (evaluate(H, shifted(h)) - evaluate(H, shifted(-h))) / (2 * h)
        d_im = (evaluate(H, shifted(1j * h)) - evaluate(H, shifted(-1j * h))) / (2 * h)
        dH_dubar = 0.5 * (d_re + 1j * d_im)
        assert X[k] == pytest.approx(-1j * dH_dubar, rel=2e-8, abs=1e-8)


def test_majorant_field_dominates():
    M = 3
    H = random_real_poly(M, 6, 4, 65)
    u = random_state(M, 66)
    X = vector_field(H, u)
    Xm = vector_field(H, u, majorant=True)
    for k in range(-M, M + 1):
        assert abs(X[k]) <= abs(Xm[k]) + 1e-13


def test_compiled_field_consistency():
    M = 4
    H = random_real_poly(M, 10, 5, 67)
    cf = CompiledField(H)
    for seed in (68, 69, 70):
        u = random_state(M, seed)
        assert cf.value(u.coeff) == pytest.approx(evaluate(H, u), rel=1e-12)
        want = vector_field(H, u).coeff
        got = cf.field(u.coeff)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-14)


# -- majorant norm -----------------------------------------------------


def test_majorant_norm_single_mode_closed_form():
    """H = c u_1^2 ubar_1 has a one-dimensional Y-map: norm is 3|c| r / (2 w_1)."""
    M = 2
    c = 0.8 - 0.4j
    H = PolyHamiltonian(M, [({1: 2}, {1: 1}, c)])
    w = Weight.subexp(1.0, 1.5, 2.0, M)
    r = 0.25
    want = 1.5 * abs(c) * r / w(1)
    lo, up = majorant_norm(H, r, w)
    assert up == pytest.approx(want, rel=1e-12)
    assert lo == pytest.approx(want, rel=1e-6)
    assert majorant_norm_upper(H, r, w) == pytest.approx(up, rel=1e-13)


def test_majorant_norm_two_mode_bracket():
    M = 2
    c = 1.3
    H = PolyHamiltonian(M, [({1: 2}, {2: 1}, c)])
    w = Weight.sobolev(1.5, M)
    r = 0.5
    k1 = c * r / w(2)               # output mode 1, monomial y1 y2
    k2 = 0.5 * c * r * w(2) / w(1) ** 2  # output mode 2, monomial y1^2
    theta = np.linspace(0.0, np.pi / 2, 20001)
    y1, y2 = np.cos(theta), np.sin(theta)
    brute = np.sqrt((k1 * y1 * y2) ** 2 + (k2 * y1**2) ** 2).max()
    lo, up = majorant_norm(H, r, w)
    assert up == pytest.approx(math.hypot(k1, k2), rel=1e-12)
    assert lo == pytest.approx(brute, rel=1e-6)
    assert lo <= up + 1e-15


def test_majorant_norm_homogeneity_and_triangle():
    M = 3
    H = random_real_poly(M, 6, 4, 71)
    G = random_real_poly(M, 6, 4, 72)
    w = Weight.subexp(0.5, 1.5, 2.0, M)
    r = 0.3
    lo, up = majorant_norm(H, r, w)
    lo3, up3 = majorant_norm(H * 3.0, r, w)
    assert up3 == pytest.approx(3.0 * up, rel=1e-12)
    assert lo3 == pytest.approx(3.0 * lo, rel=1e-6)
    assert majorant_norm_upper(H + G, r, w) <= (
        majorant_norm_upper(H, r, w) + majorant_norm_upper(G, r, w) + 1e-12
    )
    assert majorant_norm(PolyHamiltonian.zero(M), r, w) == (0.0, 0.0)


# -- serialization -----------------------------------------------------


def test_dump_load_round_trip():
    H = random_real_poly(4, 10, 5, 81)
    text = dumps_hamiltonian(H)
    back = loads_hamiltonian(text)
    assert back.M == H.M
    assert len(back) == len(H)
    assert (back - H).max_abs_coeff() <= 1e-15


def test_load_respects_explicit_window(tmp_path):
    H = PolyHamiltonian(2, [({1: 1}, {2: 1}, 1.5 + 0.5j)])
    text = dumps_hamiltonian(H)
    wide = loads_hamiltonian(text, M=6)
    assert wide.M == 6
    assert wide.coeff({1: 1}, {2: 1}) == pytest.approx(1.5 + 0.5j)
