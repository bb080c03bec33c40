import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sumweight.graph import complete_graph, from_edge_list, generate_rgg, is_connected
from sumweight.models import (
    FamilyError,
    bwgossip_failure_set,
    bwgossip_set,
    expected_matrix,
    pushsum_enumerated_set,
    pushsum_kempe_set,
    random_gossip_set,
)
from sumweight.spectral import (
    AssumptionError,
    contraction_matrix,
    deflated_Sv,
    expected_kron,
    gelfand_radius,
    kappa,
    kempe_closed_forms,
    spectral_radius,
)
from sumweight.models import broadcast_gossip_set

P3 = from_edge_list(3, [(0, 1), (1, 2)])
K2 = from_edge_list(2, [(0, 1)])


def loop_kron(fam):
    return sum(p * np.kron(k, k) for p, k in zip(fam.probs, fam.matrices))


def centering(n):
    return np.eye(n) - np.ones((n, n)) / n


def test_p3_expected_matrix():
    em = expected_matrix(bwgossip_set(P3)) * 18
    assert np.allclose(em, [[15, 3, 0], [2, 14, 2], [0, 3, 15]])


def test_k2_expected_kron_rows():
    ekk = expected_kron(bwgossip_set(K2))
    # K0 = [[.5,.5],[0,1]], K1 = [[1,0],[.5,.5]], each with probability 1/2
    want = np.array(
        [
            [0.625, 0.125, 0.125, 0.125],
            [0.25, 0.5, 0.0, 0.25],
            [0.25, 0.0, 0.5, 0.25],
            [0.125, 0.125, 0.125, 0.625],
        ]
    )
    assert np.allclose(ekk, loop_kron(bwgossip_set(K2)))
    assert np.allclose(ekk, want)


@given(st.integers(2, 9), st.integers(0, 1000), st.sampled_from([0.0, 0.3]))
@settings(max_examples=20, deadline=None)
def test_expected_kron_matches_loop(n, seed, p_e):
    g = generate_rgg(n, 6.0, seed)
    if not is_connected(g):
        return
    fam = bwgossip_failure_set(g, p_e)
    assert np.abs(expected_kron(fam) - loop_kron(fam)).max() < 1e-13


@pytest.mark.parametrize("n", [2, 3, 4])
def test_pushsum_closed_form_matches_enumeration(n):
    closed = pushsum_kempe_set(n).closed_moments[1]
    assert np.abs(closed - loop_kron(pushsum_enumerated_set(n))).max() < 1e-13


def test_contraction_powers_match_sequence_enumeration():
    # R^t = (C (x) C) E[P_t (x) P_t] for row-stochastic draws
    fam = bwgossip_set(P3)
    r = contraction_matrix(fam)
    c = np.kron(centering(3), centering(3))
    t = 3
    total = np.zeros((9, 9))
    for seq in itertools.product(range(len(fam)), repeat=t):
        p = np.eye(3)
        w = 1.0
        for m in seq:
            p = p @ fam.matrices[m]
            w *= fam.probs[m]
        total += w * np.kron(p, p)
    assert np.abs(np.linalg.matrix_power(r, t) - c @ total).max() < 1e-14


def test_contraction_kernel_contains_ones():
    g = generate_rgg(8, 4.0, 3)
    r = contraction_matrix(bwgossip_set(g))
    assert np.abs(r @ np.ones(64)).max() < 1e-13


def test_k2_contraction_is_rank_one():
    r = contraction_matrix(bwgossip_set(K2))
    assert np.linalg.matrix_rank(r, tol=1e-12) == 1
    assert spectral_radius(r) == pytest.approx(0.25, abs=1e-12)


def test_spectral_radius_basic():
    assert spectral_radius(np.eye(4)) == pytest.approx(1.0)
    assert spectral_radius(np.triu(np.ones((5, 5)), 1)) < 1e-6
    assert spectral_radius(np.array([[0.0, 2.0], [-2.0, 0.0]])) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))
    with pytest.raises(ValueError):
        spectral_radius(np.array([[np.nan]]))


@given(st.integers(2, 8), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_gelfand_agrees_with_eig(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    m = m @ m.T / n  # symmetric: no Jordan blocks, Gelfand converges fast
    assert gelfand_radius(m) == pytest.approx(spectral_radius(m), rel=1e-9)


def test_gelfand_nilpotent():
    assert gelfand_radius(np.triu(np.ones((4, 4)), 1)) == 0.0


def test_kappa_k2():
    rep = kappa(bwgossip_set(K2))
    assert rep.rho_R == pytest.approx(0.25, abs=1e-12)
    assert rep.kappa == pytest.approx(math.log(4), abs=1e-12)
    assert not rep.exact_finite_time


def test_kappa_random_gossip_k2_is_exact():
    rep = kappa(random_gossip_set(K2))
    assert rep.rho_R == 0.0 and math.isinf(rep.kappa) and rep.exact_finite_time
    assert rep.to_dict()["kappa"] == "inf"


def test_kappa_rejects_failing_assumptions():
    with pytest.raises(AssumptionError, match="B"):
        kappa(bwgossip_set(from_edge_list(4, [(0, 1), (2, 3)]), allow_disconnected=True))
    with pytest.raises(AssumptionError, match="A1"):
        kappa(broadcast_gossip_set(P3))


def test_size_cap():
    with pytest.raises(FamilyError):
        kappa(bwgossip_set(complete_graph(12)), max_n=10)


@pytest.mark.parametrize("n", range(2, 11))
def test_pushsum_pipeline_matches_closed_form(n):
    rep = kappa(pushsum_kempe_set(n))
    assert rep.rho_R == pytest.approx(0.5 - 1 / (4 * n), abs=1e-12)


def test_kempe_closed_forms():
    cf = kempe_closed_forms(4)
    assert cf["rho_R"] == pytest.approx(0.4375)
    assert np.allclose(cf["E_KKt"].sum(axis=1), 0.4375 + 0.75)
    with pytest.raises(ValueError):
        kempe_closed_forms(1)


def test_sv_random_gossip_uses_uniform_vector():
    g = generate_rgg(6, 6.0, 1)
    fam = random_gossip_set(g)
    sv, _ = deflated_Sv(fam)
    ekk = expected_kron(fam)
    assert np.allclose(sv, ekk - np.full((36, 36), 1 / 36))


def test_sv_spectrum_is_deflated():
    fam = bwgossip_set(P3)
    sv, rho = deflated_Sv(fam)
    ev = np.sort(np.abs(np.linalg.eigvals(expected_kron(fam))))
    ev_sv = np.sort(np.abs(np.linalg.eigvals(sv)))
    # the unit eigenvalue is replaced by zero, everything else is kept
    assert ev[-1] == pytest.approx(1.0)
    assert np.allclose(np.sort(np.append(ev[:-1], 0.0)), ev_sv, atol=1e-10)
    assert rho == pytest.approx(ev[-2], abs=1e-10)


@given(st.integers(3, 9), st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_kappa_dominates_deflation_bound(n, seed):
    g = generate_rgg(n, 5.0, seed)
    if not is_connected(g):
        return
    for fam in (bwgossip_set(g), random_gossip_set(g)):
        rep = kappa(fam)
        assert rep.rho_R <= rep.boyd_rho + 1e-9
        assert 0.0 <= rep.rho_R < 1.0


def test_failure_kappa_decreases():
    g = generate_rgg(8, 2.0, 5)
    assert is_connected(g)
    ks = [kappa(bwgossip_failure_set(g, p)).kappa for p in (0.0, 0.1, 0.2, 0.3)]
    assert all(a > b for a, b in zip(ks, ks[1:]))


@given(st.integers(2, 8), st.integers(0, 500), st.sampled_from([0.0, 0.2]))
@settings(max_examples=15, deadline=None)
def test_second_moment_preserves_ones(n, seed, p_e):
    g = generate_rgg(n, 6.0, seed)
    if not is_connected(g):
        return
    fam = bwgossip_failure_set(g, p_e)
    assert np.allclose(expected_kron(fam) @ np.ones(n * n), 1.0, atol=1e-13)
    assert np.allclose(expected_matrix(fam) @ np.ones(n), 1.0, atol=1e-13)


def test_random_gossip_k2_contraction_vanishes():
    assert np.abs(contraction_matrix(random_gossip_set(K2))).max() < 1e-15


def test_k2_rank_one_quadratic_form():
    q = 0.5 * np.array([1.0, -1.0, -1.0, 1.0])
    ekk = expected_kron(bwgossip_set(K2))
    assert q @ ekk @ q == pytest.approx(0.25, abs=1e-15)
    _, rho = deflated_Sv(bwgossip_set(K2))
    assert rho < 1


def test_sv_spectrum_pushsum_n2():
    fam = pushsum_enumerated_set(2)
    sv, _ = deflated_Sv(fam)
    full = np.sort_complex(np.linalg.eigvals(expected_kron(fam)))
    defl = np.sort_complex(np.linalg.eigvals(sv))
    one = np.argmin(np.abs(full - 1))
    want = np.sort_complex(np.append(np.delete(full, one), 0.0))
    assert np.allclose(defl, want, atol=1e-9)


@pytest.mark.parametrize("n", range(2, 11))
def test_recursion_factor_equals_rho(n):
    cf = kempe_closed_forms(n)
    assert cf["recursion_factor"] == cf["rho_R"] == pytest.approx(0.5 - 1 / (4 * n))
