import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fichera.discretization import Reduction, assemble_dirichlet_laplacian, build_grid, integrate
from fichera.eigensolver import (
    amplitude,
    count_below,
    decay_fit,
    ladder,
    lanczos_ritz,
    rayleigh_quotient,
    richardson,
    second_ritz_value,
    smallest_eigenpair,
    solve_domain,
    symmetry_check,
    threshold,
    truncation_study,
)
from fichera.geometry import DomainSpec


def dense(d, m, reduction=Reduction.FULL):
    g = build_grid(d, m, reduction)
    A = assemble_dirichlet_laplacian(g)
    return g, A, np.linalg.eigvalsh(A.matrix.toarray())


def test_interval_ground_state_matches_closed_form():
    m = 16
    res = solve_domain(DomainSpec.box([(-1, 1)]), m)
    assert res.lam == pytest.approx(4 * m * m * math.sin(math.pi / (4 * m)) ** 2, rel=1e-9)
    assert res.residual < 1e-8
    assert np.all(res.vector > 0)
    assert integrate(res.grid, res.vector**2) == pytest.approx(1.0)


@pytest.mark.parametrize("d", [DomainSpec.corner(2, 4), DomainSpec.cross(2, 4)])
def test_ground_state_matches_dense_solver(d):
    red = Reduction.CROSS_ORTHANT if d.kind.value == "cross" else Reduction.FULL
    g, A, ev = dense(d, 4, red)
    res = smallest_eigenpair(A, g)
    assert res.lam == pytest.approx(ev[0], rel=1e-9)
    assert rayleigh_quotient(A, g, res.vector) == pytest.approx(ev[0], rel=1e-9)
    assert second_ritz_value(A, res, steps=120) == pytest.approx(ev[1], rel=1e-6)


def test_lanczos_recovers_extreme_eigenvalues():
    _, A, ev = dense(DomainSpec.corner(2, 4), 4)
    ritz = lanczos_ritz(A, steps=150)
    assert ritz[0] == pytest.approx(ev[0], rel=1e-9)
    assert ritz[-1] == pytest.approx(ev[-1], rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 30.0))
def test_inertia_count_matches_dense_spectrum(sigma):
    _, A, ev = dense(DomainSpec.corner(2, 4), 4)
    if np.min(np.abs(ev - sigma)) < 1e-6:
        return
    count, shift = count_below(A, sigma)
    assert shift == 0.0
    assert count == int(np.sum(ev < sigma))


def test_inertia_count_survives_exact_eigenvalue():
    _, A, ev = dense(DomainSpec.box([(-1, 1)]), 4)
    count, shift = count_below(A, ev[2])
    assert count in (2, 3)


def test_symmetry_of_ground_state():
    res = solve_domain(DomainSpec.cross(2, 4), 4, Reduction.FULL)
    assert symmetry_check(res.grid, res.vector) < 1e-7
    reduced = solve_domain(DomainSpec.cross(2, 4), 4)
    with pytest.raises(ValueError):
        symmetry_check(reduced.grid, reduced.vector)


@pytest.mark.parametrize("p", [1.0, 2.0, 0.6])
def test_richardson_recovers_synthetic_power_law(p):
    pairs = [(h, 2.5 + 0.7 * h**p) for h in (1 / 8, 1 / 12, 1 / 16)]
    ext = richardson(pairs)
    assert ext.value == pytest.approx(2.5, abs=1e-10)
    assert ext.observed_order == pytest.approx(p, rel=1e-8)
    assert not ext.flagged


def test_richardson_flags_nonmonotone_and_rejects_short_input():
    ext = richardson([(0.25, 3.0), (0.125, 2.9), (0.0625, 2.95)])
    assert ext.flagged and ext.value == 2.95
    with pytest.raises(ValueError):
        richardson([(0.25, 3.0), (0.125, 2.9)])


def test_ladder_on_interval_converges_to_pi_squared_over_four():
    results, ext = ladder(DomainSpec.box([(-1, 1)]), [8, 16, 32])
    assert ext.observed_order == pytest.approx(2.0, abs=0.05)
    assert ext.value == pytest.approx(math.pi**2 / 4, abs=1e-5)
    assert json.loads(results[0].to_json())["m"] == 8
    with pytest.raises(ValueError):
        ladder(DomainSpec.box([(-1, 1)]), [16, 8, 32])


def test_threshold_of_planar_corner_is_interval_energy():
    ext = threshold(DomainSpec.corner(2), [8, 16, 32])
    assert ext.value == pytest.approx(math.pi**2 / 4, abs=1e-5)


def test_truncation_study_decays():
    study = truncation_study(DomainSpec.corner(2), 4, [4, 5, 6])
    assert study.decaying
    assert study.delta_R < study.increments[0]
    assert all(b <= a for a, b in zip(study.lambdas, study.lambdas[1:]))


def test_decay_fit_on_synthetic_exponential():
    g = build_grid(DomainSpec.corner(2, 8), 4)
    r = np.abs(g.nodes).max(axis=1)
    fit = decay_fit(g, np.exp(-0.9 * r))
    assert fit.alpha == pytest.approx(0.9, rel=1e-10)
    assert fit.correlation == pytest.approx(1.0)


def test_ground_state_decays_at_threshold_gap_rate():
    d = DomainSpec.corner(2, 8)
    res = solve_domain(d, 8)
    fit = decay_fit(res.grid, res.vector)
    gap = math.sqrt(4 * 64 * math.sin(math.pi / 32) ** 2 - res.lam)
    # the truncation wall steepens the shell profile, so the gap rate is a lower bound
    assert gap * 0.95 < fit.alpha < 2 * gap
    assert fit.correlation > 0.99
    assert amplitude(res) > 0


def test_vector_csv(tmp_path):
    res = solve_domain(DomainSpec.box([(-1, 1)]), 4)
    res.write_vector_csv(tmp_path / "v.csv")
    data = np.loadtxt(tmp_path / "v.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, -1], res.vector)
