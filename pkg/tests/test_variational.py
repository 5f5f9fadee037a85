import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fichera.discretization import Reduction
from fichera.eigensolver import ExtrapolatedValue, solve_domain
from fichera.geometry import DomainSpec
from fichera.variational import (
    STEKLOV_BOUND,
    Bump,
    CertificateError,
    SteklovViolation,
    corner_certificate,
    corner_certificate_scan,
    cross_certificate,
    steklov_check,
)

# planar corner ground energy to ~1e-3 (a coarse stand-in for the extrapolated value)
LAMBDA2 = 2.2912


@pytest.fixture(scope="module")
def corner_states():
    d = DomainSpec.corner(2, 8)
    return solve_domain(d, 4), solve_domain(d, 8)


@pytest.fixture(scope="module")
def cross_states():
    d = DomainSpec.cross(2, 4)
    return solve_domain(d, 8), solve_domain(d, 16)


def test_corner_routes_agree_within_quadrature_budget(corner_states):
    coarse, fine = corner_states
    for beta in (0.4, 0.1):
        cert = corner_certificate(fine, LAMBDA2, beta, coarse=coarse)
        assert cert.details["routes_agree"]
        assert cert.details["route_gap"] <= cert.details["quadrature_budget"]


def test_corner_form_components(corner_states):
    _, fine = corner_states
    cert = corner_certificate(fine, LAMBDA2, 0.1)
    c = cert.components
    assert c["boundary"] < 0 < c["bulk"]
    assert c["beta_sq"] == pytest.approx(0.01 * cert.details["W_norm2"])
    assert cert.form_value == pytest.approx(sum(c.values()))
    assert json.loads(cert.to_json())["pass"] == cert.passed


def test_corner_form_sign_changes_with_beta(corner_states):
    coarse, fine = corner_states
    scan = corner_certificate_scan(fine, LAMBDA2, coarse=coarse)
    values = [c.form_value for c in scan.certificates]
    assert values[0] > 0  # beta = 0.4: the positive bulk term dominates
    assert values[-1] < 0
    assert scan.best.beta < 0.4
    assert scan.gap_witness == -min(values)


def test_corner_budget_is_rigid_about_failure(corner_states):
    _, fine = corner_states
    cert = corner_certificate(fine, LAMBDA2, 0.4)
    assert not cert.passed


def test_corner_rejects_bad_inputs(corner_states, cross_states):
    _, fine = corner_states
    with pytest.raises(CertificateError):
        corner_certificate(fine, LAMBDA2, 0.0)
    with pytest.raises(CertificateError):
        corner_certificate(cross_states[0], LAMBDA2, 0.1)
    scaled = dataclasses.replace(fine, vector=2 * fine.vector)
    with pytest.raises(CertificateError, match="normalized"):
        corner_certificate(scaled, LAMBDA2, 0.1)
    with pytest.raises(CertificateError):
        corner_certificate_scan(fine, LAMBDA2, betas=(0.1, 0.2))


@settings(max_examples=100)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_bump_is_bounded_and_supported(x):
    b = Bump.default(3)
    v = float(b(np.array(x)))
    assert 0.0 <= v <= 1.0
    if np.any(np.abs(np.array(x) - np.array(b.center)) >= np.array(b.half_widths)):
        assert v == 0.0


def test_bump_peak():
    b = Bump.default(3)
    assert float(b(np.array(b.center))) == pytest.approx(1.0)


def test_cross_certificate_lowers_the_threshold(cross_states):
    coarse, fine = cross_states
    cert = cross_certificate(fine, R=4, beta=0.05, coarse=coarse)
    d = cert.details
    assert d["F0"] == pytest.approx(0.0, abs=1e-6)  # unperturbed cylinder sits at the threshold
    assert d["J_R"] < d["lambda_Q"]
    assert cert.components["A_times_deficit"] < 0
    assert cert.passed


def test_cross_default_beta_is_half_the_deficit(cross_states):
    _, fine = cross_states
    cert = cross_certificate(fine, R=4)
    assert cert.beta == pytest.approx(-0.5 * cert.components["A_times_deficit"])
    assert cert.form_value == pytest.approx(0.5 * cert.components["A_times_deficit"])


def test_cross_tails_match_lattice_sums(cross_states):
    _, fine = cross_states
    beta, h = 0.3, fine.h
    cert = cross_certificate(fine, R=4, beta=beta)
    k = np.arange(1, 20000)
    q = np.exp(-beta * h * k)
    norm2 = 2 * h * (0.5 + np.sum(q**2))
    steps = np.exp(-beta * h * np.arange(0, 20000))
    grad = 2 * h * np.sum((np.diff(steps) / h) ** 2)
    assert cert.details["tail_norm2"] == pytest.approx(norm2, rel=1e-10)
    assert cert.details["tail_energy"] - fine.lam * norm2 == pytest.approx(grad, rel=1e-8)


def test_cross_rejects_bad_geometry(cross_states):
    _, fine = cross_states
    with pytest.raises(CertificateError):
        cross_certificate(fine, R=0.5)
    with pytest.raises(CertificateError):
        cross_certificate(fine, R=4, bump=Bump((1.0, 1.0), (0.5, 1.0)))
    with pytest.raises(CertificateError):
        cross_certificate(solve_domain(DomainSpec.corner(2, 4), 4), R=4)


def test_steklov_check_rows_and_strictness():
    good = steklov_check([("a", 1.0, 0.0), ExtrapolatedValue(STEKLOV_BOUND - 0.01, 0.02, 1.0, [])])
    assert good.ok and good.violations == 0
    report = steklov_check([("bad", 0.5, 0.01)], strict=False)
    assert not report.ok and report.violations == 1
    with pytest.raises(SteklovViolation):
        steklov_check([("bad", 0.5, 0.01)])


def test_steklov_bound_holds_for_computed_corners(corner_states):
    _, fine = corner_states
    assert STEKLOV_BOUND == pytest.approx(math.pi**2 / 16)
    assert steklov_check([fine]).ok
    with pytest.raises(ValueError):
        steklov_check([solve_domain(DomainSpec.cross(2, 4), 4, Reduction.FULL)])
