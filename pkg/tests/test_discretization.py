import itertools

import numpy as np
import pytest
import scipy.io
from hypothesis import given, settings
from hypothesis import strategies as st

from fichera.discretization import (
    Reduction,
    assemble_dirichlet_laplacian,
    build_grid,
    from_operator_basis,
    integrate,
    interpolate,
    norm,
    to_operator_basis,
    write_nodes_csv,
)
from fichera.geometry import DomainSpec


def brute_count(d, m):
    """Count interior nodes by looping over the bounding box."""
    R = int(d.R * m)
    total = 0
    for lat in itertools.product(range(-R + 1, R), repeat=d.n):
        x = np.array(lat) / m
        if d.kind.value == "corner":
            total += abs(x.min()) < 1
        else:
            total += np.abs(x).min() < 1
    return total


@pytest.mark.parametrize("kind", ["corner", "cross"])
@pytest.mark.parametrize("n,m,R", [(2, 4, 4), (2, 5, 4), (3, 4, 4)])
def test_node_count_matches_brute_force(kind, n, m, R):
    d = getattr(DomainSpec, kind)(n, R)
    assert build_grid(d, m).count == brute_count(d, m)


def test_orthant_reduction_covers_full_grid():
    d = DomainSpec.cross(2, 4)
    full, red = build_grid(d, 4), build_grid(d, 4, Reduction.CROSS_ORTHANT)
    assert red.orbit.sum() == full.count
    assert np.all(red.lattice >= 0)


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        build_grid(DomainSpec.corner(2), 3)
    with pytest.raises(ValueError):
        build_grid(DomainSpec.corner(2, 4.1), 4)  # R not a multiple of h
    with pytest.raises(ValueError):
        build_grid(DomainSpec.corner(2), 8, Reduction.CROSS_ORTHANT)


def interval_spectrum(m):
    h, N = 1.0 / m, 2 * m - 1
    k = np.arange(1, N + 1)
    return np.sort(4 / h**2 * np.sin(k * np.pi * h / 4) ** 2)


@pytest.mark.parametrize("m", [4, 8, 16])
def test_interval_operator_has_closed_form_spectrum(m):
    A = assemble_dirichlet_laplacian(build_grid(DomainSpec.box([(-1, 1)]), m))
    np.testing.assert_allclose(np.linalg.eigvalsh(A.matrix.toarray()), interval_spectrum(m), rtol=1e-12)


def test_box_operator_is_sum_of_interval_spectra():
    m = 4
    A = assemble_dirichlet_laplacian(build_grid(DomainSpec.box([(-1, 1), (-1, 1)]), m))
    s = interval_spectrum(m)
    expected = np.sort((s[:, None] + s[None, :]).ravel())
    np.testing.assert_allclose(np.linalg.eigvalsh(A.matrix.toarray()), expected, rtol=1e-12)


@pytest.mark.parametrize("d", [DomainSpec.corner(2, 4), DomainSpec.cross(2, 4), DomainSpec.cross(3, 4)])
def test_operator_is_symmetric(d):
    red = Reduction.CROSS_ORTHANT if d.kind.value == "cross" else Reduction.FULL
    A = assemble_dirichlet_laplacian(build_grid(d, 4, red))
    assert A.asymmetry() == 0.0
    assert A.row_offsets.shape == (A.dimension + 1,)
    assert A.values.size == A.column_indices.size


def test_reduced_operator_reproduces_even_spectrum():
    d = DomainSpec.cross(2, 4)
    gf = build_grid(d, 4)
    gr = build_grid(d, 4, Reduction.CROSS_ORTHANT)
    full = np.linalg.eigvalsh(assemble_dirichlet_laplacian(gf).matrix.toarray())
    red = np.linalg.eigvalsh(assemble_dirichlet_laplacian(gr).matrix.toarray())
    assert red[0] == pytest.approx(full[0], rel=1e-12)
    # every reduced eigenvalue is a full-grid eigenvalue
    for lam in red:
        assert np.min(np.abs(full - lam)) < 1e-9 * lam


def test_quadrature_agrees_between_full_and_reduced():
    d = DomainSpec.cross(2, 4)
    gf, gr = build_grid(d, 4), build_grid(d, 4, Reduction.CROSS_ORTHANT)
    f = lambda x: np.exp(-np.sum(x**2, axis=1))  # noqa: E731
    assert integrate(gr, f(gr.nodes)) == pytest.approx(integrate(gf, f(gf.nodes)), rel=1e-13)
    u = f(gr.nodes)
    assert norm(gr, u) ** 2 == pytest.approx(integrate(gr, u * u))
    np.testing.assert_allclose(from_operator_basis(gr, to_operator_basis(gr, u)), u)
    with pytest.raises(ValueError):
        integrate(gr, u[:-1])


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(-2.5, 2.5), st.floats(-1, 1), st.floats(-1, 1))
def test_interpolation_exact_for_bilinear_fields(a, b, c, e):
    # bilinear fields are reproduced wherever the surrounding cell has no boundary corner
    g = build_grid(DomainSpec.box([(-1, 1), (-3, 3)]), 4)
    f = lambda p: 1 + c * p[..., 0] + e * p[..., 1] + c * e * p[..., 0] * p[..., 1]  # noqa: E731
    x = np.array([a * 0.7, b])
    cell = np.floor(x * 4)
    corners = (cell + np.array(list(itertools.product([0, 1], repeat=2)))) / 4
    if np.any(np.abs(corners[:, 0]) >= 1) or np.any(np.abs(corners[:, 1]) >= 3):
        return
    assert interpolate(g, f(g.nodes), x) == pytest.approx(float(f(x)), abs=1e-12)


def test_interpolation_even_in_orthant_mode_and_bounds():
    g = build_grid(DomainSpec.cross(2, 4), 4, Reduction.CROSS_ORTHANT)
    u = np.cos(g.nodes[:, 0]) + g.nodes[:, 1] ** 2
    p = np.array([0.3, 1.7])
    assert interpolate(g, u, p) == pytest.approx(interpolate(g, u, -p))
    assert interpolate(g, u, np.array([[0.3, 1.7], [0.0, 0.0]])).shape == (2,)
    with pytest.raises(ValueError):
        interpolate(g, u, [2.0, 2.0])


def test_exports(tmp_path):
    g = build_grid(DomainSpec.corner(2, 4), 4)
    A = assemble_dirichlet_laplacian(g)
    A.to_matrix_market(tmp_path / "A.mtx")
    back = scipy.io.mmread(str(tmp_path / "A.mtx")).tocsr()
    assert abs(back - A.matrix).max() == 0
    write_nodes_csv(g, tmp_path / "nodes.csv")
    rows = (tmp_path / "nodes.csv").read_text().splitlines()
    assert rows[0] == "index,x1,x2" and len(rows) == g.count + 1
