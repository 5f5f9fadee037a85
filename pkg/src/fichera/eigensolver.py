"""Ground states of the discrete Dirichlet Laplacian and convergence studies.

The smallest eigenpair comes from inexact shift-and-invert iteration: each
outer step solves ``(A - sigma I) z = y`` by Jacobi-preconditioned conjugate
gradients, and the shift follows the Rayleigh quotient from below once the
residual certifies it is safe. Counting eigenvalues below a level uses the
inertia of a symmetric sparse factorization (Sylvester's law).

Every result is reported in continuum units; node vectors are normalized in
the ``h^n``-weighted (orbit-weighted, for reduced grids) inner product.

Runs are deterministic: the start vector is fixed, node order is fixed, and
no step depends on thread scheduling. Floating point reductions go through
BLAS, so bitwise identity is promised only at a fixed thread count.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import (
    Grid,
    Reduction,
    SparseOperator,
    assemble_dirichlet_laplacian,
    build_grid,
    from_operator_basis,
    integrate,
    norm,
    to_operator_basis,
)
from .geometry import DomainSpec, Kind, apply_group_element, symmetry_group

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Raised when an iteration stops before reaching its tolerance."""

    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


@dataclass
class EigenResult:
    """Smallest eigenpair of a discrete operator.

    ``vector`` holds node values (not operator-basis coordinates), positive,
    with unit ``h^n``-weighted norm. ``residual`` is ``||A v - lambda v|| / lambda``
    in the operator basis.
    """

    lam: float
    vector: np.ndarray
    residual: float
    h: float
    R: float
    meta: dict = field(default_factory=dict)
    grid: Grid | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {"lambda": self.lam, "residual": self.residual, "h": self.h, "R": self.R, "meta": self.meta}
        if self.grid is not None:
            d["domain"] = self.grid.domain.to_dict()
            d["m"] = self.grid.m
            d["reduction"] = self.grid.reduction.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)

    def write_vector_csv(self, path) -> None:
        if self.grid is None:
            raise ValueError("eigenvector export needs the grid")
        cols = [np.arange(self.grid.count)[:, None], self.grid.nodes, self.vector[:, None]]
        header = ",".join(["index"] + [f"x{j + 1}" for j in range(self.grid.n)] + ["value"])
        np.savetxt(path, np.hstack(cols), delimiter=",", header=header, comments="", fmt="%.17g")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass
class ExtrapolatedValue:
    value: float
    error_estimate: float
    observed_order: float
    inputs: list[tuple[float, float]]
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "error_estimate": self.error_estimate,
            "observed_order": self.observed_order,
            "inputs": [list(p) for p in self.inputs],
            "flagged": self.flagged,
        }


@dataclass
class DecayFit:
    alpha: float
    window: tuple[float, float]
    correlation: float
    radii: np.ndarray = field(repr=False)
    log_values: np.ndarray = field(repr=False)


def _cg(A, b, x0, shift, tol, maxiter):
    diag = A.diagonal() - shift
    M = spla.LinearOperator(A.shape, matvec=lambda v: v / diag, dtype=float)
    op = A if shift == 0.0 else spla.LinearOperator(A.shape, matvec=lambda v: A @ v - shift * v, dtype=float)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = spla.cg(op, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=count)
    return x, info, iters


def smallest_eigenpair(
    A: SparseOperator,
    g: Grid,
    tol: float = 1e-8,
    max_outer: int = 300,
    max_inner: int = 20000,
    start: np.ndarray | None = None,
) -> EigenResult:
    """Smallest eigenpair by inexact shift-and-invert iteration.

    Parameters
    ----------
    A : SparseOperator
        Symmetric positive definite operator assembled on ``g``.
    g : Grid
    tol : float
        Target relative residual ``||A y - rho y|| / rho``.
    start : array, optional
        Node values of the start vector; all ones by default.

    Notes
    -----
    The shift starts at 0 and is raised to ``rho - 2 ||r||`` once the residual
    is below a tenth of ``rho``; ``rho - ||r||`` brackets an eigenvalue, so the
    margin keeps ``A - sigma I`` positive definite. Inner solves stop at a
    relative tolerance of ``1e-2`` times the current eigen residual.
    """
    M = A.matrix
    N = M.shape[0]
    if start is None:
        start = np.ones(N)
    y = to_operator_basis(g, np.asarray(start, dtype=float))
    y = y / np.linalg.norm(y)
    Ay = M @ y
    rho = float(y @ Ay)
    if not rho > 0:
        raise ValueError("operator is not positive definite (non-positive Rayleigh quotient)")
    r = Ay - rho * y
    res = np.linalg.norm(r) / rho
    sigma = 0.0
    inner_total = 0
    history = [res]
    outer = 0
    while res >= tol:
        if outer >= max_outer:
            raise ConvergenceError(f"no convergence after {outer} outer iterations (residual {res:.3e})", res)
        inner_tol = max(1e-2 * res, 1e-13)
        x0 = y / (rho - sigma)
        z, info, its = _cg(M, y, x0, sigma, inner_tol, max_inner)
        inner_total += its
        if info < 0:
            raise ValueError("inner solve broke down; operator may be indefinite")
        if info > 0:
            log.warning("inner solve stopped at maxiter=%d (outer %d)", max_inner, outer)
        znorm = np.linalg.norm(z)
        y = z / znorm
        Ay = M @ y
        rho_new = float(y @ Ay)
        if not rho_new > 0:
            raise ValueError("operator is not positive definite (non-positive Rayleigh quotient)")
        rho = rho_new
        r = Ay - rho * y
        rnorm = float(np.linalg.norm(r))
        res = rnorm / rho
        history.append(res)
        outer += 1
        if res < 0.1:
            sigma = max(sigma, rho - 2.0 * rnorm)
    v = from_operator_basis(g, y)
    v = v / norm(g, v)
    if v.sum() < 0:
        v = -v
    meta = {
        "outer_iterations": outer,
        "inner_iterations": inner_total,
        "inner_tolerance_factor": 1e-2,
        "tol": tol,
        "final_shift": sigma,
        "m": g.m,
        "nodes": g.count,
    }
    return EigenResult(rho, v, res, g.h, g.domain.R, meta, g)


def rayleigh_quotient(A: SparseOperator, g: Grid, v: np.ndarray) -> float:
    y = to_operator_basis(g, v)
    return float(y @ (A.matrix @ y) / (y @ y))


def lanczos_ritz(A: SparseOperator, steps: int = 50, deflate: np.ndarray | None = None) -> np.ndarray:
    """Ritz values of ``steps`` Lanczos iterations with full reorthogonalization.

    ``deflate`` (operator-basis vectors as columns) is projected out of the
    Krylov space, so the smallest Ritz value then estimates the next eigenvalue.
    """
    M = A.matrix
    N = M.shape[0]
    steps = min(steps, N)
    D = None
    if deflate is not None:
        D, _ = np.linalg.qr(np.atleast_2d(np.asarray(deflate, dtype=float).T).T)
    q = np.cos(np.arange(N) * 0.7) + 1.0  # fixed, generic start
    if D is not None:
        q -= D @ (D.T @ q)
    q /= np.linalg.norm(q)
    Q = np.zeros((N, steps))
    alpha = np.zeros(steps)
    beta = np.zeros(steps)
    k_used = steps
    for k in range(steps):
        Q[:, k] = q
        w = M @ q
        alpha[k] = q @ w
        w -= Q[:, : k + 1] @ (Q[:, : k + 1].T @ w)
        w -= Q[:, : k + 1] @ (Q[:, : k + 1].T @ w)
        if D is not None:
            w -= D @ (D.T @ w)
        b = np.linalg.norm(w)
        if b < 1e-12 * abs(alpha[k]) or k == steps - 1:
            k_used = k + 1
            break
        beta[k] = b
        q = w / b
    return scipy.linalg.eigvalsh_tridiagonal(alpha[:k_used], beta[: k_used - 1])


def second_ritz_value(A: SparseOperator, res: EigenResult, steps: int = 50) -> float:
    y = to_operator_basis(res.grid, res.vector)
    return float(lanczos_ritz(A, steps, deflate=y[:, None])[0])


def _symmetric_factor(M: sp.csr_matrix):
    """LU with diagonal pivots and a symmetric ordering, i.e. ``P M P^T = L D L^T``."""
    lu = spla.splu(
        M.tocsc(),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise ArithmeticError("factorization used off-diagonal pivots; inertia is not available")
    return lu


def count_below(A: SparseOperator, sigma: float, max_retries: int = 5) -> tuple[int, float]:
    """Number of eigenvalues of the discrete operator strictly below ``sigma``.

    Counts negative pivots of a symmetric ``L D L^T`` factorization of
    ``A - sigma I`` (Sylvester's law of inertia). The count refers to the
    discrete truncated operator; near a continuum threshold it also sees the
    box modes of the truncation.

    Returns ``(count, shift_applied)``; a breakdown (zero pivot or forced
    off-diagonal pivoting) is retried at ``sigma - 1e-9 * 10**k``.
    """
    M = A.matrix
    I = sp.identity(M.shape[0], format="csr")
    applied = 0.0
    for k in range(max_retries + 1):
        s = sigma - applied
        try:
            lu = _symmetric_factor((M - s * I).tocsr())
            d = lu.U.diagonal()
            if np.any(d == 0) or not np.all(np.isfinite(d)):
                raise ArithmeticError("zero pivot")
            return int(np.count_nonzero(d < 0)), applied
        except (RuntimeError, ArithmeticError) as exc:
            log.info("inertia factorization failed at sigma=%r (%s); shifting", s, exc)
            applied = 1e-9 * 10**k * max(1.0, abs(sigma))
    raise ArithmeticError(f"inertia factorization kept failing near sigma={sigma}")


def _as_pairs(results) -> list[tuple[float, float]]:
    pairs = []
    for r in results:
        if isinstance(r, EigenResult):
            pairs.append((r.h, r.lam))
        else:
            h, lam = r
            pairs.append((float(h), float(lam)))
    return sorted(pairs, key=lambda p: -p[0])


def richardson(results) -> ExtrapolatedValue:
    """Fit ``lam(h) = lam0 + C h^p`` through the three finest spacings.

    ``results`` are EigenResults (same domain and R) or ``(h, lam)`` pairs.
    A non-monotone sequence is flagged and the finest value is returned with
    the largest observed spread as its error.
    """
    pairs = _as_pairs(results)
    if len(pairs) < 3:
        raise ValueError("richardson extrapolation needs at least three spacings")
    Rs = {r.R for r in results if isinstance(r, EigenResult)}
    if len(Rs) > 1:
        raise ValueError(f"inputs mix truncation radii {sorted(Rs)}")
    (h1, l1), (h2, l2), (h3, l3) = pairs[-3:]
    d12, d23 = l1 - l2, l2 - l3
    spread = max(abs(d12), abs(d23), abs(l1 - l3))
    if d12 == 0 and d23 == 0:
        return ExtrapolatedValue(l3, 0.0, math.nan, pairs)
    if d12 * d23 <= 0:
        return ExtrapolatedValue(l3, spread, math.nan, pairs, flagged=True)
    target = d12 / d23

    def f(p):
        return (h1**p - h2**p) / (h2**p - h3**p) - target

    lo, hi = 0.05, 12.0
    if f(lo) * f(hi) > 0:
        return ExtrapolatedValue(l3, spread, math.nan, pairs, flagged=True)
    p = scipy.optimize.brentq(f, lo, hi, xtol=1e-14)
    C = d23 / (h2**p - h3**p)
    lam0 = l3 - C * h3**p
    return ExtrapolatedValue(lam0, abs(lam0 - l3), p, pairs)


def solve_domain(
    d: DomainSpec,
    m: int,
    reduction: Reduction | str | None = None,
    tol: float = 1e-8,
    **kwargs,
) -> EigenResult:
    """Build the grid, assemble and return the ground state (orthant-reduced for crosses by default)."""
    if reduction is None:
        reduction = Reduction.CROSS_ORTHANT if d.kind is Kind.CROSS else Reduction.FULL
    g = build_grid(d, m, reduction)
    A = assemble_dirichlet_laplacian(g)
    return smallest_eigenpair(A, g, tol=tol, **kwargs)


def ladder(d: DomainSpec, ms, reduction=None, tol: float = 1e-8) -> tuple[list[EigenResult], ExtrapolatedValue]:
    ms = list(ms)
    if ms != sorted(ms) or len(set(ms)) != len(ms):
        raise ValueError("resolution ladder must be strictly increasing")
    results = [solve_domain(d, m, reduction, tol) for m in ms]
    return results, richardson(results)


@dataclass
class TruncationStudy:
    radii: list[float]
    lambdas: list[float]

    @property
    def increments(self) -> list[float]:
        return [abs(b - a) for a, b in zip(self.lambdas, self.lambdas[1:])]

    @property
    def delta_R(self) -> float:
        """Truncation-error proxy ``|lam(R_max) - lam(previous R)|``."""
        return self.increments[-1]

    @property
    def decaying(self) -> bool:
        inc = self.increments
        return all(b < a for a, b in zip(inc, inc[1:]))

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.radii, self.lambdas))


def truncation_study(d: DomainSpec, m: int, R_list, reduction=None, tol: float = 1e-8) -> TruncationStudy:
    R_list = [float(R) for R in R_list]
    if len(R_list) < 3 or R_list != sorted(R_list) or len(set(R_list)) != len(R_list):
        raise ValueError("truncation study needs at least three increasing radii")
    lams = [solve_domain(d.with_R(R), m, reduction, tol).lam for R in R_list]
    return TruncationStudy(R_list, lams)


def decay_fit(g: Grid, v: np.ndarray, floor: float = 1e-14) -> DecayFit:
    """Exponential rate of ``max_{||x||_inf = r} |v|`` over ``r`` in ``[R/2, R-1]``."""
    if g.domain.kind is Kind.BOX or not math.isfinite(g.domain.R):
        raise ValueError("bounded domains have no decay window")
    R = g.domain.R
    shell = np.abs(g.lattice).max(axis=1)
    lo, hi = int(math.ceil(R / 2 * g.m)), int(math.floor((R - 1) * g.m))
    if hi - lo < 2:
        raise ValueError(f"decay window [{R / 2}, {R - 1}] holds fewer than three shells")
    shell_max = np.zeros(hi - lo + 1)
    np.maximum.at(shell_max, shell[(shell >= lo) & (shell <= hi)] - lo, np.abs(v[(shell >= lo) & (shell <= hi)]))
    radii = np.arange(lo, hi + 1) / g.m
    ok = shell_max >= floor
    if not ok[0]:
        raise ValueError("eigenvector is below the underflow floor across the decay window")
    last = np.argmin(ok) if not ok.all() else len(ok)
    radii, vals = radii[:last], shell_max[:last]
    if radii.size < 3:
        raise ValueError("decay window shrank below three shells")
    logs = np.log(vals)
    slope, _ = np.polyfit(radii, logs, 1)
    corr = float(np.corrcoef(radii, logs)[0, 1])
    return DecayFit(float(-slope), (float(radii[0]), float(radii[-1])), abs(corr), radii, logs)


def symmetry_check(g: Grid, v: np.ndarray) -> float:
    """Largest ``|v(x) - v(gx)|`` over nodes and symmetry group elements."""
    if g.reduction is not Reduction.FULL:
        raise ValueError("symmetry check needs a full (unreduced) grid")
    worst = 0.0
    for el in symmetry_group(g.domain):
        img = g.lookup(apply_group_element(el, g.lattice))
        if np.any(img < 0):
            raise ValueError("grid is not closed under the symmetry group")
        worst = max(worst, float(np.max(np.abs(v - v[img]))))
    return worst


def threshold(d: DomainSpec, ms, R: float | None = None, tol: float = 1e-8) -> ExtrapolatedValue:
    """Extrapolated ground energy of the next-lower-dimensional domain.

    That energy is the continuum threshold of ``d``; every consumer takes it
    from here. ``R`` overrides the truncation radius of the lower domain.
    """
    low = d.lower()
    if R is not None and low.kind is not Kind.BOX:
        low = low.with_R(R)
    _, ext = ladder(low, ms, tol=tol)
    return ext


def amplitude(res: EigenResult) -> float:
    return integrate(res.grid, res.vector)
