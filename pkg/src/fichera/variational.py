"""Trial-function certificates for a ground energy below the continuum threshold.

Two constructions, each evaluated on the lattice of a computed ground state:

* corner: ``W(x) = U(x') exp(-beta x_n)`` on the cell where ``x_n`` is the
  largest coordinate, extended by symmetry, with ``U`` the ground state one
  dimension down. Its form ``||grad W||^2 - lam ||W||^2`` per cell is
  computed by direct quadrature and by the boundary-integral reduction.
* cross: the cylindrical extension of the lower-dimensional ground state,
  perturbed by a bump straddling the cylinder wall inside the slab
  ``|x_n| < 1``, with exponential tails beyond ``|x_n| = R``.

Both reduce to sums over the lower-dimensional lattice. The direction
``x_n`` is summed in closed form since every integrand is exactly
exponential in it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import Grid, Reduction
from .eigensolver import EigenResult, _json_default
from .geometry import Kind

STEKLOV_BOUND = math.pi**2 / 16


@dataclass
class TrialCertificate:
    """Outcome of one trial-function evaluation.

    ``passed`` means ``form_value < -error_budget``.
    """

    kind: str
    n: int
    beta: float
    form_value: float
    components: dict
    error_budget: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "beta": self.beta,
            "form_value": self.form_value,
            "components": self.components,
            "error_budget": self.error_budget,
            "pass": self.passed,
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)


class CertificateError(ValueError):
    pass


def _check_ground_state(res: EigenResult, kind: Kind) -> Grid:
    g = res.grid
    if g is None:
        raise CertificateError("ground state must carry its grid")
    if g.domain.kind is not kind:
        raise CertificateError(f"expected a {kind.value} ground state, got {g.domain.kind.value}")
    v = res.vector
    if v.min() < -1e-10 * v.max():
        raise CertificateError("ground state is not sign-definite")
    nrm = g.cell_volume * np.dot(g.orbit, v * v)
    if abs(nrm - 1.0) > 1e-8:
        raise CertificateError(f"ground state is not normalized (||U||^2 = {nrm})")
    return g


# ---------------------------------------------------------------- corner ----


def _corner_terms(res: EigenResult, beta: float):
    g = _check_ground_state(res, Kind.CORNER)
    if g.reduction is not Reduction.FULL:
        raise CertificateError("corner certificate needs a full grid")
    k = g.n  # dimension of U; the certificate lives in n = k + 1
    n = k + 1
    h, vol = g.h, g.cell_volume
    U = res.vector
    lat = g.lattice
    x = lat / g.m
    top = lat.max(axis=1)
    weight = np.exp(-2 * beta * top / g.m) / (2 * beta)  # integral of exp(-2 beta x_n) over x_n > max(x')
    wnorm2 = vol * np.sum(U * U * weight)

    # cell where x_1 is the largest coordinate; ties are shared equally
    others = lat[:, 1:].max(axis=1)
    ties = np.count_nonzero(lat == top[:, None], axis=1)
    cell_w = np.where(lat[:, 0] > others, 1.0, np.where(lat[:, 0] == top, 1.0 / ties, 0.0))
    e1 = np.exp(-2 * beta * x[:, 0])
    bulk_int = vol * np.sum(cell_w * U * U * e1)

    # interface x_1 = x_2 with both largest; its own edge (three-way tie) is halved
    on_gamma = lat[:, 0] == lat[:, 1]
    if k > 2:
        rest = lat[:, 2:].max(axis=1)
        on_gamma &= lat[:, 0] >= rest
        gamma_w = np.where(lat[:, 0] > rest, 1.0, 0.5)
    else:
        gamma_w = np.ones(len(U))
    surf = math.sqrt(2) * h ** (k - 1)
    gamma_int = surf * np.sum((gamma_w * U * U * e1)[on_gamma])

    boundary = -(n - 1) * (n - 2) / (2 * math.sqrt(2)) * gamma_int
    bulk = (n - 1) * beta * bulk_int
    beta_sq = beta**2 * wnorm2
    return g, dict(boundary=boundary, bulk=bulk, beta_sq=beta_sq), wnorm2, gamma_int


def _corner_direct(res: EigenResult, lam: float, beta: float, wnorm2: float) -> float:
    """Quadrature of ``||grad W||^2 - lam ||W||^2`` over one cell, x_n summed exactly."""
    g = res.grid
    U = res.vector
    vol = g.cell_volume
    energy = 0.0
    for axis in range(g.n):
        step = np.zeros(g.n, dtype=np.int64)
        step[axis] = 1
        fwd = g.lookup(g.lattice + step)
        Uf = np.where(fwd >= 0, U[np.maximum(fwd, 0)], 0.0)
        mid = g.lattice + 0.5 * step
        wmid = np.exp(-2 * beta * mid.max(axis=1) / g.m) / (2 * beta)
        energy += np.sum(((Uf - U) * g.m) ** 2 * wmid)
        # edges reaching in from a boundary node behind
        back = g.lookup(g.lattice - step)
        miss = back < 0
        midb = g.lattice[miss] - 0.5 * step
        wb = np.exp(-2 * beta * midb.max(axis=1) / g.m) / (2 * beta)
        energy += np.sum((U[miss] * g.m) ** 2 * wb)
    energy *= vol
    return energy - lam * wnorm2 + beta**2 * wnorm2


def corner_certificate(
    U2: EigenResult,
    lambda2: float,
    beta: float,
    coarse: EigenResult | None = None,
) -> TrialCertificate:
    """Evaluate the corner trial function one dimension above ``U2``.

    Parameters
    ----------
    U2 : EigenResult
        Normalized ground state of the corner one dimension down, full grid.
    lambda2 : float
        That domain's ground energy (the threshold of the domain certified).
    beta : float
        Decay rate of the trial function along the new axis.
    coarse : EigenResult, optional
        The same ground state at a coarser spacing; the change of the reduced
        form between the two spacings enters the error budget.

    Returns
    -------
    TrialCertificate
        ``form_value`` is the reduced (boundary-integral) form; the direct
        quadrature is in ``details["direct"]`` and their gap in the budget.
    """
    if not beta > 0:
        raise CertificateError("beta must be positive")
    g, comps, wnorm2, gamma_int = _corner_terms(U2, beta)
    reduced = comps["boundary"] + comps["bulk"] + comps["beta_sq"]
    direct = _corner_direct(U2, lambda2, beta, wnorm2)
    # the lattice U has energy lam_h, not lambda2: the direct route carries this defect
    defect = (U2.lam - lambda2) * wnorm2
    quadrature = abs(defect)
    budget = abs(direct - reduced)
    details = {
        "reduced": reduced,
        "direct": direct,
        "route_gap": abs(direct - reduced),
        "eigen_defect": defect,
        "W_norm2": wnorm2,
        "gamma_integral": gamma_int,
        "lambda": lambda2,
        "lambda_h": U2.lam,
        "m": g.m,
        "R": g.domain.R,
    }
    if coarse is not None:
        _, c_comps, c_wnorm2, _ = _corner_terms(coarse, beta)
        c_reduced = sum(c_comps.values())
        c_direct = _corner_direct(coarse, lambda2, beta, c_wnorm2)
        details["reduced_coarse"] = c_reduced
        details["direct_coarse"] = c_direct
        details["refinement_change"] = abs(reduced - c_reduced)
        budget += abs(reduced - c_reduced)
        quadrature += abs(reduced - c_reduced) + abs((direct + defect) - (c_direct + (coarse.lam - lambda2) * c_wnorm2))
    details["quadrature_budget"] = quadrature
    details["routes_agree"] = bool(abs(direct - reduced) <= quadrature)
    return TrialCertificate(
        kind=Kind.CORNER.value,
        n=g.n + 1,
        beta=beta,
        form_value=reduced,
        components=comps,
        error_budget=budget,
        passed=bool(reduced < -budget),
        details=details,
    )


@dataclass
class CornerScan:
    certificates: list[TrialCertificate]

    @property
    def best(self) -> TrialCertificate:
        return min(self.certificates, key=lambda c: c.form_value)

    @property
    def gap_witness(self) -> float:
        """Largest ``-I(beta)`` over the scanned betas."""
        return -self.best.form_value

    @property
    def passed(self) -> bool:
        return any(c.passed for c in self.certificates)


def corner_certificate_scan(U2, lambda2, betas=(0.4, 0.2, 0.1, 0.05), coarse=None) -> CornerScan:
    betas = [float(b) for b in betas]
    if any(b <= 0 for b in betas):
        raise CertificateError("betas must be positive")
    if any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
        raise CertificateError("betas must be strictly decreasing")
    return CornerScan([corner_certificate(U2, lambda2, b, coarse) for b in betas])


# ----------------------------------------------------------------- cross ----


@dataclass(frozen=True)
class Bump:
    """Tensor product of half-cosines: ``prod_j cos(pi (x_j - c_j) / (2 w_j))`` on ``|x_j - c_j| < w_j``."""

    center: tuple[float, ...]
    half_widths: tuple[float, ...]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        w = np.asarray(self.half_widths)
        t = (x - c) / w
        inside = np.all(np.abs(t) < 1, axis=-1)
        return np.where(inside, np.prod(np.cos(0.5 * np.pi * np.clip(t, -1, 1)), axis=-1), 0.0)

    @classmethod
    def default(cls, n: int) -> Bump:
        """Unit-width bump on the re-entrant edge of the cylinder wall at ``x' = (1, 1, 0, ...)``.

        Its ``x_n`` profile spans the whole slab, vanishing on ``x_n = +-1``.
        """
        center = (1.0, 1.0) + (0.0,) * (n - 3) + (0.0,)
        half = (0.5,) * (n - 1) + (1.0,)
        return cls(center, half)


def _cross_slab_data(UQ: EigenResult, bump: Bump):
    g = UQ.grid
    n = g.n + 1
    m = g.m
    c = np.asarray(bump.center)
    w = np.asarray(bump.half_widths)
    lo = np.floor((c - w) * m).astype(np.int64) - 1
    hi = np.ceil((c + w) * m).astype(np.int64) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    lat = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    shape = lat.shape[:-1]
    lat = lat.reshape(-1, n)
    x = lat / m
    inside_O = np.abs(lat).min(axis=1) < m  # cross membership in n dimensions
    idx = g.lookup(lat[:, :-1])
    u = np.where(idx >= 0, UQ.vector[np.maximum(idx, 0)], 0.0)
    phi = np.where(inside_O, bump(x), 0.0)
    if np.any(bump(x)[~inside_O] != 0):
        raise CertificateError("bump does not vanish outside the domain")
    return u.reshape(shape), phi.reshape(shape), m


def _bilinear(a: np.ndarray, b: np.ndarray, m: int, vol: float) -> tuple[float, float]:
    """Discrete Dirichlet energy and L2 products of two lattice fields on a box patch."""
    energy = 0.0
    for axis in range(a.ndim):
        da = np.diff(a, axis=axis) * m
        db = np.diff(b, axis=axis) * m
        energy += np.sum(da * db)
    return energy * vol, float(np.sum(a * b)) * vol


def cross_certificate(
    UQ: EigenResult,
    R: float,
    beta: float | None = None,
    lambdaQ: float | None = None,
    bump: Bump | None = None,
    coarse: EigenResult | None = None,
) -> TrialCertificate:
    """Perturbed-cylinder trial function over the cross one dimension above ``UQ``.

    Parameters
    ----------
    UQ : EigenResult
        Normalized ground state of the cross section ``Q`` (cross, n-1 dims).
    R : float
        Half-length of the perturbed segment ``|x_n| < R``.
    beta : float, optional
        Tail decay rate. Defaults to half the deficit ``A (lam_Q - J_R)`` so the
        global form is negative whenever the deficit is.
    lambdaQ : float, optional
        Threshold energy used in the form; defaults to ``UQ.lam``, which makes
        the unperturbed form vanish identically on the lattice.
    bump : Bump, optional
        Perturbation profile; see :meth:`Bump.default`.
    coarse : EigenResult, optional
        Same ground state at a coarser spacing, for the refinement budget.
    """
    g = _check_ground_state(UQ, Kind.CROSS)
    n = g.n + 1
    if bump is None:
        bump = Bump.default(n)
    if len(bump.center) != n:
        raise CertificateError(f"bump lives in {len(bump.center)} dimensions, need {n}")
    lamQ = UQ.lam if lambdaQ is None else float(lambdaQ)
    if R <= abs(bump.center[-1]) + bump.half_widths[-1]:
        raise CertificateError("bump must fit inside |x_n| < R")

    deficit, parts = _cross_deficit(UQ, R, lamQ, bump)
    budget = 0.0
    details = dict(parts)
    if coarse is not None:
        c_lam = coarse.lam if lambdaQ is None else lamQ
        c_def, _ = _cross_deficit(coarse, R, c_lam, bump)
        details["deficit_coarse"] = c_def
        budget = abs(deficit - c_def)
    budget += 10 * UQ.residual * lamQ * parts["A"]  # eigen-residual defect of F(0)

    A = parts["A"]
    J = lamQ + deficit
    if beta is None:
        beta = max(-0.5 * A * deficit, 1e-12)
    total = A * (J - lamQ) + beta
    tails = _cross_tails(UQ, beta, lamQ)
    details.update(
        J_R=J,
        lambda_Q=lamQ,
        tail_norm2=tails["norm2"],
        tail_energy=tails["energy"],
        W_norm2=A + tails["norm2"],
        W_energy=A * J + tails["energy"],
        m=g.m,
        R=R,
        bump=dict(center=list(bump.center), half_widths=list(bump.half_widths)),
    )
    comps = {"A_times_deficit": A * (J - lamQ), "beta": beta}
    passed = bool(J < lamQ - budget and total < -budget)
    return TrialCertificate(Kind.CROSS.value, n, beta, total, comps, budget, passed, details)


def _cross_deficit(UQ: EigenResult, R: float, lamQ: float, bump: Bump):
    """``J_R(u_hat) - lam_Q`` at the optimal bump coefficient, plus its ingredients."""
    g = UQ.grid
    vol_n = g.cell_volume * g.h
    # unperturbed cylinder: trapezoid in x_n over [-R, R] gives length 2R per unit of the section
    energy_Q = float(g.cell_volume * np.dot(g.orbit, UQ.vector * _section_energy_density(UQ)))
    norm_Q = 1.0
    F0 = 2 * R * (energy_Q - lamQ * norm_Q)
    base_norm2 = 2 * R * norm_Q
    u, phi, m = _cross_slab_data(UQ, bump)
    e_up, m_up = _bilinear(u, phi, m, vol_n)
    e_pp, m_pp = _bilinear(phi, phi, m, vol_n)
    L = e_up - lamQ * m_up
    K = e_pp - lamQ * m_pp
    if not K > 0:
        raise CertificateError("bump has non-positive quadratic coefficient; widen it")
    c = -L / K
    Fc = F0 + 2 * c * L + c * c * K
    A = base_norm2 + 2 * c * m_up + c * c * m_pp
    if not Fc < F0:
        raise CertificateError("bump does not lower the form; it must straddle the cylinder wall")
    parts = {"A": A, "c": c, "linear": L, "quadratic": K, "F0": F0, "F_opt": Fc}
    return Fc / A, parts


def _section_energy_density(UQ: EigenResult) -> np.ndarray:
    """``(A_Q U)`` in node values, so that ``<U, A_Q U>`` is the section energy."""
    from .discretization import assemble_dirichlet_laplacian, from_operator_basis, to_operator_basis

    A = assemble_dirichlet_laplacian(UQ.grid)
    y = to_operator_basis(UQ.grid, UQ.vector)
    return from_operator_basis(UQ.grid, A.matrix @ y)


def _cross_tails(UQ: EigenResult, beta: float, lamQ: float) -> dict:
    """Lattice sums of the two exponential tails ``|x_n| >= R`` (end slices at half weight)."""
    h = UQ.h
    q = math.exp(-beta * h)
    norm2 = h / math.tanh(beta * h)  # 2 * h * (1/2 + q^2 / (1 - q^2))
    grad_n = 2.0 / h * math.tanh(beta * h / 2)  # 2 * sum_k ((q^{k+1} - q^k) / h)^2 * h
    section = UQ.lam  # discrete section energy of the normalized ground state
    return {"norm2": norm2, "energy": section * norm2 + grad_n, "q": q}


# --------------------------------------------------------------- steklov ----


class SteklovViolation(AssertionError):
    def __init__(self, report):
        super().__init__(f"Steklov bound violated: {[r for r in report.rows if not r['ok']]}")
        self.report = report


@dataclass
class SteklovReport:
    rows: list[dict]

    @property
    def violations(self) -> int:
        return sum(not r["ok"] for r in self.rows)

    @property
    def ok(self) -> bool:
        return self.violations == 0


def steklov_check(entries, strict: bool = True) -> SteklovReport:
    """Compare corner energies with ``pi^2/16``.

    ``entries`` are EigenResults, ExtrapolatedValues, or ``(label, lam, err)``
    tuples. Each must satisfy ``lam >= pi^2/16 - err``.
    """
    from .eigensolver import ExtrapolatedValue

    rows = []
    for i, e in enumerate(entries):
        if isinstance(e, EigenResult):
            if e.grid is not None and e.grid.domain.kind is not Kind.CORNER:
                raise ValueError("Steklov check applies to corner results only")
            label, lam, err = f"m={e.meta.get('m')}", e.lam, 0.0
        elif isinstance(e, ExtrapolatedValue):
            label, lam, err = f"extrapolated[{i}]", e.value, e.error_estimate
        else:
            label, lam, err = e
        margin = lam - (STEKLOV_BOUND - err)
        rows.append({"label": str(label), "lambda": float(lam), "error": float(err), "margin": margin, "ok": margin >= 0})
    report = SteklovReport(rows)
    if strict and not report.ok:
        raise SteklovViolation(report)
    return report
