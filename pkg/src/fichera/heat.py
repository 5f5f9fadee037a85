"""Survival probability of Brownian motion through the heat problem.

``V(x; t) = P{x + W(s) stays in the domain for s < t}`` solves
``dV/dt = (1/2) Laplace V`` with ``V = 0`` on the boundary and ``V = 1`` at
``t = 0``. On grids the generator is ``-A/2`` with ``A`` the assembled
Dirichlet Laplacian, which is why the Crank-Nicolson factors carry ``dt/4``.

For large ``t`` the solution collapses onto the ground state,
``V(x; t) ~ amp * U(x) * exp(-lam t / 2)`` with ``amp = integral of U``;
:func:`fit_asymptotics` measures that amplitude and the remainder.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import (
    Grid,
    SparseOperator,
    from_operator_basis,
    inner,
    integrate,
    interpolate,
    to_operator_basis,
)
from .eigensolver import ConvergenceError, EigenResult, ExtrapolatedValue, richardson

log = logging.getLogger(__name__)

_SERIES_TERM_CAP = 100_000


def v1_series(y, t: float, tol: float = 1e-12):
    """Exact survival probability on ``(-1, 1)`` from the cosine series.

    ``V(y; t) = (4/pi) sum_k (-1)^k / (2k+1) cos((k+1/2) pi y) exp(-(k+1/2)^2 pi^2 t / 2)``.

    Summation stops once the next term's bound falls below ``tol``. At
    ``t = 0`` the series converges only conditionally; the known limit (1
    inside, 0 at ``|y| = 1``) is returned instead. Results are clamped to
    ``[0, 1]``. Accepts a scalar or an array of positions.
    """
    if not t >= 0 or not math.isfinite(t):
        raise ValueError(f"time must be finite and non-negative, got {t}")
    yy = np.asarray(y, dtype=float)
    if np.any(np.abs(yy) > 1) or not np.all(np.isfinite(yy)):
        raise ValueError("positions must lie in [-1, 1]")
    if t == 0:
        out = np.where(np.abs(yy) < 1, 1.0, 0.0)
    else:
        out = np.zeros_like(yy)
        for k in range(_SERIES_TERM_CAP):
            a = (k + 0.5) * math.pi
            bound = 4 / (math.pi * (2 * k + 1)) * math.exp(-a * a * t / 2)
            out = out + (-1) ** k * bound * np.cos(a * yy)
            a_next = a + math.pi
            if 4 / (math.pi * (2 * k + 3)) * math.exp(-a_next * a_next * t / 2) < tol:
                break
        out = np.where(np.abs(yy) == 1, 0.0, out)  # cos vanishes termwise; remove rounding
        out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def cn_rate(lam: float, dt: float) -> float:
    """Decay rate (in ``exp(-rate t / 2)`` form) that Crank-Nicolson gives an eigenmode.

    One step multiplies the mode by ``(1 - dt lam/4) / (1 + dt lam/4)``.
    """
    q = dt * lam / 4
    if q >= 1:
        raise ValueError("step too large: the mode changes sign every step")
    return 4.0 / dt * math.atanh(q)  # = -(2/dt) log((1-q)/(1+q)) without cancellation


class _CrankNicolson:
    """Two shifted copies of ``A`` and a Jacobi-preconditioned CG for one step size."""

    def __init__(self, A: SparseOperator, dt: float, tol: float, maxiter: int):
        M = A.matrix
        eye = sp.identity(M.shape[0], format="csr")
        self.lhs = (eye + (dt / 4) * M).tocsr()
        self.rhs = (eye - (dt / 4) * M).tocsr()
        diag = self.lhs.diagonal()
        if np.any(diag <= 0):
            raise ValueError("implicit operator is not positive definite for this step")
        if dt < 0 and _gershgorin_max(M) * abs(dt) / 4 >= 1:
            raise ValueError("backward step too large for a positive definite implicit operator")
        self.pre = spla.LinearOperator(M.shape, matvec=lambda v: v / diag, dtype=float)
        self.tol = tol
        self.maxiter = maxiter
        self.iterations = 0

    def step(self, y: np.ndarray) -> np.ndarray:
        b = self.rhs @ y
        if not np.any(b):
            return b

        def count(_):
            self.iterations += 1

        x, info = spla.cg(
            self.lhs, b, x0=y, rtol=self.tol, atol=0.0, maxiter=self.maxiter, M=self.pre, callback=count
        )
        if info != 0:
            res = float(np.linalg.norm(self.lhs @ x - b) / np.linalg.norm(b))
            raise ConvergenceError(f"Crank-Nicolson inner solve stopped at relative residual {res:.2e}", res)
        return x


def _gershgorin_max(M: sp.csr_matrix) -> float:
    return float(np.max(np.asarray(abs(M).sum(axis=1)).ravel()))


def cn_step(A: SparseOperator, y: np.ndarray, dt: float, tol: float = 1e-13, maxiter: int = 10_000) -> np.ndarray:
    """A single Crank-Nicolson step in operator-basis coordinates.

    Negative ``dt`` steps backwards; that is only allowed while the implicit
    operator stays positive definite, which bounds ``|dt|`` by ``4 / max eigenvalue``.
    """
    return _CrankNicolson(A, dt, tol, maxiter).step(np.asarray(y, dtype=float))


@dataclass
class HeatRun:
    """Snapshots of ``V`` at the requested times (node values, not operator basis)."""

    grid: Grid
    dt: float
    times: np.ndarray
    snapshots: list[np.ndarray] = field(repr=False)
    scheme: str = "crank_nicolson"
    meta: dict = field(default_factory=dict)

    def masses(self) -> np.ndarray:
        return np.array([integrate(self.grid, s) for s in self.snapshots])

    def at(self, x, i: int):
        """Interpolated value of snapshot ``i`` at point(s) ``x``."""
        return interpolate(self.grid, self.snapshots[i], x)

    def write_csv(self, path, probes=None) -> None:
        """One row per checkpoint: ``t`` then node values, or values at ``probes``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if probes is None:
                w.writerow(["t"] + [f"node{i}" for i in range(self.grid.count)])
                for t, s in zip(self.times, self.snapshots):
                    w.writerow([repr(float(t))] + [repr(float(v)) for v in s])
            else:
                pts = np.atleast_2d(np.asarray(probes, dtype=float))
                w.writerow(["t"] + ["(" + " ".join(f"{c:g}" for c in p) + ")" for p in pts])
                for i, t in enumerate(self.times):
                    vals = np.atleast_1d(self.at(pts, i))
                    w.writerow([repr(float(t))] + [repr(float(v)) for v in vals])


def step_heat(
    g: Grid,
    A: SparseOperator,
    dt: float,
    T: float,
    checkpoints,
    tol: float = 1e-13,
    maxiter: int = 10_000,
) -> HeatRun:
    """Crank-Nicolson from ``V = 1`` to ``T``, recording snapshots at ``checkpoints``.

    Each checkpoint is rounded to the nearest multiple of ``dt``; the stored
    times are the exact step times. Steps with ``dt > 2 h^2 / n`` may break the
    discrete maximum principle and are logged.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    cps = np.sort(np.asarray(checkpoints, dtype=float))
    if cps.size == 0 or cps[0] < 0:
        raise ValueError("need at least one non-negative checkpoint")
    if T < cps[-1]:
        raise ValueError(f"T={T} is before the last checkpoint {cps[-1]}")
    if A.dimension != g.count:
        raise ValueError("operator and grid sizes differ")
    if dt > 2 * g.h**2 / g.n * (1 + 1e-12):
        log.warning("dt=%g exceeds 2h^2/n=%g; the maximum principle is not guaranteed", dt, 2 * g.h**2 / g.n)
    steps = np.rint(cps / dt).astype(np.int64)
    cn = _CrankNicolson(A, dt, tol, maxiter)
    y = to_operator_basis(g, np.ones(g.count))
    snaps: list[np.ndarray] = []
    done = 0
    for target in steps:
        while done < target:
            y = cn.step(y)
            done += 1
        snaps.append(from_operator_basis(g, y).copy())
    return HeatRun(
        g,
        dt,
        steps * dt,
        snaps,
        meta={"steps": int(done), "cg_iterations": cn.iterations, "tol": tol, "T": T},
    )


def amplitude_An(eig: EigenResult) -> float:
    """Integral of the normalized ground state; positive by construction."""
    if eig.grid is None:
        raise ValueError("amplitude needs the eigenvector's grid")
    value = integrate(eig.grid, eig.vector)
    if not value > 0:
        raise ValueError("ground state integral is not positive; vector sign is wrong")
    return value


def amplitude_ladder(results) -> ExtrapolatedValue:
    """Richardson extrapolation of the amplitude over a resolution ladder."""
    return richardson([(r.h, amplitude_An(r)) for r in results])


class TimeStepError(RuntimeError):
    """Halving the step changes the late-window solution by more than the tolerance."""


@dataclass
class AsymptoticFit:
    A_hat: float
    lambda_used: float
    times: np.ndarray
    window: tuple[float, float]
    amplitude_series: np.ndarray = field(repr=False)
    remainder_curve: np.ndarray = field(repr=False)
    envelope: np.ndarray = field(repr=False)
    proxy_rate: float
    envelope_bounded: bool
    proxy_flagged: bool = True  # the remainder rate is a stand-in, not the sharp constant
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "A_hat": self.A_hat,
            "lambda_used": self.lambda_used,
            "window": list(self.window),
            "times": self.times.tolist(),
            "amplitude_series": self.amplitude_series.tolist(),
            "remainder_curve": self.remainder_curve.tolist(),
            "envelope": self.envelope.tolist(),
            "proxy_rate": self.proxy_rate,
            "proxy_flagged": self.proxy_flagged,
            "envelope_bounded": self.envelope_bounded,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def predict(self, U_values, t):
        return self.A_hat * np.asarray(U_values) * np.exp(-self.lambda_used * np.asarray(t) / 2)


def late_window_start(lam: float, lam_dagger: float, contamination: float = 0.02) -> float:
    """First time at which ``exp(-(lam_dagger - lam) t / 2)`` drops below ``contamination``."""
    gap = lam_dagger - lam
    if not gap > 0:
        raise ValueError(f"threshold {lam_dagger} is not above the eigenvalue {lam}")
    return 2 * math.log(1 / contamination) / gap


def _same_grid(a: Grid, b: Grid) -> bool:
    return (
        a is b
        or (
            a.domain == b.domain
            and a.m == b.m
            and a.reduction == b.reduction
            and a.count == b.count
            and np.array_equal(a.lattice, b.lattice)
        )
    )


def fit_asymptotics(
    run: HeatRun,
    eig: EigenResult,
    lambda_dagger_proxy: float,
    window: tuple[float, float] | None = None,
    halved: HeatRun | None = None,
    dt_rtol: float = 1e-3,
) -> AsymptoticFit:
    """Fit ``V ~ A_hat U exp(-lam t/2)`` and test the remainder envelope.

    ``lam`` is the Crank-Nicolson rate of the grid eigenvalue, so an exact
    eigenmode is propagated without drift. ``A_hat`` averages
    ``<V(t), U> exp(lam t / 2)`` over the window (default: from the point
    where the threshold mode is down to 2% until the last checkpoint). The
    remainder is ``r(t) = max |V - A_hat U exp(-lam t/2)|``; the envelope
    ``r(t) exp(proxy t/2) / (t+1)`` must not grow across the window. The
    threshold value stands in for the unknown remainder rate.

    Passing ``halved`` (the same run at ``dt/2``) turns on the step-size
    monitor: a late-window disagreement above ``dt_rtol`` raises
    :class:`TimeStepError`.
    """
    if eig.grid is None or not _same_grid(run.grid, eig.grid):
        raise ValueError("heat run and eigenpair must live on the same grid")
    lam = cn_rate(eig.lam, run.dt)
    if window is None:
        window = (late_window_start(eig.lam, lambda_dagger_proxy), float(run.times[-1]))
    sel = (run.times >= window[0] - 1e-12) & (run.times <= window[1] + 1e-12)
    if sel.sum() < 2:
        raise ValueError(f"window {window} holds fewer than two checkpoints")
    U = eig.vector
    amps = np.array([inner(run.grid, V, U) for V in run.snapshots]) * np.exp(lam * run.times / 2)
    A_hat = float(np.mean(amps[sel]))
    rem = np.array(
        [np.max(np.abs(V - A_hat * U * math.exp(-lam * t / 2))) for t, V in zip(run.times, run.snapshots)]
    )
    env = rem[sel] * np.exp(lambda_dagger_proxy * run.times[sel] / 2) / (run.times[sel] + 1)
    half = max(1, env.size // 2)
    bounded = bool(np.all(np.isfinite(env)) and env[half:].max() <= 2 * env[:half].max())
    meta = {}
    if halved is not None:
        diff = _late_disagreement(run, halved, sel)
        meta["dt_halving_rel_diff"] = diff
        if diff > dt_rtol:
            raise TimeStepError(
                f"halving dt changes the late window by {diff:.2e} (> {dt_rtol:g}); use a smaller dt"
            )
    return AsymptoticFit(
        A_hat=A_hat,
        lambda_used=lam,
        times=run.times.copy(),
        window=(float(window[0]), float(window[1])),
        amplitude_series=amps,
        remainder_curve=rem,
        envelope=env,
        proxy_rate=float(lambda_dagger_proxy),
        envelope_bounded=bounded,
        meta=meta,
    )


def _late_disagreement(run: HeatRun, halved: HeatRun, sel: np.ndarray) -> float:
    worst = 0.0
    for t, V in zip(run.times[sel], np.asarray(run.snapshots, dtype=object)[sel]):
        j = np.flatnonzero(np.isclose(halved.times, t, atol=1e-9))
        if j.size == 0:
            raise ValueError(f"halved run has no checkpoint at t={t}")
        W = halved.snapshots[j[0]]
        worst = max(worst, float(np.max(np.abs(V - W)) / np.max(np.abs(W))))
    return worst


def log_slope(run: HeatRun, x, window: tuple[float, float]) -> float:
    """Least-squares slope of ``log V(x; t)`` over the checkpoints in ``window``."""
    sel = (run.times >= window[0] - 1e-12) & (run.times <= window[1] + 1e-12)
    idx = np.flatnonzero(sel)
    if idx.size < 2:
        raise ValueError("window holds fewer than two checkpoints")
    vals = np.array([run.at(x, i) for i in idx])
    if np.any(vals <= 0):
        raise ValueError("survival reached zero inside the window")
    return float(np.polyfit(run.times[idx], np.log(vals), 1)[0])
