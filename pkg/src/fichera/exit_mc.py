"""Monte Carlo exit times of Brownian motion and survival-tail regression.

Paths follow Euler steps ``x <- x + sqrt(dt) * xi``. A path exits when the
post-step point leaves the domain, or when a Brownian-bridge draw says it
touched a flat wall in between. The bridge probability for one wall at
distances ``d0, d1`` from the two endpoints is ``exp(-2 d0 d1 / dt)``.

Random numbers come from NumPy's Philox4x64-10, a counter-based generator.
Path ``i`` owns the stream with key ``seed`` and counter ``(0, 0, 0, i)``:
the generator only advances the low words, so streams never overlap, and a
path sees the same numbers however the paths are scheduled. Results do not
depend on batch boundaries or worker count.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.stats import norm as _normal

from .geometry import DomainSpec, Kind, contains

STREAM_RULE = "numpy Philox4x64-10; key = seed; counter = (0, 0, 0, path_index)"


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """The substream of one path."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must fit in 64 unsigned bits")
    if not 0 <= int(path_index) < 2**64:
        raise ValueError("path index must fit in 64 unsigned bits")
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(path_index)]))


# Membership and bridge tests are separate jitted functions per domain kind,
# bound into one walk per kind by _make_walk. A single function branching on
# the kind, or one taking the tests as arguments, costs several times more.


@numba.njit(cache=True)
def _in_corner(x, n, width, lo, hi):
    m = x[0]
    for j in range(1, n):
        m = min(m, x[j])
    return abs(m) < width


@numba.njit(cache=True)
def _in_cross(x, n, width, lo, hi):
    m = abs(x[0])
    for j in range(1, n):
        m = min(m, abs(x[j]))
    return m < width


@numba.njit(cache=True)
def _in_box(x, n, width, lo, hi):
    for j in range(n):
        if x[j] <= lo[j] or x[j] >= hi[j]:
            return False
    return True


# Bridge tests take c = 2/dt: one wall at distances d0, d1 from the two
# endpoints is missed with probability 1 - exp(-c d0 d1). Terms with
# c d0 d1 > 40 are 1 to double precision and skipped.


@numba.njit(cache=True)
def _stay_corner(x, y, n, width, lo, hi, c):
    # the lower walls x_j = -width bound the corner everywhere; the facet
    # {min x = width} is left to the membership test
    q = 1.0
    for j in range(n):
        a = c * (x[j] + width) * (y[j] + width)
        if a < 40.0:
            q *= 1.0 - math.exp(-a)
    return q


@numba.njit(cache=True)
def _stay_cross(x, y, n, width, lo, hi, c):
    q = 1.0
    for j in range(n):
        alone = True  # x_j is the only coordinate keeping both endpoints inside
        for k in range(n):
            if k != j and (abs(x[k]) < width or abs(y[k]) < width):
                alone = False
                break
        if alone:
            a = c * (width - x[j]) * (width - y[j])
            if a < 40.0:
                q *= 1.0 - math.exp(-a)
            a = c * (x[j] + width) * (y[j] + width)
            if a < 40.0:
                q *= 1.0 - math.exp(-a)
    return q


@numba.njit(cache=True)
def _stay_box(x, y, n, width, lo, hi, c):
    q = 1.0
    for j in range(n):
        a = c * (x[j] - lo[j]) * (y[j] - lo[j])
        if a < 40.0:
            q *= 1.0 - math.exp(-a)
        a = c * (hi[j] - x[j]) * (hi[j] - y[j])
        if a < 40.0:
            q *= 1.0 - math.exp(-a)
    return q


def _make_walk(inside, stay):
    @numba.njit
    def walk(rng, n, width, lo, hi, x0, dt, nmax, bridge, x, y):
        """Steps until exit; returns the exit step (1-based) or -1 if censored."""
        sq = math.sqrt(dt)
        c = 2.0 / dt
        for j in range(n):
            x[j] = x0[j]
        for step in range(nmax):
            for j in range(n):
                y[j] = x[j] + sq * rng.standard_normal()
            if not inside(y, n, width, lo, hi):
                return step + 1
            if bridge:
                q = stay(x, y, n, width, lo, hi, c)
                if q < 1.0 and rng.random() > q:
                    return step + 1
            for j in range(n):
                x[j] = y[j]
        return -1

    return walk


_WALKS = {
    Kind.CORNER: _make_walk(_in_corner, _stay_corner),
    Kind.CROSS: _make_walk(_in_cross, _stay_cross),
    Kind.BOX: _make_walk(_in_box, _stay_box),
}


@dataclass(frozen=True)
class McConfig:
    """Everything that determines a sample set.

    ``domain`` is used untruncated (``R`` is ignored). ``width`` scales the
    slab half-width of corner and cross domains; it exists for the
    small-deviation route that runs in the shrunken domain.
    """

    domain: DomainSpec
    x: tuple[float, ...]
    dt: float
    n_paths: int
    t_max: float
    seed: int = 0
    bridge: bool = True
    width: float = 1.0
    stream_rule: str = STREAM_RULE

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be at least 1")
        object.__setattr__(self, "n_paths", int(self.n_paths))
        if not self.t_max >= 0:
            raise ValueError("t_max must be non-negative")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if len(self.x) != self.domain.n:
            raise ValueError("start point dimension differs from the domain")
        if self.domain.n > 4:
            raise ValueError("the sampler handles at most 4 coordinates")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        scaled = np.asarray(self.x) / (self.width if self.domain.kind is not Kind.BOX else 1.0)
        if not contains(self.domain, scaled):
            raise ValueError(f"start point {self.x} is outside the domain")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_max / self.dt + 1e-9))

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "x": list(self.x),
            "dt": self.dt,
            "n_paths": self.n_paths,
            "t_max": self.t_max,
            "seed": self.seed,
            "bridge": self.bridge,
            "width": self.width,
            "stream_rule": self.stream_rule,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> McConfig:
        return cls(
            DomainSpec.from_dict(d["domain"]),
            tuple(d["x"]),
            float(d["dt"]),
            int(d["n_paths"]),
            float(d["t_max"]),
            int(d.get("seed", 0)),
            bool(d.get("bridge", True)),
            float(d.get("width", 1.0)),
        )

    @classmethod
    def from_json(cls, text: str) -> McConfig:
        return cls.from_dict(json.loads(text))

    def _kernel_args(self):
        d = self.domain
        if d.kind is Kind.BOX:
            lo = np.array([e[0] for e in d.extents])
            hi = np.array([e[1] for e in d.extents])
        else:
            lo = hi = np.zeros(d.n)
        return (
            d.n,
            float(self.width),
            lo,
            hi,
            np.asarray(self.x, dtype=float),
            float(self.dt),
            self.n_steps,
            bool(self.bridge),
        )


@dataclass
class ExitSamples:
    """Exit times; censored paths carry ``t_max`` and ``censored=True``."""

    config: McConfig
    times: np.ndarray
    censored: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.times.size

    def mean_exit_time(self) -> tuple[float, float]:
        if self.censored.any():
            raise ValueError("mean exit time needs uncensored samples; raise t_max")
        return float(self.times.mean()), float(self.times.std(ddof=1) / math.sqrt(self.n_paths))


def _run(cfg: McConfig, start: int, count: int) -> np.ndarray:
    if start < 0 or start + count > 2**64:
        raise ValueError("path indices must fit in 64 bits")
    args = cfg._kernel_args()
    walk = _WALKS[cfg.domain.kind]
    n = cfg.domain.n
    x = np.empty(n)
    y = np.empty(n)
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        out[i] = walk(path_generator(cfg.seed, start + i), *args, x, y)
    return out


def simulate_exit(cfg: McConfig, path_index: int) -> tuple[float, bool]:
    """Exit time of one path, or ``(t_max, True)`` when it is still inside at ``t_max``."""
    k = int(_run(cfg, int(path_index), 1)[0])
    if k < 0:
        return cfg.t_max, True
    return k * cfg.dt, False


def simulate(cfg: McConfig, start: int = 0, count: int | None = None) -> ExitSamples:
    """Paths ``start .. start+count-1`` (all ``n_paths`` by default)."""
    count = cfg.n_paths if count is None else int(count)
    steps = _run(cfg, int(start), count)
    cens = steps < 0
    times = np.where(cens, cfg.t_max, steps * cfg.dt)
    return ExitSamples(cfg, times, cens)


def wilson_interval(k, N: int, z: float = 1.96):
    """Wilson score interval for ``k`` successes out of ``N``."""
    k = np.asarray(k, dtype=float)
    p = k / N
    denom = 1 + z * z / N
    centre = (p + z * z / (2 * N)) / denom
    half = z * np.sqrt(p * (1 - p) / N + z * z / (4 * N * N)) / denom
    return np.clip(centre - half, 0.0, 1.0), np.clip(centre + half, 0.0, 1.0)


@dataclass
class TailEstimate:
    t: np.ndarray
    S: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_alive: np.ndarray
    n_paths: int
    censored: int
    t_max: float

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.ci_hi - self.ci_lo)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "S", "ci_lo", "ci_hi", "n_alive"])
            for row in zip(self.t, self.S, self.ci_lo, self.ci_hi, self.n_alive):
                w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), repr(float(row[3])), int(row[4])])

    def at(self, t: float) -> tuple[float, float, float]:
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) > 1e-9:
            raise ValueError(f"t={t} is not on the tail's time grid")
        return float(self.S[i]), float(self.ci_lo[i]), float(self.ci_hi[i])


def survival_curve(samples: ExitSamples, t_grid=None, z: float = 1.96) -> TailEstimate:
    """Empirical ``P{tau >= t}`` with Wilson intervals on a time grid.

    The grid stops at ``t_max``; beyond it censored paths carry no
    information. The default grid has spacing ``max(dt, t_max / 400)``.
    """
    cfg = samples.config
    N = samples.n_paths
    if N < 1:
        raise ValueError("need at least one sample")
    if t_grid is None:
        step = max(cfg.dt, cfg.t_max / 400) if cfg.t_max > 0 else 1.0
        t_grid = np.arange(0.0, cfg.t_max + 1e-12, step) if cfg.t_max > 0 else np.zeros(1)
    t = np.asarray(t_grid, dtype=float)
    t = t[t <= cfg.t_max + 1e-12]
    if t.size == 0:
        raise ValueError("time grid lies beyond t_max")
    # alive at t  <=>  exit time >= t (censored paths are alive through t_max)
    order = np.sort(samples.times)
    alive = N - np.searchsorted(order, t - 1e-12, side="left")
    S = alive / N
    lo, hi = wilson_interval(alive, N, z)
    return TailEstimate(t, S, lo, hi, alive.astype(np.int64), N, int(samples.censored.sum()), cfg.t_max)


@dataclass
class RateFit:
    slope: float
    stderr: float
    window: tuple[float, float]
    intercept: float
    intercept_stderr: float
    n_points: int
    meta: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        """``-2 * slope``: the eigenvalue the tail decays with."""
        return -2.0 * self.slope

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "stderr": self.stderr,
            "window": list(self.window),
            "intercept": self.intercept,
            "intercept_stderr": self.intercept_stderr,
            "n_points": self.n_points,
            "rate": self.rate,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def rate_regression(tail: TailEstimate, window: tuple[float, float], z: float = 1.96) -> RateFit:
    """Weighted least squares of ``log S`` against ``t`` on ``window``.

    Weights are inverse variances of ``log S`` read off the interval widths.
    The points share paths, so the reported standard errors use the
    binomial covariance ``Cov(log S_s, log S_t) = (1 - S_s) / (N S_s)`` for
    ``s <= t`` instead of treating the points as independent.
    """
    t1, t2 = window
    sel = (tail.t >= t1 - 1e-12) & (tail.t <= t2 + 1e-12)
    if sel.sum() < 4:
        raise ValueError(f"window {window} holds {int(sel.sum())} grid points; need at least 4")
    t = tail.t[sel]
    S = tail.S[sel]
    if np.any(S <= 0):
        raise ValueError("survival reached zero inside the window")
    N = tail.n_paths
    sig = tail.half_width[sel] / (z * S)
    sig = np.maximum(sig, 1.0 / N)  # S = 1 gives zero width
    w = 1.0 / sig**2
    X = np.column_stack([np.ones_like(t), t])
    y = np.log(S)
    XtW = X.T * w
    bread = np.linalg.inv(XtW @ X)
    beta = bread @ (XtW @ y)
    v = (1 - S) / (N * S)
    C = v[np.minimum.outer(np.arange(t.size), np.arange(t.size))]
    cov = bread @ XtW @ C @ XtW.T @ bread
    return RateFit(
        slope=float(beta[1]),
        stderr=float(math.sqrt(max(cov[1, 1], 0.0))),
        window=(float(t[0]), float(t[-1])),
        intercept=float(beta[0]),
        intercept_stderr=float(math.sqrt(max(cov[0, 0], 0.0))),
        n_points=int(t.size),
    )


def select_window(
    tail: TailEstimate,
    lam: float,
    lam_next: float,
    contamination: float = 0.05,
    floor: float = 100.0,
) -> tuple[tuple[float, float], bool]:
    """Regression window ``[t1, t2]`` and whether the fallback was used.

    ``t1``: the next spectral level (rate ``lam_next``) is down to
    ``contamination`` relative to the ground term. ``t2``: the last grid time
    with more than ``floor`` surviving paths. When ``t1`` leaves fewer than
    four grid points the window falls back to ``[t2/2, t2]``.
    """
    alive_ok = tail.n_alive > floor
    if not alive_ok.any():
        raise ValueError("no grid time has enough surviving paths")
    t2 = float(tail.t[np.flatnonzero(alive_ok)[-1]])
    t1 = 2 * math.log(1 / contamination) / (lam_next - lam) if lam_next > lam else math.inf
    inside = (tail.t >= t1) & (tail.t <= t2)
    if inside.sum() >= 4:
        return (t1, t2), False
    return (t2 / 2, t2), True


def spectral_slope_check(fit: RateFit, lam: float, lam_err: float = 0.0, rtol: float = 0.05) -> dict:
    """Compare ``-2 * slope`` with a spectral eigenvalue."""
    rate_err = 2 * fit.stderr
    rel = abs(fit.rate - lam) / lam
    allowed = max(rtol, 3 * math.hypot(rate_err, lam_err) / lam)
    return {"mc_rate": fit.rate, "mc_rate_stderr": rate_err, "lambda": lam, "rel_diff": rel, "ok": bool(rel < allowed)}


@dataclass
class SmallDeviation:
    eps: float
    t: float
    exit_route: tuple[float, float, float]
    path_route: tuple[float, float, float]
    agree: bool
    infeasible: bool = False
    required_paths: int | None = None

    @property
    def probability(self) -> float:
        return self.exit_route[0]

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "t": self.t,
            "exit_route": list(self.exit_route),
            "path_route": list(self.path_route),
            "agree": self.agree,
            "infeasible": self.infeasible,
            "required_paths": self.required_paths,
        }


def small_deviation(
    eps: float,
    domain: DomainSpec,
    n_paths: int,
    dt: float,
    seed: int = 0,
    max_steps: int = 2_000_000,
    min_survivors: float = 30.0,
) -> SmallDeviation:
    """``P{ sup_{t<=1} |min_j W_j(t)| <= eps }`` by two estimators.

    Exit route: paths from the origin in the unit-width domain up to
    ``t = eps^-2``. Path route: paths on ``[0, 1]`` checked against the
    functional directly, which is staying in the domain of half-width ``eps``
    (``min_j |W_j|`` for crosses). The routes use the same ``dt`` (so the
    path route is finer relative to its scale) and independent streams.
    ``agree`` compares their Wilson intervals.

    If ``eps^-2 / dt`` exceeds ``max_steps`` the result is flagged infeasible,
    with the path count needed for ``min_survivors`` survivors estimated from
    the path route.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if domain.kind is Kind.BOX:
        raise ValueError("the functional is defined for corner and cross domains")
    t = eps**-2
    origin = tuple([0.0] * domain.n)
    path_cfg = McConfig(domain, origin, dt, n_paths, 1.0, seed ^ 0x5DEECE66D, width=eps)
    S_p = survival_curve(simulate(path_cfg), [0.0, 1.0]).at(1.0)
    if t / dt > max_steps:
        need = int(math.ceil(min_survivors / max(S_p[0], 1.0 / n_paths)))
        return SmallDeviation(eps, t, (math.nan,) * 3, S_p, False, True, need)
    exit_cfg = McConfig(domain, origin, dt, n_paths, t, seed)
    S_e = survival_curve(simulate(exit_cfg), [0.0, t]).at(t)
    agree = bool(S_e[1] <= S_p[2] and S_p[1] <= S_e[2])
    return SmallDeviation(eps, t, S_e, S_p, agree)


@dataclass
class DriftProbe:
    near: RateFit
    far: RateFit
    slopes_agree: bool
    far_intercept_lower: bool
    intercept_ratio: float

    def to_dict(self) -> dict:
        return {
            "near": self.near.to_dict(),
            "far": self.far.to_dict(),
            "slopes_agree": self.slopes_agree,
            "far_intercept_lower": self.far_intercept_lower,
            "intercept_ratio": self.intercept_ratio,
        }


def drift_to_origin_probe(
    domain: DomainSpec,
    x_far,
    x_near,
    window: tuple[float, float],
    n_paths: int,
    dt: float,
    t_max: float,
    seed: int = 0,
    k_sigma: float = 2.0,
) -> DriftProbe:
    """Tail fits from two starts: equal slopes, smaller amplitude far out.

    ``intercept_ratio`` is ``exp(intercept_near - intercept_far)``, which
    estimates ``U(x_near) / U(x_far)``.
    """
    fits = []
    for x in (x_near, x_far):
        cfg = McConfig(domain, tuple(x), dt, n_paths, t_max, seed)
        tail = survival_curve(simulate(cfg))
        fits.append(rate_regression(tail, window))
    near, far = fits
    joint = math.hypot(near.stderr, far.stderr)
    return DriftProbe(
        near=near,
        far=far,
        slopes_agree=bool(abs(near.slope - far.slope) <= k_sigma * joint),
        far_intercept_lower=bool(far.intercept <= near.intercept),
        intercept_ratio=float(math.exp(near.intercept - far.intercept)),
    )


def normal_quantile(level: float) -> float:
    return float(_normal.ppf(0.5 + level / 2))
