"""Batch front end: ``fichera {eigen,certify,heat,exit,report} ...``.

Every run is described by an :class:`ExperimentConfig`. A JSON file passed
with ``--config`` supplies the fields; command-line flags override them.
Outputs go to ``--out``, else ``$FICHERA_OUTPUT_DIR``, else ``./fichera-out``.

Exit codes: 0 all claims pass, 1 some claim fails, 2 invalid configuration,
3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import claims, exit_mc, heat, variational
from .discretization import assemble_dirichlet_laplacian, build_grid
from .eigensolver import ladder, threshold
from .geometry import DomainSpec, Kind

COMMANDS = ("eigen", "certify", "heat", "exit", "report")
OUTPUT_ENV = "FICHERA_OUTPUT_DIR"
EXIT_OK, EXIT_CLAIM, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("fichera")


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class ExperimentConfig:
    command: str
    domain: DomainSpec | None = None
    m: list[int] = field(default_factory=lambda: [8, 16, 32])
    R: list[float] = field(default_factory=lambda: [8.0])
    tolerances: dict = field(default_factory=lambda: {"eig": 1e-8})
    paths: int = 100_000
    dt: float = 1e-3
    t_max: float = 12.0
    x: list[float] | None = None
    seed: int = 7
    output: str | None = None
    quick: bool = False

    def output_dir(self) -> Path:
        return Path(self.output or os.environ.get(OUTPUT_ENV) or "fichera-out")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain"] = None if self.domain is None else self.domain.to_dict()
        return d


def _increasing(values) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


def config_violations(raw: dict) -> list[str]:
    """Every schema problem in ``raw``, each naming its field."""
    out = []
    if not isinstance(raw, dict):
        return ["config: must be a JSON object"]
    cmd = raw.get("command")
    if cmd not in COMMANDS:
        out.append(f"command: must be one of {', '.join(COMMANDS)} (got {cmd!r})")
    if cmd != "report":
        dom = raw.get("domain")
        if dom is None:
            out.append("domain: required for this command")
        else:
            try:
                DomainSpec.from_dict(dom if isinstance(dom, dict) else {"kind": dom, "n": raw.get("n")})
            except (KeyError, TypeError, ValueError) as e:
                out.append(f"domain: {e}")
    m = raw.get("m", [8, 16, 32])
    if not isinstance(m, list) or not m:
        out.append("m: ladder must be a non-empty list")
    elif not all(isinstance(v, int) and v >= 1 for v in m):
        out.append("m: entries must be positive integers")
    elif not _increasing(m):
        out.append("m: ladder not increasing")
    elif cmd in ("eigen", "certify", "heat") and len(m) < 3 and not _is_box(raw.get("domain")):
        out.append("m: extrapolation needs at least three levels")
    R = raw.get("R", [8.0])
    if not isinstance(R, list) or not R:
        out.append("R: list must be non-empty")
    elif not all(isinstance(v, (int, float)) and v > 0 for v in R):
        out.append("R: entries must be positive numbers")
    elif not _increasing(R):
        out.append("R: list not increasing")
    if not (isinstance(raw.get("paths", 1), (int, float)) and raw.get("paths", 1) >= 1):
        out.append("paths: must be at least 1")
    if not (isinstance(raw.get("dt", 1e-3), (int, float)) and raw.get("dt", 1e-3) > 0):
        out.append("dt: must be positive")
    if not (isinstance(raw.get("t_max", 1.0), (int, float)) and raw.get("t_max", 1.0) >= 0):
        out.append("t_max: must be non-negative")
    seed = raw.get("seed", 0)
    if not (isinstance(seed, int) and 0 <= seed < 2**64):
        out.append("seed: must be an integer in [0, 2^64)")
    tol = raw.get("tolerances", {})
    if not isinstance(tol, dict) or not all(isinstance(v, (int, float)) and v > 0 for v in tol.values()):
        out.append("tolerances: must map names to positive numbers")
    outdir = raw.get("output")
    if outdir is not None and not _writable(Path(outdir)):
        out.append(f"output: directory {outdir} is not writable")
    return out


def _is_box(dom) -> bool:
    kind = dom.get("kind") if isinstance(dom, dict) else dom
    return kind == Kind.BOX.value


def _writable(path: Path) -> bool:
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryFile(dir=path):
            pass
        return True
    except OSError:
        return False


def validate_config(raw: dict) -> ExperimentConfig:
    """Schema-checked config; raises :class:`ConfigError` listing all violations."""
    problems = config_violations(raw)
    if problems:
        raise ConfigError(problems)
    dom = raw.get("domain")
    domain = None
    if dom is not None:
        domain = DomainSpec.from_dict(dom if isinstance(dom, dict) else {"kind": dom, "n": raw.get("n")})
    return ExperimentConfig(
        command=raw["command"],
        domain=domain,
        m=list(raw.get("m", [8, 16, 32])),
        R=[float(v) for v in raw.get("R", [8.0])],
        tolerances=dict(raw.get("tolerances", {"eig": 1e-8})),
        paths=int(raw.get("paths", 100_000)),
        dt=float(raw.get("dt", 1e-3)),
        t_max=float(raw.get("t_max", 12.0)),
        x=None if raw.get("x") is None else [float(v) for v in raw["x"]],
        seed=int(raw.get("seed", 7)),
        output=raw.get("output"),
        quick=bool(raw.get("quick", False)),
    )


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, default=claims._jsonable)


def _domain_at(cfg: ExperimentConfig, R: float) -> DomainSpec:
    d = cfg.domain
    return d if d.kind is Kind.BOX else d.with_R(R)


def run_eigen(cfg: ExperimentConfig) -> int:
    out = cfg.output_dir()
    tol = cfg.tolerances.get("eig", 1e-8)
    summary = {"domain": cfg.domain.to_dict(), "ladders": []}
    for R in cfg.R:
        results, ext = ladder(_domain_at(cfg, R), cfg.m, tol=tol)
        summary["ladders"].append(
            {"R": R, "results": [r.to_dict() for r in results], "extrapolated": ext.to_dict()}
        )
        results[-1].write_vector_csv(out / f"eigenvector_R{R:g}_m{results[-1].grid.m}.csv")
    _write(out / "eigen.json", _json(summary))
    print(_json({"R": cfg.R, "extrapolated": [s["extrapolated"] for s in summary["ladders"]]}))
    return EXIT_OK


def run_certify(cfg: ExperimentConfig) -> int:
    d = cfg.domain
    if d.kind is Kind.BOX:
        raise ConfigError(["domain: certificates exist for corner and cross domains"])
    low = d.lower()
    if low.kind is Kind.BOX:
        raise ConfigError(["domain: certificates need n >= 3 (the section must itself be a corner or cross)"])
    low = low.with_R(cfg.R[-1])
    results, ext = ladder(low, cfg.m, tol=cfg.tolerances.get("eig", 1e-8))
    fine, coarse = results[-1], results[-2] if len(results) > 1 else None
    if d.kind is Kind.CORNER:
        scan = variational.corner_certificate_scan(fine, ext.value, coarse=coarse)
        payload = {"passed": scan.passed, "certificates": [c.to_dict() for c in scan.certificates]}
    else:
        cert = variational.cross_certificate(fine, R=cfg.tolerances.get("segment", 4.0), beta=cfg.tolerances.get("beta"), coarse=coarse)
        payload = {"passed": cert.passed, "certificate": cert.to_dict()}
    _write(cfg.output_dir() / "certificate.json", _json(payload))
    print(_json({"passed": payload["passed"]}))
    return EXIT_OK if payload["passed"] else EXIT_CLAIM


def run_heat(cfg: ExperimentConfig) -> int:
    d = _domain_at(cfg, cfg.R[-1])
    out = cfg.output_dir()
    g = build_grid(d, cfg.m[-1])
    A = assemble_dirichlet_laplacian(g)
    T = cfg.t_max
    cps = np.linspace(0.0, T, 33)
    run = heat.step_heat(g, A, cfg.dt, T, cps)
    probes = [cfg.x or [0.0] * d.n]
    run.write_csv(out / "heat.csv", probes=probes)
    payload = {"domain": d.to_dict(), "m": g.m, "dt": cfg.dt, "T": T, "meta": run.meta}
    if d.kind is not Kind.BOX:
        from .eigensolver import solve_domain

        eig = solve_domain(d, g.m)
        lam_dagger = threshold(d, cfg.m, R=d.R).value
        try:
            fit = heat.fit_asymptotics(run, eig, lam_dagger)
            payload["fit"] = fit.to_dict()
        except ValueError as e:
            payload["fit_error"] = str(e)
    _write(out / "heat.json", _json(payload))
    print(_json({k: v for k, v in payload.items() if k != "fit"} | {"A_hat": payload.get("fit", {}).get("A_hat")}))
    return EXIT_OK


def run_exit(cfg: ExperimentConfig) -> int:
    d = cfg.domain
    x = tuple(cfg.x or [0.0] * d.n)
    mc = exit_mc.McConfig(d, x, cfg.dt, cfg.paths, cfg.t_max, cfg.seed)
    out = cfg.output_dir()
    _write(out / "mc_config.json", mc.to_json())
    samples = exit_mc.simulate(mc)
    tail = exit_mc.survival_curve(samples, np.arange(0.0, cfg.t_max + 1e-9, 0.05))
    tail.write_csv(out / "tail.csv")
    alive = tail.n_alive > 100
    payload = {"paths": cfg.paths, "censored": tail.censored}
    if alive.sum() >= 8:
        t2 = float(tail.t[np.flatnonzero(alive)[-1]])
        fit = exit_mc.rate_regression(tail, (t2 / 2, t2))
        _write(out / "rate.json", fit.to_json())
        payload["rate"] = fit.rate
        payload["rate_stderr"] = 2 * fit.stderr
    print(_json(payload))
    return EXIT_OK


def run_report(cfg: ExperimentConfig) -> int:
    profile = claims.QUICK if cfg.quick else claims.FULL
    suite = claims.Suite(profile)
    rep = suite.report(on_result=lambda r: print(r.line(), flush=True))
    out = cfg.output_dir()
    _write(out / "report.json", rep.to_json())
    rep.write_csv(out / "report.csv")
    print(f"{sum(r.passed for r in rep.rows)}/{len(rep.rows)} claims pass ({profile.name} profile)")
    return EXIT_OK if rep.all_passed else EXIT_CLAIM


RUNNERS = {"eigen": run_eigen, "certify": run_certify, "heat": run_heat, "exit": run_exit, "report": run_report}


def _csv_numbers(kind):
    def parse(text: str):
        return [kind(float(v)) if kind is int else kind(v) for v in text.split(",") if v.strip()]

    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fichera", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON config; flags override its fields")
        s.add_argument("--out", dest="output", help=f"output directory (default ${OUTPUT_ENV} or ./fichera-out)")
        if name == "report":
            s.add_argument("--quick", action="store_true", default=None, help="coarser ladders and 1e5 paths")
            continue
        s.add_argument("--domain", choices=[k.value for k in Kind])
        s.add_argument("--n", type=int)
        s.add_argument("--extents", help="box extents as lo:hi,lo:hi")
        s.add_argument("--m", type=_csv_numbers(int), help="resolution ladder, e.g. 8,16,32")
        s.add_argument("--R", type=_csv_numbers(float), help="truncation radii, e.g. 6,8")
        s.add_argument("--paths", type=lambda v: int(float(v)))
        s.add_argument("--dt", type=float)
        s.add_argument("--t-max", dest="t_max", type=float)
        s.add_argument("--x", type=_csv_numbers(float), help="start or probe point")
        s.add_argument("--seed", type=int)
    return p


def _merge(args: argparse.Namespace) -> dict:
    raw: dict = {}
    if args.config is not None:
        raw = json.loads(Path(args.config).read_text())
    raw["command"] = args.command
    flags = vars(args)
    if flags.get("domain") is not None:
        dom = {"kind": flags["domain"], "n": flags.get("n")}
        if flags["domain"] == "box":
            ext = flags.get("extents") or "-1:1"
            dom["extents"] = [[float(a) for a in part.split(":")] for part in ext.split(",")]
            dom["n"] = len(dom["extents"])
        raw["domain"] = dom
    elif flags.get("n") is not None and isinstance(raw.get("domain"), dict):
        raw["domain"]["n"] = flags["n"]
    for key in ("m", "R", "paths", "dt", "t_max", "x", "seed", "output", "quick"):
        if flags.get(key) is not None:
            raw[key] = flags[key]
    return raw


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = validate_config(_merge(args))
    except ConfigError as e:
        for v in e.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg.output_dir().mkdir(parents=True, exist_ok=True)
        return RUNNERS[cfg.command](cfg)
    except ConfigError as e:
        for v in e.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001  (any failure maps to exit code 3)
        print(f"error in {cfg.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
