"""Experiment orchestration and the ``nss-lab`` command line interface.

An experiment runs the full verification pipeline on one system: dissipation
check, one long trajectory, loop extraction, time-average distribution versus
its closed-form lower bound, crossing-time bound checks, fractile occupancy
and optional ensemble moment / probability checks.  All tables are written as
CSV plus a plain-text summary; outputs are byte-reproducible for a fixed
configuration.

Exit codes: 0 all checks pass, 2 premises unverified, 3 a bound check
flagged, 4 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .bounds import LevelPair, beta_star, fractile_q, make_bound_set, optimal_v0
from .loops import (
    CrossTimeReport,
    MomentReport,
    ProbabilityReport,
    empirical_time_average,
    extract_loops,
    verify_cross_time_bounds,
    verify_moment_bound,
    verify_probability_bound,
)
from .model import SystemSpec, builtin_example, check_enss
from .sim import RNG_ALGORITHM, SimConfig, ensemble, integrate, trajectory_to_csv

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "EXIT_OK",
    "EXIT_PREMISES",
    "EXIT_FLAGGED",
    "EXIT_ERROR",
    "run_example",
    "run_custom",
    "write_report",
    "main",
    "console_main",
]

EXIT_OK = 0
EXIT_PREMISES = 2
EXIT_FLAGGED = 3
EXIT_ERROR = 4

_DEFAULT_SEED = 20240811


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment configuration; every field appears in the echo."""

    system: str = "example-2d"
    t_end: float = 500.0
    dt: float = 1e-3
    seed: int = _DEFAULT_SEED
    x0: Tuple[float, ...] = (0.0, 0.0)
    v1: float = 2.0
    v0: Optional[float] = None  # None selects the optimal level ratio
    r_min: float = 1.05
    r_max: float = 10.0
    r_count: int = 50
    r_spacing: str = "log"
    k_list: Tuple[float, ...] = (1.0 / 3.0,)
    n_paths: int = 0
    check_times: Tuple[float, ...] = (1.0, 2.5, 5.0)
    prob_radius: float = 3.0
    confidence: float = 0.99
    output_dir: str = "nss-lab-out"
    dump_trajectory: bool = False

    def r_grid(self) -> np.ndarray:
        if self.r_spacing == "log":
            return np.geomspace(self.r_min, self.r_max, self.r_count)
        if self.r_spacing == "linear":
            return np.linspace(self.r_min, self.r_max, self.r_count)
        raise ValueError(f"r_spacing must be 'log' or 'linear', got {self.r_spacing!r}")

    def echo_ini(self) -> str:
        """Canonical INI text sufficient to reproduce the run exactly."""
        lines = [
            "[system]",
            f"name = {self.system}",
            "x0 = " + ",".join(f"{v:.17g}" for v in self.x0),
            "",
            "[sim]",
            f"t_end = {self.t_end:.17g}",
            f"dt = {self.dt:.17g}",
            f"seed = {self.seed}",
            f"dump_trajectory = {str(self.dump_trajectory).lower()}",
            "",
            "[levels]",
            f"v1 = {self.v1:.17g}",
            "v0 = " + ("optimal" if self.v0 is None else f"{self.v0:.17g}"),
            "",
            "[grid]",
            f"r_min = {self.r_min:.17g}",
            f"r_max = {self.r_max:.17g}",
            f"count = {self.r_count}",
            f"spacing = {self.r_spacing}",
            "",
            "[fractiles]",
            "k = " + ",".join(f"{v:.17g}" for v in self.k_list),
            "",
            "[ensemble]",
            f"n_paths = {self.n_paths}",
            "check_times = " + ",".join(f"{v:.17g}" for v in self.check_times),
            f"prob_radius = {self.prob_radius:.17g}",
            "",
            "[stats]",
            f"confidence = {self.confidence:.17g}",
            "",
            "[output]",
            f"dir = {self.output_dir}",
        ]
        return "\n".join(lines) + "\n"


def _parse_floats(raw: str) -> Tuple[float, ...]:
    return tuple(float(tok) for tok in raw.split(",") if tok.strip())


_CONFIG_KEYS = {
    ("system", "name"): ("system", str),
    ("system", "x0"): ("x0", _parse_floats),
    ("sim", "t_end"): ("t_end", float),
    ("sim", "dt"): ("dt", float),
    ("sim", "seed"): ("seed", int),
    ("sim", "dump_trajectory"): ("dump_trajectory", lambda s: s.lower() in ("1", "true", "yes")),
    ("levels", "v1"): ("v1", float),
    ("levels", "v0"): ("v0", lambda s: None if s.strip() == "optimal" else float(s)),
    ("grid", "r_min"): ("r_min", float),
    ("grid", "r_max"): ("r_max", float),
    ("grid", "count"): ("r_count", int),
    ("grid", "spacing"): ("r_spacing", str),
    ("fractiles", "k"): ("k_list", _parse_floats),
    ("ensemble", "n_paths"): ("n_paths", int),
    ("ensemble", "check_times"): ("check_times", _parse_floats),
    ("ensemble", "prob_radius"): ("prob_radius", float),
    ("stats", "confidence"): ("confidence", float),
    ("output", "dir"): ("output_dir", str),
}


def load_config(path: Optional[str] = None,
                overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read an INI config file and apply ``section.key=value`` overrides."""
    cfg = ExperimentConfig()
    updates = {}
    if path is not None:
        parser = configparser.ConfigParser()
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        for section in parser.sections():
            for key, raw in parser.items(section):
                spec = _CONFIG_KEYS.get((section, key))
                if spec is None:
                    raise ValueError(f"unknown config key [{section}] {key}")
                updates[spec[0]] = spec[1](raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValueError(f"override must look like section.key=value, got {item!r}")
        loc, raw = item.split("=", 1)
        section, key = loc.split(".", 1)
        spec = _CONFIG_KEYS.get((section.strip(), key.strip()))
        if spec is None:
            raise ValueError(f"unknown config key [{section}] {key}")
        updates[spec[0]] = spec[1](raw)
    return replace(cfg, **updates)


@dataclass
class ExperimentReport:
    """Everything one run produced: metadata, tables and a verdict."""

    config_echo: str
    rng_algorithm: str = RNG_ALGORITHM
    version: str = __version__
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    checks: List[Tuple[str, str, str]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    premises_verified: bool = True
    exit_code: int = EXIT_OK

    def add_check(self, name: str, passed: bool, detail: str, skipped: bool = False):
        status = "skip" if skipped else ("pass" if passed else "FLAG")
        self.checks.append((name, status, detail))

    @property
    def verdict(self) -> str:
        if not self.premises_verified:
            return "premises-unverified"
        if any(status == "FLAG" for _, status, _ in self.checks):
            return "flagged"
        return "pass"

    def summary_text(self) -> str:
        lines = [
            f"nss-lab {self.version}",
            f"rng: {self.rng_algorithm}",
            "",
            "checks:",
        ]
        for name, status, detail in self.checks:
            lines.append(f"  [{status:>4}] {name}: {detail}")
        for note in self.notes:
            lines.append(f"note: {note}")
        lines += ["", f"verdict: {self.verdict}", "", "config echo:", self.config_echo]
        return "\n".join(lines)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_report(report: ExperimentReport, outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in report.tables.items():
        with open(out / f"{name}.csv", "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(c) for c in row) + "\n")
    (out / "summary.txt").write_text(report.summary_text(), encoding="utf-8")
    (out / "config_echo.ini").write_text(report.config_echo, encoding="utf-8")


def _premise_sample(spec: SystemSpec, cfg: ExperimentConfig):
    """State/time grids for the dissipation check (box around the origin)."""
    n = spec.dim_state
    per_axis = 7 if n <= 3 else 3
    axes = [np.linspace(-3.0, 3.0, per_axis)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    states = np.stack([m.ravel() for m in mesh], axis=-1)
    t_hi = min(cfg.t_end, 2.0 * math.pi)
    times = np.linspace(0.0, t_hi, 11)
    gamma_times = np.linspace(0.0, min(cfg.t_end, 2.0 * math.pi), 10_000)
    return states, times, gamma_times


def _run_pipeline(spec: SystemSpec, cfg: ExperimentConfig) -> ExperimentReport:
    report = ExperimentReport(config_echo=cfg.echo_ini())
    lyap = spec.lyapunov
    floor = spec.noise_floor

    # stage: premises
    states, times, gamma_times = _premise_sample(spec, cfg)
    cond = check_enss(spec, states, times, gamma_times=gamma_times)
    report.add_check(
        "dissipation-conditions",
        cond.passed,
        f"max residual {cond.max_violation:.6g} over {cond.points_checked} points, "
        f"gamma margin {cond.gamma_max_violation:.6g}",
    )
    report.premises_verified = cond.passed

    # stage: simulate
    sim_cfg = SimConfig(t_end=cfg.t_end, dt=cfg.dt, seed=cfg.seed, x0=cfg.x0)
    traj = integrate(spec, sim_cfg)
    if cfg.dump_trajectory:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        trajectory_to_csv(traj, Path(cfg.output_dir) / "trajectory.csv")

    if report.premises_verified:
        v0 = cfg.v0 if cfg.v0 is not None else optimal_v0(cfg.v1, spec.c, spec.gamma_max)
        levels = LevelPair(v0=v0, v1=cfg.v1, c=spec.c, gamma_max=spec.gamma_max)
        bset = make_bound_set(levels, lyap.alpha1, lyap.alpha1_inv)

        # stage: time-average distribution vs closed-form bound
        grid = cfg.r_grid()
        dist = empirical_time_average(traj, grid, mode="norm")
        rows = []
        violations = 0
        for r, d in zip(dist.thresholds, dist.values):
            b = bset.b(float(r))
            bad = d < b
            violations += int(bad)
            rows.append([float(r), float(d), b, bad])
        report.tables["distribution"] = (["r", "D_empirical", "b_bound", "flag"], rows)
        report.add_check(
            "time-average-distribution",
            violations == 0,
            f"D(r) >= b(r) at {len(rows) - violations}/{len(rows)} grid points",
        )

        # stage: crossing-time bounds
        record = extract_loops(traj, v0=v0, v1=cfg.v1)
        ct = verify_cross_time_bounds(record, levels, confidence=cfg.confidence)
        header = ["threshold", "empirical", "bound", "ci_low", "ci_high", "flag"]
        report.tables["up_cross_survival"] = (header, [r.csv_cols() for r in ct.up_rows])
        report.tables["down_cross_survival"] = (header, [r.csv_cols() for r in ct.down_rows])
        if ct.underpowered:
            report.add_check(
                "cross-time-bounds", True,
                f"underpowered: only {record.complete_loops} complete loops", skipped=True,
            )
        else:
            report.add_check(
                "cross-time-bounds",
                ct.n_flags == 0,
                f"{record.complete_loops} loops, {ct.n_flags} flags; "
                f"mean up {ct.mean_up:.4g} vs t_uc {ct.t_uc:.4g}, "
                f"mean down {ct.mean_down:.4g} vs t_dc {ct.t_dc:.4g}",
            )

        # stage: fractile occupancy
        occ_rows = []
        occ_ok = True
        for k in cfg.k_list:
            qk = bset.q(k)
            occ = float(
                empirical_time_average(traj, [qk], mode="norm").values[0]
            )
            good = occ >= k
            occ_ok = occ_ok and good
            occ_rows.append([k, qk, occ, not good])
        report.tables["occupancy"] = (["k", "q_k", "occupied_fraction", "flag"], occ_rows)
        report.add_check(
            "fractile-occupancy", occ_ok,
            "; ".join(f"k={k:.4g}: {o:.4g} at q={q:.4g}" for k, q, o, _ in occ_rows),
        )
    else:
        report.notes.append("bound checks skipped: dissipation premises unverified")

    # stage: ensemble checks
    if cfg.n_paths > 0 and report.premises_verified:
        t_hi = max(cfg.check_times)
        save_every = max(1, int(round(0.1 / cfg.dt)))
        n_steps = SimConfig(t_end=t_hi, dt=cfg.dt, seed=cfg.seed, x0=cfg.x0).n_steps
        while n_steps % save_every != 0:
            save_every -= 1
        ens_cfg = SimConfig(t_end=t_hi, dt=cfg.dt, seed=cfg.seed, x0=cfg.x0,
                            save_every=save_every)
        paths = ensemble(spec, ens_cfg, cfg.n_paths)
        mom = verify_moment_bound(paths, spec, cfg.check_times)
        report.tables["moment_bound"] = (
            ["t", "mean_V", "bound", "ci_low", "ci_high", "flag"],
            [r.csv_cols() for r in mom.rows],
        )
        report.add_check(
            "moment-bound", mom.passed,
            f"{len(mom.rows)} times, {sum(r.flag for r in mom.rows)} flags",
        )
        prob_rows = []
        prob_ok = True
        for t in cfg.check_times:
            pr = verify_probability_bound(paths, spec, cfg.prob_radius, t,
                                          confidence=cfg.confidence)
            prob_ok = prob_ok and pr.passed
            prob_rows.append([pr.time, pr.frequency, pr.floor, pr.ci_low,
                              pr.ci_high, pr.vacuous, pr.flag])
            if pr.vacuous:
                report.notes.append(f"probability bound vacuous at t={t:g}")
        report.tables["probability_bound"] = (
            ["t", "frequency", "floor", "ci_low", "ci_high", "vacuous", "flag"],
            prob_rows,
        )
        report.add_check("probability-bound", prob_ok,
                         f"radius {cfg.prob_radius:g} at {len(prob_rows)} times")
    elif cfg.n_paths == 0:
        report.notes.append("ensemble checks skipped: n_paths = 0")

    if not report.premises_verified:
        report.exit_code = EXIT_PREMISES
    elif report.verdict == "flagged":
        report.exit_code = EXIT_FLAGGED
    return report


def run_example(cfg: Optional[ExperimentConfig] = None) -> ExperimentReport:
    """Run the full pipeline on the built-in 2-D benchmark system."""
    cfg = cfg or ExperimentConfig()
    if cfg.system != "example-2d":
        raise ValueError(f"run_example requires system 'example-2d', got {cfg.system!r}")
    return _run_pipeline(builtin_example(), cfg)


def run_custom(spec: SystemSpec, cfg: ExperimentConfig) -> ExperimentReport:
    """Run the same pipeline on a user-supplied system specification."""
    return _run_pipeline(spec, cfg)


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.set or [])
    if cfg.system != "example-2d":
        raise ValueError(
            f"unknown built-in system {cfg.system!r}; custom systems are supplied "
            "through the library API (run_custom)"
        )
    report = run_example(cfg)
    write_report(report, cfg.output_dir)
    print(report.summary_text())
    return report.exit_code


def _cmd_example(args) -> int:
    cfg = load_config(None, args.set or [])
    report = run_example(cfg)
    write_report(report, cfg.output_dir)
    print(report.summary_text())
    return report.exit_code


def _cmd_bounds(args) -> int:
    if args.optimal:
        v0 = optimal_v0(args.v1, args.c, args.gamma_max)
    elif args.v0 is not None:
        v0 = args.v0
    else:
        raise ValueError("provide --v0 or --optimal")
    levels = LevelPair(v0=v0, v1=args.v1, c=args.c, gamma_max=args.gamma_max)
    from .bounds import expected_down_cross, expected_up_cross, occupancy_ratio_bound

    print(f"v0         = {v0:.12g}")
    print(f"beta       = {levels.beta:.12g}")
    print(f"beta_star  = {beta_star():.12g}")
    print(f"t_uc       = {expected_up_cross(levels):.12g}")
    print(f"t_dc       = {expected_down_cross(levels):.12g}")
    print(f"ratio_bound= {occupancy_ratio_bound(levels):.12g}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nss-lab",
        description="Simulate and statistically verify exponentially "
                    "noise-to-state stable stochastic systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--set", action="append", metavar="section.key=value")
    p_run.set_defaults(fn=_cmd_run)

    p_ex = sub.add_parser("example", help="run the built-in benchmark experiment")
    p_ex.add_argument("--set", action="append", metavar="section.key=value")
    p_ex.set_defaults(fn=_cmd_example)

    p_b = sub.add_parser("bounds", help="print closed-form crossing-time bounds")
    p_b.add_argument("--c", type=float, required=True)
    p_b.add_argument("--gamma-max", dest="gamma_max", type=float, required=True)
    p_b.add_argument("--v1", type=float, required=True)
    p_b.add_argument("--v0", type=float, default=None)
    p_b.add_argument("--optimal", action="store_true")
    p_b.set_defaults(fn=_cmd_bounds)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def console_main() -> None:
    sys.exit(main())
