"""``parot`` command-line driver.

Sub-commands::

    parot build     solve snapshots, write the reduced model (+ interpolation bases)
    parot solve     online solve at one parameter, print value and error bounds
    parot bench     error/time sweeps written as CSV
    parot colorize  colour transfer between PNG images

Exit status: 0 on success, 2 for bad configuration or input, 3 for
numerical failures.
"""

from __future__ import annotations

import argparse
import ast
import csv
import logging
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from parot import colorxfer, estimators as est, hf, io, reduction
from parot.errors import (
    FormatError,
    InfeasibleError,
    LPNumericalError,
    ModelMismatchError,
    ParotError,
    SnapshotError,
)
from parot.family import (
    Alpha,
    MeasureFamily,
    blend,
    gaussian_family,
    load_family_csv,
    random_alpha,
    training_grid,
)

log = logging.getLogger("parot")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ParotError):
    pass


@dataclass
class ExperimentConfig:
    family: str = "gaussian"  # gaussian | csv
    mu_csv: str = ""
    nu_csv: str = ""
    n: int = 100
    resolution: int = 10
    resolutions: list = field(default_factory=lambda: [2, 4, 10, 20])
    backend: str = "lp"  # lp | sinkhorn
    eps: float = 1e-2
    sinkhorn_eps: list = field(default_factory=lambda: [1e-3, 1e-2, 1e-1, 1.0])
    basis: str = "gs"  # gs | ones
    m_eim: int = 10
    m_prime: int = 10
    eim_sizes: list = field(default_factory=lambda: [2, 4, 6, 8, 10, 12, 14, 16, 18, 20])
    test_size: int = 50
    seed: int = 0
    out_dir: str = "out"
    repeats: int = 5
    timing_points: int = 5
    timing: bool = True
    workers: int = 1
    bins: int = 16

    def validate(self) -> "ExperimentConfig":
        if self.family not in ("gaussian", "csv"):
            raise ConfigError(f"family must be 'gaussian' or 'csv', got {self.family!r}")
        if self.family == "csv" and not (self.mu_csv and self.nu_csv):
            raise ConfigError("family=csv needs mu_csv and nu_csv")
        if self.backend not in ("lp", "sinkhorn"):
            raise ConfigError(f"backend must be 'lp' or 'sinkhorn', got {self.backend!r}")
        if self.basis not in reduction.BASIS_MODES:
            raise ConfigError(f"basis must be one of {reduction.BASIS_MODES}")
        for name in ("n", "m_eim", "m_prime", "test_size", "repeats", "timing_points", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.resolution < 2 or any(r < 2 for r in self.resolutions):
            raise ConfigError("resolutions must be >= 2")
        if not 2 <= self.bins <= 256:
            raise ConfigError("bins must be in [2, 256]")
        if self.eps <= 0 or any(e <= 0 for e in self.sinkhorn_eps):
            raise ConfigError("epsilon values must be positive")
        return self


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment, ``[section]`` lines are ignored."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            if value.lower() in ("true", "false"):
                out[key] = value.lower() == "true"
            else:
                out[key] = value.strip("\"'")
    return out


def load_config(args) -> ExperimentConfig:
    values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    known = {f.name: f for f in fields(ExperimentConfig)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig()
    for key, value in values.items():
        default = getattr(cfg, key)
        try:
            if isinstance(default, bool):
                value = bool(value)
            elif isinstance(default, list):
                value = list(value) if isinstance(value, (list, tuple)) else [value]
            else:
                value = type(default)(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
        setattr(cfg, key, value)
    overrides = {
        "seed": args.seed, "out_dir": args.out_dir, "backend": args.backend,
        "eps": args.eps, "bins": args.bins, "resolution": args.resolution,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()


def make_family(cfg: ExperimentConfig) -> MeasureFamily:
    if cfg.family == "gaussian":
        return gaussian_family(cfg.n, cfg.n)
    try:
        return load_family_csv(cfg.mu_csv, cfg.nu_csv)
    except OSError as exc:
        raise ConfigError(f"cannot read family: {exc}") from exc


def make_backend(cfg: ExperimentConfig):
    if cfg.backend == "lp":
        return reduction.LPBackend()
    return reduction.SinkhornBackend(cfg.eps)


def parse_alpha(text: str, kx: int | None = None, ky: int | None = None) -> Alpha:
    """``"0.3,0.7;0.6,0.4"`` -> Alpha; each block must sum to one."""
    try:
        blocks = [[float(v) for v in b.split(",")] for b in text.split(";")]
    except ValueError as exc:
        raise ConfigError(f"malformed alpha {text!r}") from exc
    if len(blocks) != 2:
        raise ConfigError(f"alpha needs two ';'-separated blocks, got {text!r}")
    for b in blocks:
        if min(b) < 0 or abs(sum(b) - 1.0) > 1e-9:
            raise ConfigError(f"alpha block {b} is not on the simplex")
    alpha = Alpha.of(*blocks)
    if kx is not None and (alpha.kx, alpha.ky) != (kx, ky):
        raise ConfigError(f"alpha has blocks ({alpha.kx}, {alpha.ky}), expected ({kx}, {ky})")
    return alpha


def median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v)
                        for v in row])


# -- commands -------------------------------------------------------------------------

def cmd_build(args) -> int:
    cfg = load_config(args)
    family = make_family(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    C = hf.quadratic_cost(family.support_x, family.support_y)
    training = training_grid(family.kx, family.ky, cfg.resolution)
    t0 = time.perf_counter()
    model = reduction.build_offline(family, training, make_backend(cfg), C,
                                    basis=cfg.basis, workers=cfg.workers)
    bases = est.eim_from_model(model, family, C, cfg.m_eim, cfg.m_prime)
    path = Path(args.model) if args.model else out / "model.parot"
    io.save_model(model, path, bases)
    reduction.save_snapshot_csv(model, out / "snapshots.csv")
    print(f"model={path} R={model.R} N={model.N} M={model.M} "
          f"M_eim={bases[0].M} offline_s={time.perf_counter() - t0:.3f}")
    return EXIT_OK


def _load_model(path):
    try:
        return io.load_model(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"model file not found: {path}") from exc


def cmd_solve(args) -> int:
    cfg = load_config(args)
    family = make_family(cfg)
    model, bases = _load_model(args.model or Path(cfg.out_dir) / "model.parot")
    model.check_family(family)
    alpha = parse_alpha(args.alpha, model.kx, model.ky)
    C = hf.quadratic_cost(family.support_x, family.support_y)
    sol = reduction.solve_reduced(model, family, alpha)
    t_online = median_time(lambda: reduction.solve_reduced(model, family, alpha), cfg.repeats)
    pair = reduction.lift_potentials(model, sol.a, sol.b)
    mu, nu = blend(family, alpha)
    report = {
        "I_R": sol.I_R,
        "bound_exact": est.exact_gap_bound(pair, C, mu, nu, sol.I_R),
        "bound_fast": None,
        "bound_continuity": est.continuity_bound(model.training_costs(), alpha, sol.I_R,
                                                 float(np.abs(C).max()), model.kx, model.ky),
        "online_s": t_online,
    }
    side = {b.side: b for b in bases}
    if "c" in side:
        report["bound_fast"] = est.eim_fast_gap(side["c"], pair, C, family, alpha, sol.I_R,
                                                basis_bar=side.get("cbar"))
    if args.with_hf:
        I = hf.solve_lp(C, mu, nu).cost
        report["I_hf"] = I
        report["true_error"] = sol.I_R - I
    for k, v in report.items():
        print(f"{k}={'' if v is None else f'{v:.12g}'}")
    return EXIT_OK


def _test_set(cfg: ExperimentConfig, family: MeasureFamily) -> list[Alpha]:
    rng = np.random.default_rng(cfg.seed)
    return [random_alpha(rng, family.kx, family.ky) for _ in range(cfg.test_size)]


def cmd_bench(args) -> int:
    cfg = load_config(args)
    family = make_family(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    C = hf.quadratic_cost(family.support_x, family.support_y)
    C_inf = float(np.abs(C).max())
    tests = _test_set(cfg, family)
    marginals = [blend(family, a) for a in tests]
    truth = np.array([hf.solve_lp(C, mu, nu).cost for mu, nu in marginals])
    timed = list(range(min(cfg.timing_points, len(tests))))
    t = (lambda fn: median_time(fn, cfg.repeats)) if cfg.timing else (lambda fn: None)
    mean_t = lambda ts: None if any(v is None for v in ts) else float(np.mean(ts))

    pareto = [("hf_lp", "", 0.0, 0.0,
               mean_t([t(lambda i=i: hf.solve_lp(C, *marginals[i])) for i in timed]))]
    decay = []
    models = {}
    for res in sorted(set(cfg.resolutions)):
        model = reduction.build_offline(family, training_grid(family.kx, family.ky, res),
                                        make_backend(cfg), C, basis=cfg.basis, workers=cfg.workers)
        models[res] = model
        vals = np.array([reduction.solve_reduced(model, family, a).I_R for a in tests])
        err = np.abs(vals - truth)
        decay.append((model.R, float(err.mean()), float(err.min()), float(err.max())))
        ts = [t(lambda i=i: reduction.solve_reduced(model, family, tests[i])) for i in timed]
        pareto.append(("reduced", model.R, float(err.mean()), float(err.max()), mean_t(ts)))
    for eps in sorted(cfg.sinkhorn_eps):
        costs = np.array([hf.solve_sinkhorn(C, mu, nu, eps).cost for mu, nu in marginals])
        err = np.abs(costs - truth)
        ts = [t(lambda i=i: hf.solve_sinkhorn(C, *marginals[i], eps)) for i in timed]
        pareto.append(("sinkhorn", eps, float(err.mean()), float(err.max()), mean_t(ts)))

    _write_csv(out / "error_vs_snapshots.csv", ["R", "mean_error", "min_error", "max_error"], decay)
    _write_csv(out / "pareto.csv", ["method", "param", "mean_error", "worst_error", "mean_time"],
               pareto)

    # estimators at the configured resolution
    model = models.get(cfg.resolution) or reduction.build_offline(
        family, training_grid(family.kx, family.ky, cfg.resolution), make_backend(cfg), C,
        basis=cfg.basis)
    basis, basis_bar = est.eim_from_model(model, family, C, cfg.m_eim, cfg.m_prime)
    records, fast_exact = [], []
    sols = [reduction.solve_reduced(model, family, a) for a in tests]
    pairs = [reduction.lift_potentials(model, s.a, s.b) for s in sols]
    for a, (mu, nu), s, pair, I in zip(tests, marginals, sols, pairs, truth):
        exact = est.exact_gap_bound(pair, C, mu, nu, s.I_R)
        fast = est.eim_fast_gap(basis, pair, C, family, a, s.I_R, basis_bar=basis_bar)
        cont = est.continuity_bound(model.training_costs(), a, s.I_R, C_inf, family.kx, family.ky)
        records.append(est.EstimatorRecord(a, s.I_R, exact, fast, cont, float(I)))
    est.save_estimator_csv(records, out / "estimators.csv")

    for m in sorted(set(cfg.eim_sizes)):
        if m > model.R:
            continue
        b, bb = est.eim_from_model(model, family, C, m, m)
        diffs = [abs(est.eim_fast_gap(b, p, C, family, a, s.I_R, basis_bar=bb) - r.bound_exact)
                 for a, s, p, r in zip(tests, sols, pairs, records)]
        fast_exact.append((m, b.M, float(np.mean(diffs)), float(np.max(diffs))))
    _write_csv(out / "eim_gap.csv", ["M_eim_requested", "M_eim", "mean_abs_diff", "max_abs_diff"],
               fast_exact)
    print(f"wrote {out}/error_vs_snapshots.csv pareto.csv estimators.csv eim_gap.csv")
    return EXIT_OK


def cmd_colorize(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        source = colorxfer.read_png(args.source)
        palettes = [colorxfer.read_png(p) for p in args.palettes]
    except OSError as exc:
        raise ConfigError(f"cannot read image: {exc}") from exc
    bins = cfg.bins
    rom = None
    if args.model and Path(args.model).exists():
        rom, _ = io.load_model(args.model)
    if rom is None:
        rom = colorxfer.build_color_model(source, palettes, bins,
                                          resolution=max(cfg.resolution, 2),
                                          backend=colorxfer.ColorSinkhornBackend(cfg.eps))
        io.save_model(rom, Path(args.model) if args.model else out / "color_model.parot")
    if args.sweep:
        if len(palettes) != 2:
            raise ConfigError("--sweep needs exactly two palettes")
        alphas = [[1.0 - t, t] for t in np.linspace(0.0, 1.0, args.sweep)]
    else:
        alphas = [[float(v) for v in (args.alpha or "").split(",") if v]]
        if len(alphas[0]) != len(palettes) or abs(sum(alphas[0]) - 1) > 1e-9 or min(alphas[0]) < 0:
            raise ConfigError("--alpha must give one simplex weight per palette")
    for k, a in enumerate(alphas):
        img = colorxfer.transfer_pipeline(source, palettes, a, bins, rom)
        name = args.output if (args.output and len(alphas) == 1) else out / f"colorized_{k}.png"
        colorxfer.write_png(img, name)
        print(f"alpha_y={','.join(f'{v:.6g}' for v in a)} -> {name}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--backend", choices=["lp", "sinkhorn"])
    common.add_argument("--eps", type=float, help="entropic regularization")
    common.add_argument("--bins", type=int, help="colour bins per channel")
    common.add_argument("--resolution", type=int, help="training lattice points per block axis")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="parot", description="Reduced-basis optimal transport.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[common], help="offline phase")
    p.add_argument("--model", help="output model file (default OUT_DIR/model.parot)")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("solve", parents=[common], help="online solve at one parameter")
    p.add_argument("--model", help="model file (default OUT_DIR/model.parot)")
    p.add_argument("--alpha", required=True, help='e.g. "0.3,0.7;0.6,0.4"')
    p.add_argument("--with-hf", action="store_true", help="also solve the full problem")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", parents=[common], help="error and timing sweeps")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("colorize", parents=[common], help="colour transfer")
    p.add_argument("source")
    p.add_argument("palettes", nargs="+")
    p.add_argument("--alpha", help="palette weights, e.g. 0.5,0.5")
    p.add_argument("--sweep", type=int, help="emit this many images along alpha in [0, 1]")
    p.add_argument("--model", help="reuse (or write) this colour model")
    p.add_argument("--output", help="output PNG for a single alpha")
    p.set_defaults(func=cmd_colorize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, ModelMismatchError, ValueError) as exc:
        print(f"parot: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LPNumericalError, InfeasibleError, SnapshotError, np.linalg.LinAlgError) as exc:
        print(f"parot: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
