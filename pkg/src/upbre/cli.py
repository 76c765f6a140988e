"""``upbre`` command-line front end.

Subcommands
-----------
simulate      render the phantom, draw counts, write measurements and images
reconstruct   TV reconstruction at one gamma
sweep         estimator curves over the gamma grid and the selected gamma
trial         repeated simulated trials against the oracle minimizers
concentration toy-model probability bound and empirical coverage
check         Stein / Poisson identity suites
rerun         repeat a run from its manifest and compare output hashes

Every subcommand writes ``manifest.json`` into the output directory.  The
manifest holds the full config, seeds and arguments, so ``upbre rerun``
regenerates byte-identical CSV and image files.

CSV columns
-----------
sweep_<kind>_eps<eps>.csv : gamma, divergence_term, trace_term, total
selection.csv             : bregman, eps_fd, gamma_star_est, grid_index, grid_gamma, unimodal, oscillation
trials.csv                : trial, data_seed, probe_seed, bregman, eps_fd, gamma_star_est, gamma_star_sq,
                            gamma_star_breg, rel_diff_sq, rel_diff_breg, grid_index, unimodal, n_clamped
aggregate.csv             : bregman, eps_fd, statistic, n, min, q1, median, q3, max
sinogram.csv              : theta, t, value
concentration.csv         : sigma, lipschitz, radius, bound, coverage, coverage_se, n_trials, passed,
                            sample_minimizer_mean, expected_minimizer
minimizers_sigma<s>.csv   : b1, b2, minimizer (sorted by minimizer)
check.csv                 : suite, case, lhs, rhs, abs_diff, rel_diff, stderr, passed

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .bregman import BregmanSpec
from .concentration import (
    ToyModel,
    empirical_coverage,
    expected_minimizer,
    probability_bound,
    sample_average_minimizer,
    sample_minimizers,
)
from .config import DESK_PRESET, RunConfig, config_hash, dump_config, parse_config
from .errors import ConfigError, NumericalError
from .estimator import (
    CachedPipeline,
    EstimatorCurve,
    ProbeVector,
    TomoPipeline,
    g_upbre,
    p_upbre,
    poisson_identity_check,
    poisson_taylor_check,
    stein_identity_check,
)
from .geometry import GridSpec, make_geometry
from .phantom import block_average, load_phantom, render, write_pgm, write_raw
from .physics import (
    ForwardModel,
    MeasurementSet,
    forward,
    log_correct,
    read_measurements,
    simulate_counts,
    uniform_model,
    write_measurements,
)
from .radon import write_sinogram, write_sinogram_csv
from .select import is_unimodal, run_batch, select_gamma, write_aggregate_csv, write_trial_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

# command-line flag -> config key
_FLAG_KEYS = {
    "bregman": "bregman",
    "eps_log": "eps_log",
    "eps_fd": "eps_fd",
    "gamma_grid": "gamma_grid",
    "noise": "noise",
    "sigma2": "sigma2",
    "seed": "data_seed",
    "probe_seed": "probe_seed",
    "trial_seed": "trial_seed",
    "photon_scale": "photon_scale",
    "flux": "flux",
    "n_probes": "n_probes",
    "repeat": "n_trials",
}


# ---------------------------------------------------------------------------
# Run bookkeeping
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Output directory, stage timer and manifest for one subcommand."""

    def __init__(self, command: str, cfg: RunConfig, args: dict, out: Path, threads: int):
        self.command = command
        self.cfg = cfg
        self.args = args
        self.out = out
        self.threads = threads
        self.outputs: list[str] = []
        self.inputs: dict[str, str] = {}
        self.stage_times: dict[str, float] = {}
        self.diagnostics: dict = {}
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {out} is not writable: {exc}") from None
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stage_times[name] = self.stage_times.get(name, 0.0) + time.perf_counter() - t0

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def record_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "args": self.args,
            "config": self.cfg.as_dict(),
            "config_hash": config_hash(self.cfg),
            "seeds": {k: getattr(self.cfg, k) for k in ("data_seed", "probe_seed", "trial_seed")},
            "software_version": __version__,
            "numpy_version": np.__version__,
            "threads": self.threads,
            "stage_times": self.stage_times,
            "inputs": self.inputs,
            "outputs": {name: sha256_file(self.out / name) for name in sorted(set(self.outputs))},
            "diagnostics": self.diagnostics,
        }

    def write_manifest(self) -> Path:
        (self.out / "config.txt").write_text(dump_config(self.cfg))
        p = self.out / "manifest.json"
        p.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return p


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------

def _setup(cfg: RunConfig):
    geometry = make_geometry(cfg.n_angles, cfg.n_offsets)
    return geometry, GridSpec(cfg.fine_n), GridSpec(cfg.coarse_n), uniform_model(geometry, cfg.flux, cfg.dark)


def _measurements(run: Run, cfg: RunConfig, input_path):
    """Measurements from ``input_path`` or freshly simulated from the phantom.

    Returns the measurement set after ``photon_scale`` and the model built
    from its flat and dark fields.
    """
    geometry, fine, _, model = _setup(cfg)
    if input_path:
        run.record_input(input_path)
        mset = read_measurements(input_path)
        if mset.geometry != geometry:
            raise ConfigError(
                f"measurement file has {mset.geometry.n_angles}x{mset.geometry.n_offsets} rays; "
                f"config says {cfg.n_angles}x{cfg.n_offsets}"
            )
    else:
        mset = _simulate(cfg, model, render(load_phantom(cfg.phantom), fine), fine)
    mset = mset.scaled(cfg.photon_scale)
    return mset, ForwardModel(geometry, mset.flat, mset.dark)


def _simulate(cfg: RunConfig, model, x_fine, fine) -> MeasurementSet:
    if cfg.noise == "poisson":
        return simulate_counts(model, x_fine, cfg.data_seed, fine)
    mean = forward(model, x_fine, fine)
    rng = np.random.default_rng(cfg.data_seed)
    noisy = mean + np.sqrt(cfg.sigma2) * rng.standard_normal(mean.size)
    return MeasurementSet(noisy, model.flat, model.dark, model.geometry)


def _eps_tag(eps: float) -> str:
    return f"{eps:g}"


def _write_images(run: Run, stem: str, x: np.ndarray) -> None:
    write_raw(run.path(stem + ".raw"), x)
    write_pgm(run.path(stem + ".pgm"), x)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(run: Run, args: dict) -> None:
    cfg = run.cfg
    _, fine, _, model = _setup(cfg)
    with run.stage("render"):
        x_fine = render(load_phantom(cfg.phantom), fine)
        x_ref = block_average(x_fine, fine, cfg.fine_n // cfg.coarse_n)
    with run.stage("simulate"):
        mset = _simulate(cfg, model, x_fine, fine)
    with run.stage("write"):
        write_measurements(run.path("measurements.bin"), mset)
        sino = log_correct(mset.scaled(cfg.photon_scale), cfg.clamp_floor)
        write_sinogram(run.path("sinogram.bin"), sino)
        write_sinogram_csv(run.path("sinogram.csv"), sino)
        _write_images(run, "phantom_fine", x_fine)
        _write_images(run, "reference", x_ref)
    run.diagnostics["n_clamped"] = sino.n_clamped


def cmd_reconstruct(run: Run, args: dict) -> None:
    cfg = run.cfg
    gamma = args["gamma"]
    if gamma is None or gamma < 0:
        raise ConfigError(f"gamma must be a nonnegative number, got {gamma}")
    with run.stage("measurements"):
        mset, model = _measurements(run, cfg, args.get("input"))
    pipe = TomoPipeline(model, GridSpec(cfg.coarse_n), cfg.fista, cfg.clamp_floor)
    with run.stage("reconstruct"):
        x = pipe.solve(mset.counts, gamma)
    with run.stage("write"):
        _write_images(run, f"recon_gamma{gamma:g}", x)
    run.diagnostics["n_clamped"] = pipe.sinogram(mset.counts).n_clamped


def cmd_sweep(run: Run, args: dict) -> None:
    cfg = run.cfg
    with run.stage("measurements"):
        mset, model = _measurements(run, cfg, args.get("input"))
    b = mset.counts
    pipe = CachedPipeline(TomoPipeline(model, GridSpec(cfg.coarse_n), cfg.fista, cfg.clamp_floor))
    probes = ProbeVector.draw_many(b.size, cfg.probe_seed, cfg.n_probes)
    grid = cfg.grid
    rows = []
    for kind in cfg.kinds:
        spec = BregmanSpec.parse(kind, cfg.eps_log)
        for eps in cfg.eps_fds:
            evals: dict = {}

            def objective(g, spec=spec, eps=eps, evals=evals):
                if g not in evals:
                    if cfg.noise == "poisson":
                        evals[g] = p_upbre(b, g, pipe, spec, probes, eps)
                    else:
                        evals[g] = g_upbre(b, g, pipe, spec, cfg.sigma2, probes, eps)
                return evals[g].total

            with run.stage(f"sweep_{kind}_eps{_eps_tag(eps)}"):
                sel = select_gamma(objective, grid, cfg.refine, max_evals=cfg.golden_evals)
            curve = EstimatorCurve(spec, eps, cfg.probe_seed, [evals[g] for g in sorted(evals)])
            curve.to_csv(run.path(f"sweep_{kind}_eps{_eps_tag(eps)}.csv"))
            grid_curve = EstimatorCurve(spec, eps, cfg.probe_seed, [evals[g] for g in grid.values])
            rows.append([kind, repr(eps), repr(sel.gamma_star_est), sel.grid_index,
                         repr(grid.values[sel.grid_index]), int(is_unimodal(sel.grid_values)),
                         repr(grid_curve.oscillation())])
    with open(run.path("selection.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bregman", "eps_fd", "gamma_star_est", "grid_index", "grid_gamma", "unimodal", "oscillation"])
        w.writerows(rows)
    run.diagnostics["n_clamped"] = pipe.pipeline.sinogram(b).n_clamped
    run.diagnostics["n_solves"] = pipe.n_solves
    run.diagnostics["probe_seed"] = cfg.probe_seed


def cmd_trial(run: Run, args: dict) -> None:
    cfg = run.cfg
    if cfg.noise != "poisson":
        raise ConfigError("noise: trials simulate Poisson counts only")
    refine_eps = tuple(args["refine_eps"]) if args.get("refine_eps") else None
    tcfg = cfg.trial_config(refine_eps=refine_eps)
    with run.stage("trials"):
        results = run_batch(tcfg, cfg.n_trials, cfg.trial_seed, run.threads)
    write_trial_csv(run.path("trials.csv"), results)
    write_aggregate_csv(run.path("aggregate.csv"), results)
    run.diagnostics["n_clamped"] = [r.n_clamped for r in results]
    run.diagnostics["trial_seeds"] = [[r.data_seed, r.probe_seed] for r in results]
    run.diagnostics["n_solves"] = [r.n_solves for r in results]


def cmd_concentration(run: Run, args: dict) -> None:
    cfg = run.cfg
    sigmas = args.get("sigma") or [0.1, 0.2, 0.3]
    n_samples, n_trials = args["samples"], args["coverage_trials"]
    if n_samples < 1 or n_trials < 1:
        raise ConfigError("samples and coverage-trials must be >= 1")
    rows = []
    for k, sigma in enumerate(sigmas):
        try:
            model = ToyModel(float(sigma))
        except ValueError as exc:
            raise ConfigError(f"sigma: {exc}") from None
        seed = cfg.data_seed + k
        with run.stage(f"sigma{sigma:g}"):
            sample = sample_minimizers(model, n_samples, seed)
            cov = empirical_coverage(model, None, n_trials, seed + 10_000)
        with open(run.path(f"minimizers_sigma{sigma:g}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["b1", "b2", "minimizer"])
            order = np.argsort(sample.values, kind="stable")
            for (b1, b2), v in zip(sample.b[order], sample.values[order]):
                w.writerow([repr(float(b1)), repr(float(b2)), repr(float(v))])
        rows.append([repr(sigma), repr(model.lipschitz), repr(model.radius), f"{probability_bound(model):.6f}",
                     repr(cov.coverage), repr(cov.se), cov.n_trials, int(cov.passed),
                     repr(sample_average_minimizer(sample.b)), repr(expected_minimizer(model))])
    with open(run.path("concentration.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma", "lipschitz", "radius", "bound", "coverage", "coverage_se", "n_trials", "passed",
                    "sample_minimizer_mean", "expected_minimizer"])
        w.writerows(rows)


# analytic fields for the identity suites; each maps (N, m) -> (N, m)
STEIN_CASES = {
    "sin": (np.sin, np.cos),
    "cubic": (lambda b: b ** 3, lambda b: 3.0 * b ** 2),
    "gauss_bump": (
        lambda b: b * np.exp(-0.5 * np.sum(b * b, axis=1, keepdims=True)),
        lambda b: (1.0 - b * b) * np.exp(-0.5 * np.sum(b * b, axis=1, keepdims=True)),
    ),
}
STEIN_BETA = np.array([0.5, -1.0, 2.0, 0.1])

POISSON_CASES = {
    "reciprocal": lambda b: 1.0 / (1.0 + b),
    "coupled": lambda b: np.sin(b) + 0.1 * b[:, ::-1] ** 2,
    "sqrt": lambda b: np.sqrt(b + 1.0),
}
TAYLOR_CASES = {
    "sqrt": (lambda b: np.sqrt(b + 1.0), lambda b: 0.5 / np.sqrt(b + 1.0)),
    "log": (lambda b: np.log(b + 2.0), lambda b: 1.0 / (b + 2.0)),
}


def identity_suites(n_samples: int = 1_000_000, seed: int = 0, sigma: float = 0.3):
    """``(suite, case, IdentityReport)`` for the Stein, Poisson and Taylor checks."""
    out = []
    for name, (h, dh) in STEIN_CASES.items():
        out.append(("stein", name, stein_identity_check(h, dh, STEIN_BETA, sigma ** 2, n_samples, seed)))
    for beta in ([3.0], [2.5, 5.0]):
        for name, h in POISSON_CASES.items():
            out.append(("poisson", f"{name}_m{len(beta)}", poisson_identity_check(h, beta)))
    for name, (h, dh) in TAYLOR_CASES.items():
        out.append(("taylor", name, poisson_taylor_check(h, dh, [50.0, 80.0])))
    return out


def cmd_check(run: Run, args: dict) -> None:
    with run.stage("identities"):
        reports = identity_suites(args["samples"], run.cfg.data_seed, args["sigma"] or 0.3)
    with open(run.path("check.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["suite", "case", "lhs", "rhs", "abs_diff", "rel_diff", "stderr", "passed"])
        for suite, case, r in reports:
            w.writerow([suite, case, repr(r.lhs), repr(r.rhs), repr(r.abs_diff), repr(r.rel_diff),
                        repr(r.diff_se), int(r.passed)])
    failed = [f"{s}/{c}" for s, c, r in reports if not r.passed]
    for s, c, r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {s}/{c}: lhs={r.lhs:.10g} rhs={r.rhs:.10g}")
    run.diagnostics["failed"] = failed
    if failed:
        raise NumericalError("identity checks failed: " + ", ".join(failed))


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "trial": cmd_trial,
    "concentration": cmd_concentration,
    "check": cmd_check,
}


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

def _threads(value) -> int:
    if value is None:
        value = os.environ.get("UPBRE_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"threads must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"threads must be >= 1, got {n}")
    return n


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--preset", choices=["full", "desk"], default="full",
                   help="base sizes before the config file is applied (default: full)")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    g.add_argument("--out", help="output directory (config key output_dir)")
    g.add_argument("--threads", help="worker processes (fallback: UPBRE_THREADS)")
    g.add_argument("--bregman", help="comma list of ms, kl, is")
    g.add_argument("--eps-log", type=float)
    g.add_argument("--eps-fd", help="finite-difference step(s), comma separated")
    g.add_argument("--gamma-grid", help="log:LO:HI:N or lin:LO:HI:N")
    g.add_argument("--noise", choices=["poisson", "gaussian"])
    g.add_argument("--sigma2", type=float, help="Gaussian noise variance")
    g.add_argument("--seed", type=int, help="data seed")
    g.add_argument("--probe-seed", type=int)
    g.add_argument("--trial-seed", type=int)
    g.add_argument("--photon-scale", type=float)
    g.add_argument("--flux", type=float)
    g.add_argument("--n-probes", type=int)
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="upbre", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--version", action="version", version=f"upbre {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate counts from the phantom")
    _common(p)
    p = sub.add_parser("reconstruct", help="TV reconstruction at one gamma")
    _common(p)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--input", help="measurements.bin from simulate (default: simulate in memory)")
    p = sub.add_parser("sweep", help="estimator curves and gamma selection")
    _common(p)
    p.add_argument("--input", help="measurements.bin from simulate (default: simulate in memory)")
    p = sub.add_parser("trial", help="repeated simulated trials")
    _common(p)
    p.add_argument("--repeat", type=int, help="number of trials (config key n_trials)")
    p.add_argument("--refine-eps", type=float, nargs="+", help="refine only these eps_fd values")
    p = sub.add_parser("concentration", help="toy-model concentration bound")
    _common(p)
    p.add_argument("--sigma", type=float, nargs="+", help="noise levels (default 0.1 0.2 0.3)")
    p.add_argument("--samples", type=int, default=200, help="minimizer samples per sigma")
    p.add_argument("--coverage-trials", type=int, default=10_000)
    p = sub.add_parser("check", help="Stein and Poisson identity suites")
    _common(p)
    p.add_argument("--samples", type=int, default=1_000_000, help="Monte-Carlo samples for the Stein suite")
    p.add_argument("--sigma", type=float, default=0.3)
    p = sub.add_parser("rerun", help="repeat a run from manifest.json and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default: <manifest dir>/rerun)")
    p.add_argument("--threads")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


_CONFIG_FLAGS = set(_FLAG_KEYS) | {"config", "preset", "set", "out", "threads", "verbose", "command"}


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    base = RunConfig().replace(**DESK_PRESET) if ns.preset == "desk" else RunConfig()
    overrides = {}
    for item in ns.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for flag, key in _FLAG_KEYS.items():
        val = getattr(ns, flag, None)
        if val is not None:
            overrides[key] = val
    if ns.out is not None:
        overrides["output_dir"] = ns.out
    return parse_config(ns.config, base, **overrides)


def execute(command: str, cfg: RunConfig, args: dict, out: Path, threads: int = 1) -> Run:
    run = Run(command, cfg, args, out, threads)
    t0 = time.perf_counter()
    try:
        COMMANDS[command](run, args)
    finally:
        run.stage_times["total"] = time.perf_counter() - t0
        run.write_manifest()
    return run


def rerun(manifest_path, out=None, threads: int = 1) -> tuple[Run, list[str]]:
    """Repeat a recorded run; returns the new run and the names of outputs
    whose hashes differ from the manifest."""
    mpath = Path(manifest_path)
    try:
        man = json.loads(mpath.read_text())
        cfg = RunConfig(**man["config"]).validate()
        command, args = man["command"], man["args"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read manifest {mpath}: {exc}") from None
    if command not in COMMANDS:
        raise ConfigError(f"manifest names unknown command {command!r}")
    out = Path(out) if out else mpath.parent / "rerun"
    run = execute(command, cfg, args, out, threads)
    new = run.manifest()["outputs"]
    old = man.get("outputs", {})
    mismatched = sorted(k for k in set(old) | set(new) if old.get(k) != new.get(k))
    return run, mismatched


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        threads = _threads(ns.threads)
        if ns.command == "rerun":
            run, mismatched = rerun(ns.manifest, ns.out, threads)
            if mismatched:
                print("outputs differ from manifest: " + ", ".join(mismatched), file=sys.stderr)
                return EXIT_NUMERICAL
            print(f"reproduced {len(run.outputs)} outputs in {run.out}")
            return EXIT_OK
        cfg = config_from_args(ns)
        args = {k: v for k, v in vars(ns).items() if k not in _CONFIG_FLAGS}
        run = execute(ns.command, cfg, args, Path(cfg.output_dir), threads)
        print(f"wrote {len(set(run.outputs))} outputs and manifest.json to {run.out}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # invalid values that slipped past config validation (e.g. a phantom CSV)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
