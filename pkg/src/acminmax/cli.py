"""Command line driver for the experiments.

Usage::

    acminmax EXPERIMENT --config run.ini [--out DIR] [--seed N] [--threads N] [--resume]

The configuration is an INI file with the sections ``[run]``, ``[manifold]``,
``[potential]``, ``[experiment]`` and ``[solver]``; see the README for the
keys.  Results go to ``DIR/results.csv`` (deterministic), ``DIR/timing.csv``
(wall times), ``DIR/summary.json`` and experiment specific files.  Exit status
is 0 on success, 2 for configuration errors and 3 for numerical failures (the
results computed so far are still written).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import FlowParams
from .energy import ScalarField
from .errors import AllenCahnError, ConfigError, NumericalError
from .fieldio import save_field
from .interface import export_segments, extract_interface
from .manifold import SPHERE2, TORUS1, TORUS2, build_manifold, laplace_eigenvalues
from .minmax import (MountainPassControls, OptControls, cheeger_threshold, gamma_energy,
                     least_positive_energy, mountain_pass, multiparameter_sweep,
                     trivial_level_threshold)
from .potential import QUARTIC, TABULATED, Potential, heteroclinic, load_potential_csv, \
    sigma_constant, transition_energy
from .spectral import morse_index, morse_index_field
from .sweepout import SphereLinear, TorusBendCancel

log = logging.getLogger(__name__)

EXPERIMENTS = ("least-energy", "mountain-pass", "spectrum", "cheeger-gate", "sweepout-bound",
               "index-table", "interface", "profile1d")
COLUMNS = ("manifold", "epsilon", "p", "level", "certified", "index", "classification",
           "residual")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

# section -> key -> (parser, default); a default of REQUIRED must be given
REQUIRED = object()


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text):
    return [int(t) for t in text.replace(",", " ").split()]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA = {
    "run": {"experiment": (str, None), "seed": (int, 0), "threads": (int, 1)},
    "manifold": {"kind": (str, REQUIRED), "size": (_floats, [1.0]),
                 "resolution": (_ints, REQUIRED)},
    "potential": {"kind": (str, QUARTIC), "scale": (float, 1.0), "table": (str, None),
                  "validate": (_bool, True)},
    "experiment": {"epsilons": (_floats, REQUIRED), "p_values": (_ints, []),
                   "seeds": (int, 20), "samples": (int, 256), "local_starts": (int, 4),
                   "local_maxfev": (int, 200), "profile_samples": (int, 201)},
    "solver": {"images": (int, 24), "dt": (float, 2.0), "stabilization": (float, 2.0),
               "max_iter": (int, 4000), "newton_tol": (float, 1e-10),
               "flow_dt": (float, 4.0), "flow_max_steps": (int, 4000),
               "residual_tol": (float, 1e-8)},
}


@dataclass
class RunConfig:
    """Validated run configuration."""

    experiment: str
    manifold_kind: str
    manifold_size: list
    resolution: list
    potential: Potential
    epsilons: list
    p_values: list = field(default_factory=list)
    seeds: int = 20
    seed: int = 0
    threads: int = 1
    opt: OptControls = OptControls()
    mp: MountainPassControls = MountainPassControls()
    flow_dt: float = 4.0
    flow_max_steps: int = 4000
    residual_tol: float = 1e-8
    profile_samples: int = 201
    out: Path = Path("results")

    def manifold(self):
        return build_manifold(self.manifold_kind, self.resolution, self.manifold_size)

    def flow(self, eps):
        return FlowParams(dt=self.flow_dt * eps ** 2, max_steps=self.flow_max_steps,
                          residual_tol=self.residual_tol,
                          stabilization=self.potential.max_abs_w2)


def parse_config(text: str, experiment: str, base_dir=".", overrides=None) -> RunConfig:
    """Parse and validate an INI configuration; all problems are reported at once."""
    problems = []
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"unparseable config: {exc}"]) from None
    values = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            problems.append(f"unknown section [{sec}]")
    for sec, keys in SCHEMA.items():
        given = cp[sec] if cp.has_section(sec) else {}
        for key in given:
            if key not in keys:
                problems.append(f"[{sec}] unknown key {key!r}")
        for key, (conv, default) in keys.items():
            dest = f"{sec}_{key}" if key == "kind" else key
            if key in given:
                try:
                    values[dest] = conv(given[key])
                except ValueError as exc:
                    problems.append(f"[{sec}] {key}: {exc}")
            elif default is REQUIRED:
                problems.append(f"[{sec}] {key} is required")
            else:
                values[dest] = default
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val

    if experiment not in EXPERIMENTS:
        problems.append(f"unknown experiment {experiment!r}")
    if values.get("experiment") not in (None, experiment):
        problems.append(f"config is for experiment {values['experiment']!r}, not {experiment!r}")
    eps = values.get("epsilons")
    if eps is not None:
        if not eps:
            problems.append("[experiment] epsilons is empty")
        if any(not e > 0 for e in eps):
            problems.append("[experiment] epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            problems.append("[experiment] epsilons must be strictly decreasing")
    kind = values.get("manifold_kind")
    if kind is not None and kind not in (TORUS1, TORUS2, SPHERE2):
        problems.append(f"[manifold] unknown kind {kind!r}")
    res = values.get("resolution")
    if res is not None and (not res or any(r < 16 for r in res)):
        problems.append("[manifold] resolution must be at least 16")
    if any(s <= 0 for s in values.get("size", [1.0])):
        problems.append("[manifold] size must be positive")
    for key in ("seeds", "samples", "threads", "images", "max_iter", "flow_max_steps",
                "profile_samples"):
        if key in values and values[key] < 1:
            problems.append(f"{key} must be at least 1")
    for key in ("dt", "flow_dt", "newton_tol", "residual_tol", "scale"):
        if key in values and not values[key] > 0:
            problems.append(f"{key} must be positive")
    if values.get("local_starts", 0) < 0 or values.get("stabilization", 0) < 0:
        problems.append("local_starts and stabilization must be non-negative")
    pvals = values.get("p_values", [])
    if experiment in ("spectrum", "sweepout-bound"):
        if not pvals:
            problems.append("[experiment] p_values must be non-empty for this experiment")
        if any(q < 1 for q in pvals):
            problems.append("[experiment] p_values must be positive")
        if kind == TORUS1:
            problems.append("no sweepout family on torus1")
        if kind == SPHERE2 and any(q > 3 for q in pvals):
            problems.append("the sphere family has at most 3 parameters")

    potential = None
    pkind = values.get("potential_kind")
    try:
        if pkind == TABULATED:
            if not values.get("table"):
                problems.append("[potential] table is required for user-tabulated")
            else:
                path = Path(values["table"])
                if not path.is_absolute():
                    path = Path(base_dir) / path
                potential = load_potential_csv(path, validate=values.get("validate", True))
        elif pkind == QUARTIC:
            potential = Potential.quartic(values.get("scale", 1.0))
        else:
            problems.append(f"[potential] unknown kind {pkind!r}")
    except (AllenCahnError, OSError) as exc:
        problems.append(f"[potential] {exc}")
    if potential is not None and experiment in ("spectrum", "index-table") \
            and not potential.is_even:
        problems.append(f"the {experiment} experiment requires an even potential")
    if problems:
        raise ConfigError(problems)
    return RunConfig(
        experiment=experiment, manifold_kind=kind, manifold_size=values["size"],
        resolution=res, potential=potential, epsilons=eps, p_values=sorted(pvals),
        seeds=values["seeds"], seed=values["seed"], threads=values["threads"],
        opt=OptControls(values["samples"], values["local_starts"], values["local_maxfev"],
                        values["seed"]),
        mp=MountainPassControls(images=values["images"], dt=values["dt"],
                                stabilization=values["stabilization"],
                                max_iter=values["max_iter"], newton_tol=values["newton_tol"],
                                seed=values["seed"]),
        flow_dt=values["flow_dt"], flow_max_steps=values["flow_max_steps"],
        residual_tol=values["residual_tol"], profile_samples=values["profile_samples"])


def load_config(path, experiment, overrides=None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text, experiment, path.parent, overrides)


# -- results ----------------------------------------------------------------------

def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def format_rows(rows) -> str:
    """Results CSV with deterministic column order and row order."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(COLUMNS)
    for r in sorted(rows, key=lambda r: (r["manifold"], -r["epsilon"], r["p"] or 0)):
        wr.writerow([_fmt(r.get(c)) for c in COLUMNS])
    return buf.getvalue()


def emit_table(rows, out_dir, stem="levels"):
    """Write ``results.csv`` and per-epsilon ``.dat`` files for slope fits.

    Returns a dict ``eps -> fitted log-log slope`` (for at least two ``p``).
    """
    if not rows:
        raise AllenCahnError("no results to emit")
    out_dir = Path(out_dir)
    (out_dir / "results.csv").write_text(format_rows(rows))
    slopes = {}
    by_eps = {}
    for r in rows:
        if r.get("p") and r.get("level") is not None:
            by_eps.setdefault(r["epsilon"], []).append((r["p"], r["level"]))
    for eps, pts in sorted(by_eps.items(), reverse=True):
        pts.sort()
        tag = f"{stem}_eps{eps:g}"
        (out_dir / f"{tag}.dat").write_text("".join(f"{q} {_fmt(v)}\n" for q, v in pts))
        (out_dir / f"{tag}_log.dat").write_text(
            "".join(f"{_fmt(math.log(q))} {_fmt(math.log(v))}\n" for q, v in pts if v > 0))
        if len(pts) >= 2:
            x = np.log([q for q, _ in pts])
            y = np.log([v for _, v in pts])
            slopes[eps] = float(np.polyfit(x, y, 1)[0])
    return slopes


class TaskStore:
    """Per-task JSON records so an interrupted run can be resumed."""

    def __init__(self, out_dir, resume):
        self.dir = Path(out_dir) / "tasks"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.resume = resume
        self.timing = []

    def run(self, key, fn):
        path = self.dir / f"{key}.json"
        if self.resume and path.exists():
            return json.loads(path.read_text())
        t0 = time.perf_counter()
        record = fn()
        self.timing.append((key, time.perf_counter() - t0))
        path.write_text(json.dumps(record, sort_keys=True))
        return record


def _row(cfg, eps, p=None, level=None, certified=False, index=None, classification="",
         residual=None, **extra):
    row = {"manifold": cfg.manifold_kind, "epsilon": float(eps), "p": p,
           "level": None if level is None else float(level), "certified": bool(certified),
           "index": index, "classification": classification,
           "residual": None if residual is None else float(residual)}
    row["extra"] = extra
    return row


def _index_of(cp, pot):
    if cp.residual > 1e-8:
        return None
    return morse_index(cp, pot).negatives


# -- experiments -------------------------------------------------------------------

def _exp_profile1d(cfg, store, m, out):
    pot = cfg.potential
    rows = []
    for eps in cfg.epsilons:
        def task(eps=eps):
            prof = heteroclinic(pot, eps)
            t = np.linspace(-prof.half_width, prof.half_width, cfg.profile_samples)
            psi = prof(t)
            res = np.max(np.abs(-eps * prof.second_derivative(t) + pot.dW(psi) / eps))
            with open(out / f"profile_eps{eps:g}.csv", "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(("t", "psi"))
                wr.writerows((_fmt(a), _fmt(b)) for a, b in zip(t, psi))
            return _row(cfg, eps, level=transition_energy(pot, eps),
                        classification="heteroclinic", residual=res)
        rows.append(store.run(f"profile1d_eps{eps:g}", task))
    return rows


def _continuation(cfg, store, m, out, with_interface=False):
    pot = cfg.potential
    rows, path = [], None
    for eps in cfg.epsilons:
        state = {}

        def task(eps=eps):
            rep = mountain_pass(m, pot, eps, path, cfg.mp)
            state["path"] = rep.path
            cp = rep.critical_point
            save_field(out / "fields" / f"mountain-pass_eps{eps:g}.bin", cp.field, eps, pot)
            extra = {}
            if with_interface:
                itf = extract_interface(cp.field, pot, eps)
                export_segments(itf, out / f"interface_eps{eps:g}.csv")
                extra = {"length": itf.length, "multiplicity": itf.multiplicity,
                         "components": len(itf.components)}
            return _row(cfg, eps, 1, rep.level, False, _index_of(cp, pot), cp.classification,
                        cp.residual, **extra)
        rows.append(store.run(f"{cfg.experiment}_eps{eps:g}", task))
        # warm start only when the previous step was computed in this run
        path = state.get("path")
    return rows


def _exp_least_energy(cfg, store, m, out):
    pot = cfg.potential

    def one(i, eps):
        def task():
            cp = least_positive_energy(m, pot, eps, cfg.seeds, cfg.flow(eps),
                                       rng_seed=_task_seed(cfg.seed, i), mp_controls=cfg.mp)
            save_field(out / "fields" / f"least-energy_eps{eps:g}.bin", cp.field, eps, pot)
            return _row(cfg, eps, 1, cp.energy, False, _index_of(cp, pot), cp.classification,
                        cp.residual)
        return store.run(f"least-energy_eps{eps:g}", task)
    return _parallel(cfg, one)


def _exp_cheeger_gate(cfg, store, m, out):
    pot = cfg.potential
    eps0 = cheeger_threshold(m, pot)

    def one(i, eps):
        def task():
            cp = least_positive_energy(m, pot, eps, cfg.seeds, cfg.flow(eps),
                                       rng_seed=_task_seed(cfg.seed, i), mp_controls=cfg.mp)
            status = "nonconstant" if cp.classification == "nonconstant" else "constants-only"
            return _row(cfg, eps, 1, cp.energy, False, None, cp.classification, cp.residual,
                        status=status, above_threshold=bool(eps > eps0))
        return store.run(f"cheeger-gate_eps{eps:g}", task)
    return _parallel(cfg, one)


def _exp_index_table(cfg, store, m, out):
    pot = cfg.potential

    def one(i, eps):
        def task():
            u = ScalarField.constant(m, pot.gamma)
            rep = morse_index_field(u, pot, eps)
            thr = trivial_level_threshold(m, pot, eps)
            return _row(cfg, eps, thr, gamma_energy(m, pot, eps), False, rep.negatives,
                        "gamma-constant", 0.0, analytic_index=analytic_constant_index(m, pot, eps),
                        near_zero=rep.near_zero)
        return store.run(f"index-table_eps{eps:g}", task)
    return _parallel(cfg, one)


def analytic_constant_index(m, pot, eps):
    """Number of Laplace eigenvalues with ``eps lambda + W''(gamma)/eps < 0``."""
    count = 16
    while True:
        lam = laplace_eigenvalues(m, count)
        neg = int(np.count_nonzero(eps * lam + float(pot.d2W(pot.gamma)) / eps < 0))
        if neg < count:
            return neg
        count *= 2


def _family(cfg, m):
    return SphereLinear(m) if m.kind == SPHERE2 else TorusBendCancel(m)


def _multiparameter(cfg, store, m, out):
    pot = cfg.potential

    def one(i, eps):
        def task():
            reps = multiparameter_sweep(m, pot, eps, cfg.p_values, _family(cfg, m), cfg.opt)
            return [_row(cfg, eps, r.p, r.level, r.certified, None, "family-max", None,
                         family_max=r.family_max, certified_bound=r.certified_bound,
                         argmax=[float(a) for a in r.argmax])
                    for r in reps]
        return store.run(f"{cfg.experiment}_eps{eps:g}", task)
    return [r for rows in _parallel(cfg, one) for r in rows]


def _task_seed(seed, i):
    # independent deterministic stream per task
    return int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1)[0])


def _parallel(cfg, one):
    items = list(enumerate(cfg.epsilons))
    if cfg.threads == 1:
        return [one(i, e) for i, e in items]
    with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
        return list(ex.map(lambda ie: one(*ie), items))


RUNNERS = {
    "profile1d": _exp_profile1d,
    "mountain-pass": _continuation,
    "interface": lambda cfg, store, m, out: _continuation(cfg, store, m, out, True),
    "least-energy": _exp_least_energy,
    "cheeger-gate": _exp_cheeger_gate,
    "index-table": _exp_index_table,
    "spectrum": _multiparameter,
    "sweepout-bound": _multiparameter,
}


def _summary(cfg, m, rows, slopes):
    pot = cfg.potential
    sigma = sigma_constant(pot)
    summary = {"experiment": cfg.experiment, "seed": cfg.seed, "sigma": sigma,
               "manifold": {"kind": m.kind, "size": list(m.size), "resolution": list(m.shape)}}
    try:
        summary["eps0"] = cheeger_threshold(m, pot)
    except AllenCahnError:
        summary["eps0"] = None
    if pot.is_even:
        summary["trivial_thresholds"] = {f"{e:g}": trivial_level_threshold(m, pot, e)
                                         for e in cfg.epsilons}
    summary["levels"] = [{"epsilon": r["epsilon"], "p": r["p"], "level": r["level"],
                          **({"l_p": r["level"] / (2 * sigma)}
                             if cfg.experiment == "spectrum" else {}),
                          **r.get("extra", {})} for r in rows]
    if slopes:
        summary["slopes"] = {f"{e:g}": s for e, s in slopes.items()}
    return summary


def run(cfg: RunConfig, resume=False) -> int:
    """Execute ``cfg`` and write the artifacts; returns the exit status."""
    out = Path(cfg.out)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    m = cfg.manifold()
    store = TaskStore(out, resume)
    status, rows = EXIT_OK, []
    try:
        rows = RUNNERS[cfg.experiment](cfg, store, m, out)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        status = EXIT_NUMERICAL
        # partial results: whatever tasks completed
        rows = []
        for f in sorted(store.dir.glob("*.json")):
            rec = json.loads(f.read_text())
            rows.extend(rec if isinstance(rec, list) else [rec])
    if rows:
        slopes = emit_table(rows, out) if cfg.experiment in ("spectrum", "sweepout-bound") \
            else None
        if slopes is None:
            (out / "results.csv").write_text(format_rows(rows))
        (out / "summary.json").write_text(
            json.dumps(_summary(cfg, m, rows, slopes), indent=2, sort_keys=True) + "\n")
    with open(out / "timing.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("task", "wall_time_s"))
        wr.writerows((k, f"{t:.3f}") for k, t in store.timing)
    return status


def build_parser():
    ap = argparse.ArgumentParser(prog="acminmax", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", required=True, type=Path)
        sp_.add_argument("--out", type=Path, default=Path("results"))
        sp_.add_argument("--seed", type=int)
        sp_.add_argument("--threads", type=int)
        sp_.add_argument("--resume", action="store_true")
        sp_.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.experiment,
                          {"seed": args.seed, "threads": args.threads})
    except ConfigError as exc:
        for prob in exc.problems:
            print(f"config error: {prob}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.out = args.out
    try:
        return run(cfg, resume=args.resume)
    except AllenCahnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
