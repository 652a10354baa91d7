"""Batch command line: ``merodyn <command> [options]``.

Configuration is a flat ``key = value`` file (``--config``) overridden by
command-line flags and ``--set key=value``.  Every run writes JSON-lines
records to stdout (and ``records.jsonl`` plus ``manifest.json`` under
``--out``).  Exit status: 0 success, 1 failed self-test, 2 configuration
error, 3 numerical failure (the record names the error class).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

import numpy as np

from . import __version__
from .errors import ConfigError, DynamicsError, NoSignChange
from .family import HYPERBOLIC, SUB_EXPANDING, MapSpec, classify_regime

COMMANDS = ("classify", "pressure", "dimension", "poincare", "measure", "conformality",
            "criterion", "martens", "lyapunov", "raster", "sweep", "selftest")

# command-line flag -> config key; each flag takes one string value
FLAGS = {
    "--family": "family", "--lambda": "lambda", "--t": "t", "--depth": "depth", "--res": "res",
    "--seed": "seed", "--workers": "workers", "--s": "s", "--h-test": "h_test",
    "--cells": "cells", "--rho": "rho", "--h": "h", "--degp": "degp", "--orbits": "orbits",
    "--length": "length", "--method": "method", "--bins": "bins", "--task": "task",
    "--grid": "grid", "--n-max": "n_max", "--width": "width", "--height": "height",
    "--max-iter": "max_iter",
}

DEFAULTS = {
    "family": "tangent", "lambda_re": "0.5", "lambda_im": "0", "seed": "0", "workers": "1",
    "depth": "8", "res": "0.02", "rel_tol": "1e-6", "t": "1.0", "s": "2.05", "depth_max": "8",
    "h_test": "2.0", "cells": "20", "cell_radius": "0.05", "n_max": "12",
    "t_grid": "0.6,0.8,1.0,1.2,1.4,1.6,1.8,1.91,2.0", "orbits": "200", "length": "100",
    "jitter": "0.01", "method": "pressure", "bins": "4000", "bisect_tol": "0.01",
    "width": "400", "height": "300", "region": "-4,4,-3,3", "max_iter": "200",
    "julia_depth": "12", "min_len": "1e-7", "task": "classify",
    "A_re": "1", "A_im": "1", "A_r": "0.05", "A0_re": "-0.8", "A0_im": "0.5", "A0_r": "0.05",
}


# ------------------------------------------------------------ configuration
def read_config(path: str) -> dict:
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for no, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{no}: expected key = value")
                k, v = (x.strip() for x in line.split("=", 1))
                out[k] = v
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return out


def parse_complex(text: str) -> complex:
    """'0+3.14159265i', '2.5', '-1j', '0+pi i' ... as a Python complex."""
    s = text.strip().replace("pi", repr(math.pi)).replace(" ", "").replace("i", "j")
    try:
        return complex(s)
    except ValueError:
        raise ConfigError(f"not a complex number: {text!r}") from None


class Config:
    def __init__(self, values: dict):
        self.values = dict(values)
        if "lambda" in self.values:
            lam = parse_complex(self.values.pop("lambda"))
            self.values["lambda_re"], self.values["lambda_im"] = repr(lam.real), repr(lam.imag)

    def get(self, key: str) -> str:
        if key in self.values:
            return self.values[key]
        if key in DEFAULTS:
            return DEFAULTS[key]
        raise ConfigError(f"missing config key {key!r}")

    def float(self, key: str) -> float:
        try:
            return float(self.get(key))
        except ValueError:
            raise ConfigError(f"{key} = {self.get(key)!r} is not a number") from None

    def int(self, key: str) -> int:
        try:
            return int(self.get(key))
        except ValueError:
            raise ConfigError(f"{key} = {self.get(key)!r} is not an integer") from None

    def floats(self, key: str) -> list:
        try:
            return [float(x) for x in self.get(key).split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"{key} = {self.get(key)!r} is not a number list") from None

    def complex(self, prefix: str) -> complex:
        return complex(self.float(prefix + "_re"), self.float(prefix + "_im"))

    def echo(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values)}

    def family(self) -> MapSpec:
        fam = self.get("family").lower()
        try:
            if fam in ("tan", "tangent"):
                return MapSpec.tangent(self.complex("lambda"))
            if fam in ("mexp", "mobius_exp", "mobiusexp"):
                return MapSpec.mobius_exp(*(self.complex(c) for c in "abcd"))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        raise ConfigError(f"unknown family {fam!r}")


# ------------------------------------------------------------ records
def clean(x):
    """JSON-safe copy: complex -> [re, im], non-finite floats -> strings."""
    if isinstance(x, dict):
        return {str(k): clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [clean(float(x.real)), clean(float(x.imag))]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def dumps(record: dict) -> str:
    return json.dumps(clean(record), sort_keys=True, ensure_ascii=False)


class Run:
    """Owner of one run's outputs: records, side files, manifest."""

    def __init__(self, command: str, cfg: Config, out: str | None):
        self.command, self.cfg, self.out = command, cfg, out
        self.seed = cfg.int("seed")
        ident = {"command": command, "config": cfg.echo(), "seed": self.seed, "version": __version__}
        # worker count never changes results, so it stays out of the hash
        hashed = dict(ident, config={k: v for k, v in ident["config"].items() if k != "workers"})
        self.hash = hashlib.sha256(dumps(hashed).encode()).hexdigest()[:16]
        self.ident = ident
        self.regime = None
        self.files = []
        self.start = time.perf_counter()
        self._fh = None
        if out:
            os.makedirs(out, exist_ok=True)
            self._fh = open(os.path.join(out, "records.jsonl"), "w", encoding="utf-8", newline="\n")

    def emit(self, record: dict):
        record = dict(record)
        record["manifest_hash"] = self.hash
        line = dumps(record)
        sys.stdout.write(line + "\n")
        if self._fh:
            self._fh.write(line + "\n")

    def path(self, name: str) -> str | None:
        if not self.out:
            return None
        self.files.append(name)
        return os.path.join(self.out, name)

    def write_csv(self, name: str, header, rows):
        p = self.path(name)
        if p is None:
            return
        with open(p, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def close(self):
        if self._fh:
            self._fh.close()
            man = dict(self.ident)
            man.update({"manifest_hash": self.hash, "wall_time": time.perf_counter() - self.start,
                        "regime": self.regime, "files": ["records.jsonl"] + self.files})
            with open(os.path.join(self.out, "manifest.json"), "w", encoding="utf-8") as fh:
                fh.write(json.dumps(clean(man), sort_keys=True, indent=2) + "\n")


# ------------------------------------------------------------ commands
def _tree(cfg: Config):
    from .transfer import TreeConfig
    return TreeConfig(res=cfg.float("res"), rel_tol=cfg.float("rel_tol"))


def _regime(run: Run, f: MapSpec):
    r = classify_regime(f)
    run.regime = r.summary()
    return r


def cmd_classify(run: Run, cfg: Config):
    f = cfg.family()
    r = _regime(run, f)
    rec = r.summary()
    rec.update({"kind": "regime", "family": f.label(), "value": r.regime,
                "bracket": None, "truncation": {"orbit_len": 200},
                "postsingular": r.postsingular[:24] if r.postsingular is not None else []})
    run.emit(rec)


def cmd_pressure(run: Run, cfg: Config):
    from .bowen import default_base
    from .transfer import pressure_estimate
    f = cfg.family()
    base = cfg.complex("base") if "base_re" in cfg.values else default_base(f)
    for t in cfg.floats("t"):
        r = pressure_estimate(f, t, base, cfg.int("depth"), _tree(cfg))
        rec = r.as_record()
        rec.update({"kind": "pressure", "family": f.label(), "base": base})
        run.emit(rec)


def cmd_dimension(run: Run, cfg: Config):
    from .bowen import bounds_check, pressure_root, ulam_root
    f = cfg.family()
    regime = _regime(run, f)
    methods = cfg.get("method").split(",")
    for meth in methods:
        if meth == "pressure":
            try:
                est = pressure_root(f, cfg.float("bisect_tol"), cfg.int("depth"), _tree(cfg))
            except NoSignChange as e:
                run.emit({"kind": "dimension", "method": "PressureRoot", "value": e.estimate,
                          "flag": e.flag, "bracket": None, "family": f.label(),
                          "truncation": {"depth": cfg.int("depth"), "res": cfg.float("res")}})
                continue
        elif meth == "ulam":
            est = ulam_root(f, cfg.int("bins"))
        elif meth == "box":
            est = _box_dimension(f, cfg)
        else:
            raise ConfigError(f"unknown method {meth!r}")
        rec = est.as_record()
        rec.update({"kind": "dimension", "value": est.h, "family": f.label(),
                    "bounds": bounds_check(est, regime).as_record(),
                    "truncation": {"depth": cfg.int("depth"), "res": cfg.float("res"),
                                   "bins": cfg.int("bins")}})
        run.emit(rec)


def _box_scales():
    return [2 * math.pi / 2 ** j for j in range(6, 17)]


def _box_dimension(f: MapSpec, cfg: Config):
    from .bowen import BOX_COUNT, DimensionEstimate
    from .raster import box_count, refine_real_julia
    d = cfg.int("julia_depth")
    levels = refine_real_julia(f, d, cfg.float("min_len"))
    a = box_count(levels[-1], _box_scales())
    b = box_count(levels[-3] if d >= 2 else levels[-1], _box_scales())
    w = max(abs(a.slope - b.slope), 1e-3)
    return DimensionEstimate(a.slope, (a.slope - w, min(2.0, a.slope + w)), BOX_COUNT,
                             1 - a.r2, float(f.rho))


def cmd_poincare(run: Run, cfg: Config):
    from .poincare import estimate_h
    f = cfg.family()
    regime = _regime(run, f)
    e = estimate_h(f, cfg.floats("t_grid"), cfg.int("n_max"), _tree(cfg), regime)
    rec = e.as_record()
    rec.update({"kind": "poincare", "value": e.h, "family": f.label(),
                "truncation": {"n_max": cfg.int("n_max"), "res": cfg.float("res")}})
    run.emit(rec)


def _measure(cfg: Config, f: MapSpec):
    from .poincare import build_ps_measure
    return build_ps_measure(f, cfg.float("s"), cfg.int("depth_max"), _tree(cfg))


def cmd_measure(run: Run, cfg: Config):
    from .poincare import tightness_profile
    f = cfg.family()
    m = _measure(cfg, f)
    p = run.path("measure.txt")
    if p:
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# manifest_hash={run.hash}\n")
            fh.write(m.dumps())
    prof = tightness_profile(m, [1, 1.5, 2, 3, 4])
    run.emit({"kind": "measure", "family": f.label(), "value": m.log_Z, "s": m.s,
              "error": m.discarded_mass_bound, "atoms": len(m), "tightness": prof.as_record(),
              "truncation": {"depth_max": m.depth_max, "res": cfg.float("res")}})


def cmd_conformality(run: Run, cfg: Config):
    from .poincare import conformality_cells, conformality_check
    f = cfg.family()
    regime = _regime(run, f)
    m = _measure(cfg, f)
    avoid = list(f.asymptotic_values) + list(regime.postsingular if regime.postsingular is not None else [])
    cells = conformality_cells(f, m, cfg.int("cells"), cfg.float("cell_radius"), avoid,
                               regime.safety_radius)
    r = conformality_check(f, m, cells, cfg.float("h_test"))
    rec = r.as_record()
    rec.update({"kind": "conformality", "value": r.C, "bracket": [min(r.ratios), max(r.ratios)],
                "family": f.label(), "cells": [c for c, _ in cells],
                "truncation": {"s": m.s, "depth_max": m.depth_max, "res": cfg.float("res")}})
    run.emit(rec)


def cmd_criterion(run: Run, cfg: Config):
    from .invariant import (criterion_exponent, finiteness_criterion, lattice_sum_triple,
                            schwarzian_degree_criterion)
    if "degp" in cfg.values:
        v = schwarzian_degree_criterion(cfg.int("degp"))
        print(v)
        run.emit({"kind": "criterion", "degp": cfg.int("degp"), "value": v, "bracket": None,
                  "truncation": None})
        return
    try:
        rho, h = Fraction(cfg.get("rho")), Fraction(cfg.get("h"))
    except (ValueError, ZeroDivisionError):
        raise ConfigError("criterion needs numeric rho and h") from None
    v = finiteness_criterion(rho, h)
    s = criterion_exponent(rho, h)
    lat = lattice_sum_triple(s, n_cap=2000)
    print(v)
    run.emit({"kind": "criterion", "rho": str(rho), "h": str(h), "value": v,
              "threshold": str(3 * rho / (rho + 1)), "lattice_s": str(s),
              "lattice": lat.as_record(), "bracket": lat.bracket,
              "truncation": {"n_cap": lat.n_cap}})


def cmd_martens(run: Run, cfg: Config):
    from .invariant import martens_ratio
    f = cfg.family()
    regime = _regime(run, f)
    m = _measure(cfg, f)
    A = (cfg.complex("A"), cfg.float("A_r"))
    A0 = (cfg.complex("A0"), cfg.float("A0_r"))
    e = martens_ratio(f, m, A, A0, regime=regime)
    rec = e.as_record()
    rec.update({"kind": "martens", "value": e.limit, "family": f.label(),
                "truncation": {"atoms": len(m), "depth_max": m.depth_max}})
    run.emit(rec)


def cmd_lyapunov(run: Run, cfg: Config):
    from .invariant import InducedDomain, lyapunov_induced
    f = cfg.family()
    regime = _regime(run, f)
    if regime.regime != SUB_EXPANDING:
        raise ConfigError("lyapunov needs a sub-expanding parameter")
    m = _measure(cfg, f)
    L = lyapunov_induced(f, m, cfg.int("orbits"), cfg.int("length"), run.seed,
                         cfg.float("jitter"), domain=InducedDomain.from_regime(f, regime))
    rec = L.as_record()
    rec.update({"kind": "lyapunov", "value": L.chi, "error": L.std_err, "family": f.label(),
                "truncation": {"orbits": cfg.int("orbits"), "length": cfg.int("length")}})
    run.emit(rec)
    run.write_csv("tau_histogram.csv", ["tau", "count"], sorted(L.tau_histogram.items()))


def cmd_raster(run: Run, cfg: Config):
    from .raster import box_count, classify_grid, refine_real_julia, write_intervals_csv, write_pgm
    f = cfg.family()
    regime = _regime(run, f)
    if regime.regime != HYPERBOLIC:
        run.emit({"kind": "raster", "family": f.label(), "value": None, "bracket": None,
                  "skipped": "attraction-based rasters need a hyperbolic map",
                  "truncation": None})
        return
    x0, x1, y0, y1 = cfg.floats("region")
    xs = np.linspace(x0, x1, cfg.int("width"))
    ys = np.linspace(y1, y0, cfg.int("height"))
    codes = classify_grid(f, xs, ys, cfg.int("max_iter"), regime)
    p = run.path("raster.pgm")
    if p:
        write_pgm(p, codes)
    rec = {"kind": "raster", "family": f.label(), "value": float(np.mean(codes == 0)),
           "undecided_fraction": float(np.mean(codes == 128)), "bracket": None,
           "truncation": {"max_iter": cfg.int("max_iter"), "width": len(xs), "height": len(ys)}}
    if f.is_real:
        levels = refine_real_julia(f, cfg.int("julia_depth"), cfg.float("min_len"))
        bc = box_count(levels[-1], _box_scales())
        p = run.path("intervals.csv")
        if p:
            write_intervals_csv(p, levels[-1])
        rec["box_count"] = bc.as_record()
    run.emit(rec)


def _sweep_task(args):
    command, values, index, master = args
    cfg = Config(values)
    # per-task seed from (master, index): independent of worker scheduling
    sub = int(np.random.SeedSequence(entropy=master, spawn_key=(index,)).generate_state(1)[0])
    cfg.values["seed"] = str(sub)
    buf = _Collector(command, cfg)
    try:
        HANDLERS[command](buf, cfg)
    except DynamicsError as e:
        buf.emit(_error_record(e))
    return buf.records


class _Collector:
    """A Run stand-in that keeps records in memory (sweep workers)."""

    def __init__(self, command, cfg):
        self.command, self.cfg, self.seed = command, cfg, cfg.int("seed")
        self.records, self.regime = [], None

    def emit(self, record):
        self.records.append(record)

    def path(self, name):
        return None

    def write_csv(self, *a):
        pass


def _pool_map(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))          # map preserves task order


def cmd_sweep(run: Run, cfg: Config):
    task = cfg.get("task")
    if task not in HANDLERS or task in ("sweep", "selftest"):
        raise ConfigError(f"cannot sweep {task!r}")
    grid = [parse_complex(g) for g in cfg.get("grid").split(";") if g.strip()]
    if not grid:
        raise ConfigError("empty sweep grid")
    tasks = []
    for i, lam in enumerate(grid):
        vals = dict(cfg.values)
        vals.pop("grid", None)
        vals.update({"lambda_re": repr(lam.real), "lambda_im": repr(lam.imag)})
        tasks.append((task, vals, i, run.seed))
    for i, recs in enumerate(_pool_map(_sweep_task, tasks, cfg.int("workers"))):
        for r in recs:
            r.update({"sweep_index": i, "lambda": grid[i]})
            run.emit(r)


def _selftest_task(args):
    index, master = args
    from .selftest import CHECKS
    module, name, fn = CHECKS[index]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=master, spawn_key=(index,)))
    try:
        passed, value, expected = fn(rng)
        err = None
    except Exception as e:          # a crashing check is a failed check
        passed, value, expected, err = False, None, None, f"{type(e).__name__}: {e}"
    return {"kind": "selftest", "index": index, "module": module, "check": name,
            "passed": bool(passed), "value": value, "bracket": expected, "error": err,
            "truncation": None}


def cmd_selftest(run: Run, cfg: Config):
    from .selftest import CHECKS
    recs = _pool_map(_selftest_task, [(i, run.seed) for i in range(len(CHECKS))], cfg.int("workers"))
    failed = 0
    for r in recs:
        run.emit(r)
        failed += not r["passed"]
    run.emit({"kind": "selftest_summary", "value": len(recs) - failed, "bracket": [0, len(recs)],
              "failed": failed, "truncation": None})
    return 1 if failed else 0


HANDLERS = {"classify": cmd_classify, "pressure": cmd_pressure, "dimension": cmd_dimension,
            "poincare": cmd_poincare, "measure": cmd_measure, "conformality": cmd_conformality,
            "criterion": cmd_criterion, "martens": cmd_martens, "lyapunov": cmd_lyapunov,
            "raster": cmd_raster, "sweep": cmd_sweep, "selftest": cmd_selftest}


# ------------------------------------------------------------ entry point
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="merodyn", description="Thermodynamic formalism for tangent-type maps.")
    p.add_argument("--version", action="version", version=f"merodyn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("--out", help="directory for records.jsonl, manifest.json and side files")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="any config key; repeatable")
        for flag, key in FLAGS.items():
            sp.add_argument(flag, dest="opt_" + key, metavar=key.upper())
    return p


def _error_record(e: DynamicsError) -> dict:
    rec = {"kind": "error", "error": type(e).__name__, "message": str(e), "value": None,
           "bracket": None, "truncation": None}
    if isinstance(e, NoSignChange):
        rec.update({"flag": e.flag, "estimate": e.estimate})
    return rec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = read_config(args.config) if args.config else {}
        for kv in args.set:
            if "=" not in kv:
                raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
            k, v = kv.split("=", 1)
            values[k.strip()] = v.strip()
        for key in FLAGS.values():
            v = getattr(args, "opt_" + key)
            if v is not None:
                values[key] = v
        cfg = Config(values)
        run = Run(args.command, cfg, args.out)
    except ConfigError as e:
        sys.stderr.write(f"merodyn: config error: {e}\n")
        return 2
    status = 0
    try:
        status = HANDLERS[args.command](run, cfg) or 0
    except ConfigError as e:
        sys.stderr.write(f"merodyn: config error: {e}\n")
        status = 2
    except DynamicsError as e:
        run.emit(_error_record(e))
        status = 3
    finally:
        run.close()
        sys.stdout.flush()
    return status


if __name__ == "__main__":
    sys.exit(main())
