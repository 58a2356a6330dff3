"""Batch experiment runner: ``awflab {geometry,awf,bmo,torsion,all}``.

A run reads an INI config (every key optional, see ``ExperimentConfig``),
applies flag overrides, dispatches the sweep points to a process pool capped
by ``AWFLAB_THREADS`` and writes ``summary.json`` plus CSV files into the
output directory.  The exit status is 1 iff an invariant check failed, 2 on a
config error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bmo, experiments, geometry, torsion
from .curve import MonomialCurve, normalize

EXPERIMENTS = ("geometry", "awf", "bmo", "torsion", "all")
CSV_SCHEMA = "# schema=1"


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v != "")


def _strs(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _opt(section, default, parse, doc):
    return field(default=default, metadata={"section": section, "parse": parse, "doc": doc})


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    """All run parameters; the INI section of each field is in its metadata."""

    experiment: str = _opt("run", "all", str, "geometry | awf | bmo | torsion | all")
    seed: int = _opt("run", 0, int, "base seed; sweep point k uses seed + k")
    out: str = _opt("run", "awflab-out", str, "output directory")

    beta1: float = _opt("curve", 1.0, float, "first exponent of the monomial curve")
    beta2: float = _opt("curve", 2.0, float, "second exponent; beta = beta2 / beta1")
    eps: tuple = _opt("curve", (1.0, 1.0), _floats, "signs on t > 0")
    delta: tuple = _opt("curve", (-1.0, -1.0), _floats, "signs on t < 0")

    a1: tuple = _opt("geometry", (50.0, 100.0, 200.0), _floats, "A1 sweep (comma list)")
    corner: tuple = _opt("geometry", (0.0, 0.0), _floats, "corner of Q")
    ell: float = _opt("geometry", 1.0, float, "side length of Q")
    samples: int = _opt("geometry", 1000, int, "random points per geometry check")
    measure_samples: int = _opt("geometry", 100_000, int, "Monte Carlo samples for |W1|")

    resolution: int = _opt("quadrature", 256, int, "grid side of the reconstruction check on Q")
    reconstruction: bool = _opt("quadrature", True, _bool, "run the reconstruction check")
    pairing: bool = _opt("quadrature", False, _bool, "run the pairing identity check")

    symbols: tuple = _opt("bmo", ("log_abs_x1", "bump", "checkerboard", "quadrant"), _strs,
                          "symbols from the built-in library")
    levels: int = _opt("bmo", 6, int, "dyadic scales 2^0 .. 2^-levels")
    per_scale: int = _opt("bmo", 64, int, "random rectangles per scale")
    p: float = _opt("bmo", 1.0, float, "oscillation exponent")
    grid: int = _opt("bmo", 64, int, "quadrature grid side per rectangle")
    region: tuple = _opt("bmo", (-1.0, 1.0, -1.0, 1.0), _floats, "x1lo, x1hi, x2lo, x2hi")

    curve: str = _opt("torsion", "circle-arc", str, "parabola | circle-arc | rotated-parabola | polynomial")
    scales: tuple = _opt("torsion", tuple(2.0**-k for k in range(3, 9)), _floats, "scales l")
    theta: float = _opt("torsion", torsion.DEFAULT_THETA, float, "inner window edge theta l")
    big_theta: float = _opt("torsion", torsion.DEFAULT_BIG_THETA, float, "outer window edge Theta l")
    per_decade: int = _opt("torsion", 6, int, "xi radii per decade")
    angles: int = _opt("torsion", 16, int, "xi directions")

    # -- serialisation ---------------------------------------------------

    def to_ini(self):
        cp = configparser.ConfigParser()
        for f in dataclasses.fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, f.name, _fmt(getattr(self, f.name)))
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp.items(sec)]
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text):
        cp = configparser.ConfigParser()
        cp.read_string(text)
        known = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                f = known.get(key)
                if f is None or f.metadata["section"] != sec:
                    raise ConfigError(f"{sec}.{key}: unknown key")
                try:
                    kw[key] = f.metadata["parse"](raw)
                except ValueError as e:
                    raise ConfigError(f"{sec}.{key}: {e}") from None
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def to_record(self):
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in dataclasses.fields(self)}

    # -- validation ------------------------------------------------------

    def monomial(self):
        return MonomialCurve(self.beta1, self.beta2, tuple(int(s) for s in self.eps),
                             tuple(int(s) for s in self.delta))

    @property
    def beta(self):
        return normalize(self.monomial()).beta

    def validate(self):
        err = []
        if self.experiment not in EXPERIMENTS:
            err.append(f"run.experiment: must be one of {', '.join(EXPERIMENTS)}")
        try:
            self.monomial()
        except ValueError as e:
            err.append(f"curve: {e}")
        if not self.a1:
            err.append("geometry.a1: A1 list must not be empty")
        elif min(self.a1) <= 10:
            err.append("geometry.a1: every A1 must exceed 10")
        if len(self.corner) != 2:
            err.append("geometry.corner: need two coordinates")
        if not self.ell > 0:
            err.append("geometry.ell: must be positive")
        if self.samples < 1:
            err.append("geometry.samples: must be >= 1")
        if self.measure_samples < 10_000:
            err.append("geometry.measure_samples: must be >= 10000")
        if self.resolution < 8:
            err.append("quadrature.resolution: must be >= 8")
        lib = bmo.symbol_library(2.0)
        bad = [s for s in self.symbols if s not in lib]
        if bad or not self.symbols:
            err.append(f"bmo.symbols: unknown or empty ({', '.join(bad)}); choose from {', '.join(lib)}")
        if self.levels < 0 or self.per_scale < 1 or self.grid < 2:
            err.append("bmo.levels/per_scale/grid: need levels >= 0, per_scale >= 1, grid >= 2")
        if self.p < 1:
            err.append("bmo.p: must be >= 1")
        if len(self.region) != 4 or not (self.region[0] < self.region[1] and self.region[2] < self.region[3]):
            err.append("bmo.region: need x1lo < x1hi, x2lo < x2hi")
        if self.curve not in ("parabola", "circle-arc", "rotated-parabola", "polynomial"):
            err.append("torsion.curve: unknown builtin")
        if not self.scales or any(not (0 < s <= 1) for s in self.scales):
            err.append("torsion.scales: need a non-empty list in (0, 1]")
        if not (0 < self.theta < self.big_theta):
            err.append("torsion.theta/big_theta: need 0 < theta < big_theta")
        if self.per_decade < 1 or self.angles < 1:
            err.append("torsion.per_decade/angles: must be >= 1")
        if err:
            raise ConfigError("; ".join(err))
        return self


# ---------------------------------------------------------------------------
# sweep points (top-level so that they pickle)


def _geometry_point(cfg, A1, seed):
    beta = cfg.beta
    g = geometry.make_geometry(normalize(cfg.monomial()),
                               geometry.GammaRect(tuple(cfg.corner), cfg.ell), A1)
    uniq = experiments.intersection_uniqueness(beta, A1, n=cfg.samples, seed=seed,
                                               corner=cfg.corner, ell=cfg.ell)
    rng = np.random.default_rng(seed)
    xi1 = rng.uniform(0, g.ell, cfg.samples)
    xi2 = rng.uniform(0, g.side2, cfg.samples)
    t1, t2 = geometry.interval_W1_offsets(g, xi1, xi2)
    w = (t2 - t1) / g.ell
    meas = geometry.measure_W1(g, cfg.measure_samples, seed)
    rec = {
        "beta": beta, "A1": A1, "A2": g.A2,
        "Q": {"corner": list(g.Q.corner), "sides": list(g.Q.sides(beta))},
        "P": {"corner": list(g.P.corner), "sides": list(g.P.sides(beta))},
        "width": {"mean": float(w.mean()), "min": float(w.min()), "max": float(w.max())},
        "measure_W1": meas, "uniqueness": uniq,
        "checks": {**uniq["checks"], "widths_positive": bool(np.all(w > 0)),
                   "measure_in_bounds": bool(meas["lower"] <= meas["estimate"] + 4 * meas["sigma"]
                                             and meas["estimate"] - 4 * meas["sigma"] <= meas["upper"])},
    }
    rows = [(A1, a, b, c) for a, b, c in zip(xi1.tolist(), xi2.tolist(), w.tolist())]
    return rec, rows


def _awf_point(cfg, A1, seed):
    rec = experiments.awf_record(cfg.beta, A1, reconstruction=cfg.reconstruction, pairing=cfg.pairing,
                                 q_grid=cfg.resolution, fields=True, corner=cfg.corner, ell=cfg.ell)
    rows = [(A1, *r) for r in rec.pop("field_rows")]
    return rec, rows


def _bmo_point(cfg, name, seed):
    b = bmo.symbol_library(cfg.beta)[name]
    s = bmo.RectSampler.dyadic(cfg.levels, cfg.per_scale, cfg.region, cfg.beta, seed=seed,
                               centres=bmo.gradient_peaks(b, cfg.region))
    scan = bmo.bmo_scan(b, s, cfg.p, cfg.grid)
    osc = [o for _, o in scan]
    rec = {"symbol": name, "estimate": max(osc), "rectangles": len(scan),
           "john_nirenberg_p2": bmo.john_nirenberg_ratio(b, s, 2.0, cfg.grid),
           "scale_robustness": bmo.scale_robustness(b, s, 0.25, cfg.p, cfg.grid),
           "checks": {"finite": bool(np.all(np.isfinite(osc)))}}
    rows = [(name, r.ell, r.corner[0], r.corner[1], o) for r, o in scan]
    return rec, rows


def _bmo_machinery_point(cfg, seed):
    rec = experiments.bmo_machinery(cfg.beta, cfg.levels, cfg.per_scale, seed, cfg.grid)
    return rec, []


def _torsion_point(cfg, seed):
    cv = torsion.builtin_curve(cfg.curve)
    fr = torsion.taylor_frame(cv)
    dec = experiments.multiplier_decay(cfg.curve, list(cfg.scales), cfg.theta, cfg.big_theta,
                                       per_decade=cfg.per_decade, angles=cfg.angles)
    frames = experiments.torsion_frames(seed=seed)
    vdc = experiments.vdc_run(seed)
    rec = {
        "curve": cfg.curve,
        "frame": {"A": fr.A.tolist(), "c": fr.c, "B": fr.B.tolist(), "O": fr.O.tolist(),
                  "orthonormality_defect": fr.orthonormality_defect()},
        "decay": {k: v for k, v in dec.items() if k != "checks"},
        "random_frames": frames, "vdc": {"max_ratio": vdc["max_ratio"], "checks": vdc["checks"]},
        "checks": {**dec["checks"], **frames["checks"], **{f"vdc.{k}": v for k, v in vdc["checks"].items()}},
    }
    rows = [(r["ell"], r["sup_K"], r["eps"], r["max_envelope_ratio"]) for r in dec["rows"]]
    return rec, rows


def _guarded(task):
    fun, args = task
    try:
        return fun(*args)
    except Exception as e:  # computation flags end up in the summary
        return {"error": f"{type(e).__name__}: {e}", "traceback": traceback.format_exc(),
                "checks": {"completed": False}}, []


def _threads():
    try:
        return max(1, int(os.environ.get("AWFLAB_THREADS", "1")))
    except ValueError:
        raise ConfigError("AWFLAB_THREADS: must be an integer") from None


def _map(tasks):
    n = min(_threads(), len(tasks))
    if n <= 1:
        return [_guarded(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(_guarded, tasks))


# ---------------------------------------------------------------------------
# output


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(CSV_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _collect_checks(obj, prefix=""):
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k == "checks" and isinstance(v, dict):
                out.update({f"{prefix}{kk}": bool(vv) for kk, vv in v.items()})
            elif isinstance(v, (dict, list)):
                out.update(_collect_checks(v, f"{prefix}{k}."))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out.update(_collect_checks(v, f"{prefix}{i}."))
    return out


def run_experiment(cfg):
    """Run the configured experiment; returns (exit status, summary)."""
    cfg.validate()
    os.makedirs(cfg.out, exist_ok=True)
    kinds = ("geometry", "awf", "bmo", "torsion") if cfg.experiment == "all" else (cfg.experiment,)
    summary = {"config": cfg.to_record(), "results": {}}

    if "geometry" in kinds:
        res = _map([(_geometry_point, (cfg, a, cfg.seed + k)) for k, a in enumerate(cfg.a1)])
        summary["results"]["geometry"] = [r for r, _ in res]
        write_csv(os.path.join(cfg.out, "geometry_widths.csv"), ["A1", "xi1", "xi2", "width_over_ell"],
                  [row for _, rows in res for row in rows])

    if "awf" in kinds:
        res = _map([(_awf_point, (cfg, a, cfg.seed + k)) for k, a in enumerate(cfg.a1)])
        recs = [r for r, _ in res]
        sweep = {}
        ok = [r for r in recs if "error" not in r]
        if len(ok) > 1:
            order = sorted(ok, key=lambda r: r["A1"])
            eps = [r["eps_P"] for r in order]
            sweep = {"A1": [r["A1"] for r in order], "eps_P": eps,
                     "checks": {"eps_P_decreasing": bool(all(b < a for a, b in zip(eps, eps[1:])))}}
        summary["results"]["awf"] = {"records": recs, "sweep": sweep,
                                     "constants": {k: max((r.get(k, 0.0) for r in ok), default=None)
                                                   for k in ("C_h_Q", "C_h_W1", "C_z_scaled", "chain_C")}}
        write_csv(os.path.join(cfg.out, "awf_fields.csv"), ["A1", "xi1", "xi2", "f_tilde_P", "f_tilde_Q"],
                  [row for _, rows in res for row in rows])

    if "bmo" in kinds:
        tasks = [(_bmo_point, (cfg, name, cfg.seed)) for name in cfg.symbols]
        tasks.append((_bmo_machinery_point, (cfg, cfg.seed)))
        res = _map(tasks)
        summary["results"]["bmo"] = {"symbols": [r for r, _ in res[:-1]], "machinery": res[-1][0]}
        write_csv(os.path.join(cfg.out, "bmo_oscillations.csv"),
                  ["symbol", "scale", "corner1", "corner2", "oscillation"],
                  [row for _, rows in res for row in rows])

    if "torsion" in kinds:
        (rec, rows), = _map([(_torsion_point, (cfg, cfg.seed))])
        summary["results"]["torsion"] = rec
        write_csv(os.path.join(cfg.out, "torsion_decay.csv"), ["ell", "sup_K", "eps", "max_envelope_ratio"], rows)

    checks = _collect_checks(summary["results"])
    failed = sorted(k for k, v in checks.items() if not v)
    summary["checks"] = checks
    summary["failed"] = failed
    summary["status"] = "fail" if failed else "pass"
    with open(os.path.join(cfg.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_jsonable)
    return (1 if failed else 0), summary


# ---------------------------------------------------------------------------
# command line


def build_parser():
    p = argparse.ArgumentParser(
        prog="awflab",
        description="Experiments for weak factorisation of Hilbert transforms along monomial curves.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="flags (every subcommand):\n"
               "  --config PATH    INI config file (see --print-config for all keys)\n"
               "  --seed N         base seed\n"
               "  --out DIR        output directory\n"
               "  --a1 LIST        comma-separated A1 values\n"
               "  --beta X         normalised exponent\n"
               "  --resolution N   reconstruction grid side\n"
               "  --print-config   print the effective config and exit\n\n"
               "environment:\n  AWFLAB_THREADS   caps the worker pool (default 1)")
    sub = p.add_subparsers(dest="experiment", required=True, metavar="{geometry,awf,bmo,torsion,all}")
    helps = {"geometry": "intersection solves, W1 widths and measure",
             "awf": "two-stage factorisation sweep over A1",
             "bmo": "sampled BMO_gamma oscillations",
             "torsion": "Taylor frames, multiplier decay and van der Corput battery",
             "all": "every experiment above"}
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=helps[name], description=helps[name])
        sp.add_argument("--config", metavar="PATH", help="INI config file")
        sp.add_argument("--seed", type=int, metavar="N", help="base seed")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--a1", metavar="LIST", help="comma-separated A1 values")
        sp.add_argument("--beta", type=float, metavar="X", help="normalised exponent (sets beta1=1, beta2=X)")
        sp.add_argument("--resolution", type=int, metavar="N", help="reconstruction grid side")
        sp.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    return p


def config_from_args(args):
    cfg = ExperimentConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_ini(fh.read())
    cfg.experiment = args.experiment
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.a1 is not None:
        try:
            cfg.a1 = _floats(args.a1)
        except ValueError:
            raise ConfigError(f"geometry.a1: cannot parse {args.a1!r}") from None
    if args.beta is not None:
        cfg.beta1, cfg.beta2 = 1.0, float(args.beta)
    if args.resolution is not None:
        cfg.resolution = args.resolution
    return cfg.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.print_config:
            print(cfg.to_ini())
            return 0
        status, summary = run_experiment(cfg)
    except (ConfigError, OSError) as e:
        print(f"awflab: error: {e}", file=sys.stderr)
        return 2
    print(f"awflab {cfg.experiment}: {summary['status']} ({len(summary['checks'])} checks, "
          f"{len(summary['failed'])} failed) -> {cfg.out}")
    for name in summary["failed"]:
        print(f"  FAIL {name}")
    return status


if __name__ == "__main__":
    sys.exit(main())
