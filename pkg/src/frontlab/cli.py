"""Command-line entry point: ``frontlab <experiment> --config PATH --out DIR``.

Configuration is JSON.  Every key is optional; omitted keys take the defaults
in ``DEFAULTS`` and the fully resolved configuration is written to
``resolved_config.json`` next to the outputs.

Top-level keys
--------------
``cell``        ``{"N", "periods", "resolution"}``
``flow``        ``{"kind": zero|shear|cellular|two_cylinder, "amplitude", "profile",
                "axis", "radius", "gap"}``
``diffusion``   ``{"scale"}`` or ``{"diagonal": [a_1, ..., a_N]}`` (constant)
``zeta``        ``{"kind": constant, "value"}`` or
                ``{"kind": cosine, "mean", "amplitude", "axis"}``
``direction``   unit vector; ``null`` means ``e_1``
``M``           amplitude for ``speed``; ``amplitudes`` list for ``sweep``/``limit``
``scheme``      ``auto``, ``central`` or ``upwind``
``peclet_max``  optional grid-refinement bound used by sweeps
``tolerances``  ``{"eigen", "lambda_rtol", "varlimit", "h1"}``, all positive
``varlimit``    ``{"method": auto|maximize|shear|component|axisymmetric, "starts",
                "dump_w", "axisymmetric": {"N", "gap", "resolution", "radius"}}``
``h1dim``       ``{"dimensions", "ns", "resolution", "lam", "mu"}``
``check``       ``{"T", "dt", "seeds", "volume_t", "volume_dt", "region"}``
``seed``, ``workers``

Exit status: 0 on success, 2 on an invalid configuration (nothing written),
1 on a computation failure (``error.json`` written) or a failed property in
``check``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .cell import (DiffusionSpec, FlowSpec, ScalarField, build_cell, check_zero_average,
                   make_flow, slice_identity)
from .flowmap import first_integral_conservation, stream_function_2d, volume_preservation_check
from .h1dim import growth_rate_fit, min_transition_energy, write_h1_csv
from .speed import (SpeedCurve, amplitude_sweep, estimate_linear_limit, minimal_speed,
                    write_speed_csv)
from .varlimit import (axisymmetric_component_limit, component_constant_limit, maximize_ratio,
                       shear_reduction, write_w_csv)

log = logging.getLogger("frontlab")

EXPERIMENTS = ("speed", "sweep", "limit", "varlimit", "h1dim", "check")
EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "cell": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "periods": {"type": "array", "items": _POS, "minItems": 2},
                "resolution": {"type": "array", "items": {"type": "integer", "minimum": 2},
                               "minItems": 2},
            },
        },
        "flow": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zero", "shear", "cellular", "two_cylinder"]},
                "amplitude": {"type": "number"},
                "profile": {"type": ["string", "null"]},
                "axis": {"type": "integer", "minimum": 0},
                "radius": _POS,
                "gap": _NONNEG,
            },
        },
        "diffusion": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "scale": _POS,
                "diagonal": {"type": ["array", "null"], "items": _POS},
            },
        },
        "zeta": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["constant", "cosine"]},
                "value": _POS,
                "mean": _POS,
                "amplitude": _NONNEG,
                "axis": {"type": "integer", "minimum": 0},
            },
        },
        "direction": {"type": ["array", "null"], "items": {"type": "number"}},
        "M": _NONNEG,
        "amplitudes": {"type": "array", "items": _NONNEG, "minItems": 1},
        "scheme": {"enum": ["auto", "central", "upwind"]},
        "peclet_max": {"anyOf": [_POS, {"type": "null"}]},
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {k: _POS for k in ("eigen", "lambda_rtol", "varlimit", "h1")},
        },
        "varlimit": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "method": {"enum": ["auto", "maximize", "shear", "component", "axisymmetric"]},
                "starts": _POS_INT,
                "dump_w": {"type": "boolean"},
                "axisymmetric": {
                    "type": "object", "additionalProperties": False,
                    "properties": {
                        "N": {"type": "integer", "minimum": 3},
                        "gap": _NONNEG,
                        "resolution": {"type": "integer", "minimum": 4},
                        "radius": _POS,
                    },
                },
            },
        },
        "h1dim": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "dimensions": {"type": "array", "items": {"type": "integer", "minimum": 2},
                               "minItems": 1},
                "ns": {"type": "array", "items": {"type": "integer", "minimum": 2},
                       "minItems": 4},
                "resolution": {"type": "integer", "minimum": 8},
                "lam": {"type": "number"},
                "mu": {"type": "number"},
            },
        },
        "check": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "T": _POS,
                "dt": _POS,
                "seeds": _POS_INT,
                "volume_t": _POS,
                "volume_dt": _POS,
                "region": {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2},
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
        "seed": {"type": "integer", "minimum": 0},
        "workers": _POS_INT,
    },
}

DEFAULTS = {
    "cell": {"N": 2, "periods": [1.0, 1.0], "resolution": [32, 32]},
    "flow": {"kind": "zero", "amplitude": 1.0, "profile": None, "axis": 0,
             "radius": 0.2, "gap": 0.0},
    "diffusion": {"scale": 1.0, "diagonal": None},
    "zeta": {"kind": "constant", "value": 1.0, "mean": 1.0, "amplitude": 0.0, "axis": 0},
    "direction": None,
    "M": 0.0,
    "amplitudes": [8.0, 16.0, 32.0, 64.0],
    "scheme": "auto",
    "peclet_max": None,
    "tolerances": {"eigen": 1e-8, "lambda_rtol": 1e-6, "varlimit": 1e-10, "h1": 1e-10},
    "varlimit": {"method": "auto", "starts": 4, "dump_w": False,
                 "axisymmetric": {"N": 5, "gap": 0.0, "resolution": 64, "radius": 0.2}},
    "h1dim": {"dimensions": [2, 3, 4, 5], "ns": [4, 8, 16, 32], "resolution": 128,
              "lam": 1.0, "mu": 0.0},
    "check": {"T": 10.0, "dt": 5e-4, "seeds": 4, "volume_t": 1.0, "volume_dt": 1e-3,
              "region": [0.1, 0.4]},
    "output": {"dir": "frontlab-out"},
    "seed": 0,
    "workers": 1,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict, experiment: str, out=None, workers=None, seed=None) -> dict:
    """Validate ``raw``, fill defaults and apply command-line overrides.

    Worker count precedence: ``--workers``, then ``FRONTLAB_WORKERS``, then the
    config, then 1.
    """
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("; ".join(msgs))
    if raw.get("experiment", experiment) != experiment:
        raise ConfigError(f"config is for {raw['experiment']!r}, not {experiment!r}")
    cfg = _merge(DEFAULTS, raw)
    cfg["experiment"] = experiment
    if out is not None:
        cfg["output"]["dir"] = str(out)
    if seed is not None:
        cfg["seed"] = int(seed)
    if workers is None and os.environ.get("FRONTLAB_WORKERS"):
        try:
            workers = int(os.environ["FRONTLAB_WORKERS"])
        except ValueError as exc:
            raise ConfigError(f"FRONTLAB_WORKERS is not an integer: {exc}") from None
    if workers is not None:
        if workers < 1:
            raise ConfigError("workers must be at least 1")
        cfg["workers"] = int(workers)

    c, given = cfg["cell"], raw.get("cell", {})
    # the dimension follows whichever of N, periods, resolution was given
    for key in ("N", "periods", "resolution"):
        if key in given:
            c["N"] = given[key] if key == "N" else len(given[key])
            break
    N = c["N"]
    if "periods" not in given:
        c["periods"] = [1.0] * N
    if "resolution" not in given:
        c["resolution"] = [DEFAULTS["cell"]["resolution"][0]] * N
    if len(c["periods"]) != N or len(c["resolution"]) != N:
        raise ConfigError(f"cell periods and resolution must have N={N} entries")
    if cfg["direction"] is None:
        cfg["direction"] = [1.0] + [0.0] * (N - 1)
    e = np.asarray(cfg["direction"], float)
    if e.shape != (N,) or abs(np.linalg.norm(e) - 1.0) > 1e-12:
        raise ConfigError("direction must be a unit vector with N components")
    if cfg["flow"]["axis"] >= N or cfg["zeta"]["axis"] >= N:
        raise ConfigError("axis index out of range")
    d = cfg["diffusion"]["diagonal"]
    if d is not None and len(d) != N:
        raise ConfigError("diffusion diagonal must have N entries")
    z = cfg["zeta"]
    if z["kind"] == "cosine" and z["amplitude"] >= z["mean"]:
        raise ConfigError("cosine zeta must stay positive (amplitude < mean)")
    amps = cfg["amplitudes"]
    if any(b <= a for a, b in zip(amps, amps[1:])):
        raise ConfigError("amplitudes must be strictly increasing")
    if experiment == "limit" and sum(1 for a in amps if a > 0) < 3:
        raise ConfigError("limit needs at least 3 positive amplitudes")
    lo, hi = cfg["check"]["region"]
    if not lo < hi:
        raise ConfigError("check region must satisfy lo < hi")
    return cfg


# ------------------------------------------------------------ problem set-up

def build_problem(cfg: dict, resolution=None):
    """``(cell, A, q, zeta)`` for the configuration; ``q`` is None for ``zero``."""
    c = cfg["cell"]
    cell = build_cell(c["N"], c["periods"], resolution or c["resolution"])
    d = cfg["diffusion"]
    if d["diagonal"] is None:
        A = DiffusionSpec.identity(cell, d["scale"])
    else:
        vals = np.zeros((cell.N, cell.N) + cell.shape)
        for i, a in enumerate(d["diagonal"]):
            vals[i, i] = a
        A = DiffusionSpec(cell, vals, min(d["diagonal"]), max(d["diagonal"]))
    z = cfg["zeta"]
    if z["kind"] == "constant":
        zeta = ScalarField.constant(cell, z["value"], "zeta")
    else:
        k, L = z["axis"], cell.periods[z["axis"]]
        zeta = ScalarField.from_function(
            cell, lambda *x: z["mean"] + z["amplitude"] * np.cos(2 * np.pi * x[k] / L), "zeta")
    f = cfg["flow"]
    q = None
    if f["kind"] != "zero":
        spec = FlowSpec(f["kind"], amplitude=f["amplitude"], profile=f["profile"],
                        axis=f["axis"], radius=f["radius"], gap=f["gap"])
        q = make_flow(spec, cell)
    return cell, A, q, zeta


class _Rebuild:
    """Picklable grid-refinement callback for sweeps."""

    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, resolution):
        return build_problem(self.cfg, resolution)


def _metadata(cfg, **extra) -> dict:
    return {"version": __version__, "resolution": cfg["cell"]["resolution"],
            "scheme": cfg["scheme"], "tolerances": cfg["tolerances"], "seed": cfg["seed"],
            **extra}


def _write_json(path: Path, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# ------------------------------------------------------------ experiments

def _sweep(cfg, Ms):
    cell, A, q, zeta = build_problem(cfg)
    rebuild = _Rebuild(cfg) if cfg["peclet_max"] is not None else None
    return amplitude_sweep(cell, A, q, zeta, cfg["direction"], Ms, cfg["scheme"],
                           rebuild=rebuild, peclet_max=cfg["peclet_max"], workers=cfg["workers"])


def run_speed(cfg, out: Path) -> int:
    cell, A, q, zeta = build_problem(cfg)
    tol = cfg["tolerances"]
    p = minimal_speed(cell, A, q, zeta, cfg["direction"], cfg["M"], scheme=cfg["scheme"],
                      rtol=tol["lambda_rtol"], eig_tol=tol["eigen"])
    write_speed_csv(out / "speed.csv", SpeedCurve([p]))
    _write_json(out / "speed.json", {
        "M": p.M, "lambda_star": p.lam_star, "k": p.k, "c_star": p.c_star,
        "interior_minimum": p.interior,
        "metadata": _metadata(cfg, scheme_used=p.scheme, resolution=list(p.resolution)),
    })
    return EXIT_OK


def run_sweep(cfg, out: Path) -> int:
    curve = _sweep(cfg, cfg["amplitudes"])
    write_speed_csv(out / "sweep.csv", curve)
    return EXIT_OK


def run_limit(cfg, out: Path) -> int:
    curve = _sweep(cfg, cfg["amplitudes"])
    write_speed_csv(out / "sweep.csv", curve)
    est = estimate_linear_limit(curve)
    _write_json(out / "limit.json", {
        "limit": est.limit, "last_ratio": est.last_ratio,
        "differences": est.differences.tolist(), "monotone": est.monotone,
        "metadata": _metadata(cfg, schemes=[p.scheme for p in curve.points],
                              resolutions=[list(p.resolution) for p in curve.points]),
    })
    return EXIT_OK


def run_varlimit(cfg, out: Path) -> int:
    v = cfg["varlimit"]
    tol = cfg["tolerances"]["varlimit"]
    method = v["method"]
    if method == "axisymmetric":
        ax = v["axisymmetric"]
        z = cfg["zeta"]
        if z["kind"] != "constant" or cfg["diffusion"]["diagonal"] is not None:
            raise ValueError("the axisymmetric reduction needs constant zeta and scalar diffusion")
        res = axisymmetric_component_limit(ax["N"], ax["gap"], ax["resolution"], ax["radius"],
                                           zeta=z["value"], diffusivity=cfg["diffusion"]["scale"],
                                           tol=tol)
    else:
        cell, A, q, zeta = build_problem(cfg)
        e = cfg["direction"]
        if method == "auto":
            method = "shear" if q is not None and q.kind == "shear" else "maximize"
        if method == "shear":
            res = shear_reduction(q, zeta, A, e, tol)
        elif method == "component":
            res = component_constant_limit(q, zeta, A, e, tol)
        else:
            res = maximize_ratio(q, zeta, A, e, tol=tol, starts=v["starts"], seed=cfg["seed"])
    rec = res.to_record()
    rec["metadata"] = _metadata(cfg, method=res.method, resolution=list(res.resolution))
    _write_json(out / "varlimit.json", rec)
    if v["dump_w"]:
        if res.w is not None:
            write_w_csv(out / "w.csv", res)
        elif res.w_values is not None:
            _write_axisym_w(out / "w.csv", res.w_values)
    return EXIT_OK


def _write_axisym_w(path, values) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["i_rho", "i_z", "w"])
        for (i, j), val in np.ndenumerate(values):
            wr.writerow([i, j, repr(float(val))])


def _h1_job(args):
    N, n, res, lam, mu, tol = args
    return min_transition_energy(N, n, res, lam, mu, tol)


def run_h1dim(cfg, out: Path) -> int:
    h = cfg["h1dim"]
    jobs = [(N, n, h["resolution"], h["lam"], h["mu"], cfg["tolerances"]["h1"])
            for N in h["dimensions"] for n in h["ns"]]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as ex:
            results = list(ex.map(_h1_job, jobs))
    else:
        results = [_h1_job(j) for j in jobs]
    fits = {}
    for N in h["dimensions"]:
        rows = [r for r in results if r.N == N]
        fit = growth_rate_fit(rows)
        for r in rows:
            r.classification = fit.classification
        fits[str(N)] = {"classification": fit.classification, "ambiguous": fit.ambiguous,
                        "residuals": fit.residuals, "increment_slope": fit.exponent}
    write_h1_csv(out / "h1dim.csv", results)
    _write_json(out / "h1dim.json", {
        "fits": fits, "metadata": _metadata(cfg, grid_cells_per_unit=h["resolution"])})
    return EXIT_OK


# ------------------------------------------------------------ property suite

def property_suite(cfg) -> list:
    """Run the structural checks on the configured flow.

    Returns ``[(name, status, value, threshold)]`` with ``status`` one of
    ``pass``, ``fail`` or ``skip``.
    """
    cell, A, q, zeta = build_problem(cfg)
    rows = []

    def add(name, value, threshold, skip=False):
        status = "skip" if skip else ("pass" if value <= threshold else "fail")
        rows.append((name, status, float(value), float(threshold)))

    if q is None:
        for name in ("zero_average", "divergence", "slice_identity", "volume_preservation",
                     "flow_conservation", "stream_function"):
            add(name, math.nan, math.nan, skip=True)
        return rows
    scale = max(q.max_norm(), 1.0)
    add("zero_average", float(np.max(np.abs(check_zero_average(q)))), 1e-10 * scale)
    add("divergence", q.max_divergence(), q.div_tol * scale)

    # w = 1 is a first integral of every flow: both sides vanish
    one = ScalarField.constant(cell, 1.0)
    err = max(abs(l - r) for l, r in (slice_identity(q, one, i) for i in range(cell.N)))
    phi = None
    if cell.N == 2:
        phi = stream_function_2d(q)
        w2max = float(np.max(phi.values**2))
        for i in range(2):
            l, r = slice_identity(q, phi, i)
            err = max(err, abs(l - r) / max(scale * w2max * cell.volume, 1e-300))
    add("slice_identity", err, max(cell.spacing))

    rng = np.random.default_rng(cfg["seed"])
    chk = cfg["check"]
    if cell.N in (2, 3):
        lo, hi = chk["region"]
        L = np.asarray(cell.periods)
        corners = np.array(np.meshgrid(*[[lo, hi]] * cell.N, indexing="ij")).reshape(cell.N, -1).T
        region = corners * L
        vc = volume_preservation_check(q, region, chk["volume_t"], chk["volume_dt"])
        add("volume_preservation", vc.deviation, 1e-6)
    else:
        add("volume_preservation", math.nan, math.nan, skip=True)

    if phi is not None:
        grad = cell.gradient(phi.values)
        resid = float(np.max(np.abs(np.sum(q.values * grad, axis=0))))
        gmax = float(np.max(np.abs(grad)))
        add("stream_function", resid, max(cell.spacing) ** 2 * scale * max(gmax, 1.0))
        seeds = rng.uniform(0.0, 1.0, size=(chk["seeds"], 2)) * np.asarray(cell.periods)
        rep = first_integral_conservation(q, phi, seeds, chk["T"], chk["dt"],
                                          w_interpolation="spectral")
        add("flow_conservation", rep.max_drift, 1e-8 * max(float(np.abs(phi.values).max()), 1.0))
    else:
        add("stream_function", math.nan, math.nan, skip=True)
        add("flow_conservation", math.nan, math.nan, skip=True)
    return rows


def run_check(cfg, out: Path) -> int:
    rows = property_suite(cfg)
    with open(out / "check.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["property", "status", "value", "threshold"])
        for name, status, value, thr in rows:
            wr.writerow([name, status, repr(value), repr(thr)])
    ok = all(s != "fail" for _, s, _, _ in rows)
    _write_json(out / "check.json", {
        "passed": ok,
        "properties": {n: {"status": s, "value": v, "threshold": t} for n, s, v, t in rows},
        "metadata": _metadata(cfg, flow=cfg["flow"]["kind"]),
    })
    for name, status, value, thr in rows:
        print(f"{status.upper():4s} {name} value={value:.3e} threshold={thr:.3e}")
    return EXIT_OK if ok else EXIT_FAILURE


RUNNERS = {"speed": run_speed, "sweep": run_sweep, "limit": run_limit,
           "varlimit": run_varlimit, "h1dim": run_h1dim, "check": run_check}


def run(cfg: dict) -> int:
    """Execute a resolved configuration; writes artifacts into ``cfg['output']['dir']``."""
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "resolved_config.json", cfg)
    try:
        return RUNNERS[cfg["experiment"]](cfg, out)
    except Exception as exc:
        log.error("%s failed: %s", cfg["experiment"], exc)
        _write_json(out / "error.json", {
            "experiment": cfg["experiment"], "error": type(exc).__name__, "message": str(exc),
            "traceback": traceback.format_exception_only(type(exc), exc),
        })
        return EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frontlab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--workers", type=int, help="parallel worker processes")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    raw = {}
    try:
        if args.config is not None:
            with open(args.config) as fh:
                raw = json.load(fh)
        cfg = resolve_config(raw, args.experiment, args.out, args.workers, args.seed)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"frontlab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
