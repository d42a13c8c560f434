"""Command-line entry point: run, check-null, fit-decay, verify.

Run configuration is a TOML file with the tables ``obstacle``, ``grid``,
``time``, ``coefficients``, ``data``, ``diagnostics`` and ``output``; every
key is optional except ``coefficients``.  Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK = 0
EXIT_NOT_NULL = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

SCHEMA = {
    "obstacle": {"kind": "disk", "r0": 0.3, "fourier_coeffs": []},
    "grid": {"h": 0.05, "R_out": "auto"},
    "time": {"cfl": 0.45, "T_final": 10.0, "sample_every": 20, "truncation": "exact_cone"},
    "coefficients": {"preset": None, "file": None},
    "data": {"epsilon": 0.1, "M0": 3.0, "u0": None, "u1": None},
    "diagnostics": {"R_list": [2.0], "z_max": 2, "fit_window": "auto", "ratios": True},
    "output": {"dir": "out", "snapshots": False},
}

DEFAULT_BUMP = {"center": [1.8, 0.0], "radius": 1.2, "amplitude": 1.0}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class RunConfig:
    """Validated, fully populated configuration (plain nested dict in ``raw``)."""

    raw: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.raw[key]

    def canonical(self) -> dict:
        return copy.deepcopy(self.raw)

    def digest(self) -> str:
        text = json.dumps(self.raw, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def M0(self):
        return self.raw["data"]["M0"]


def _load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    text = blob.decode("utf-8")
    if str(path).endswith(".json") or text.lstrip().startswith("{"):
        data = json.loads(text)
        return data.get("config", data)
    return tomllib.loads(text)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _validate(cfg: dict) -> list[str]:
    """All cross-field checks; returns every violation found."""
    from nullwave import nullforms
    from nullwave.geometry import GeometryError, ObstacleShape, validate_shape
    from nullwave.solver import CFL_CAP

    errs = []
    ob = cfg["obstacle"]
    try:
        shape = ObstacleShape(ob["kind"], float(ob["r0"]), tuple(tuple(c) for c in ob["fourier_coeffs"]))
        rep = validate_shape(shape)
        errs += [f"obstacle: {m}" for m in rep.messages]
        min_rho = rep.min_rho
    except (GeometryError, TypeError, ValueError) as exc:
        errs.append(f"obstacle: {exc}")
        min_rho = None

    h = cfg["grid"]["h"]
    if not _is_num(h) or not h > 0:
        errs.append("grid.h must be a positive number")
        h = None
    elif min_rho is not None and h > min_rho / 4:
        errs.append(f"grid.h = {h} under-resolves the obstacle (need h <= min rho / 4 = {min_rho / 4:.6g})")

    tm = cfg["time"]
    if not _is_num(tm["cfl"]) or not 0 < tm["cfl"] <= CFL_CAP:
        errs.append(f"time.cfl = {tm['cfl']} exceeds the stability cap {CFL_CAP} (must lie in (0, {CFL_CAP}])")
    if not _is_num(tm["T_final"]) or tm["T_final"] < 0:
        errs.append("time.T_final must be a nonnegative number")
    if not isinstance(tm["sample_every"], int) or isinstance(tm["sample_every"], bool) or tm["sample_every"] < 1:
        errs.append("time.sample_every must be a positive integer")
    if tm["truncation"] not in ("exact_cone", "sponge"):
        errs.append(f"time.truncation must be 'exact_cone' or 'sponge', got {tm['truncation']!r}")

    co = cfg["coefficients"]
    M = None
    if (co["preset"] is None) == (co["file"] is None):
        errs.append("coefficients: give exactly one of 'preset' or 'file'")
    elif co["preset"] is not None:
        if co["preset"] not in nullforms.PRESETS:
            errs.append(f"coefficients.preset {co['preset']!r} is not one of {', '.join(nullforms.PRESETS)}")
        else:
            M = nullforms.preset(co["preset"]).M
    else:
        try:
            M = nullforms.read_tensor(co["file"]).M
        except (OSError, ValueError) as exc:
            errs.append(f"coefficients.file: {exc}")

    da = cfg["data"]
    if not _is_num(da["epsilon"]):
        errs.append("data.epsilon must be a number")
    if not _is_num(da["M0"]) or not da["M0"] > 1:
        errs.append("data.M0 must be a number greater than 1")
    if M is not None:
        if da["u0"] is None:
            da["u0"] = [[dict(DEFAULT_BUMP)] for _ in range(M)]
        if da["u1"] is None:
            da["u1"] = [[] for _ in range(M)]
        for key in ("u0", "u1"):
            comps = da[key]
            if not isinstance(comps, list) or len(comps) != M:
                errs.append(f"data.{key} must list bumps for each of the {M} components")
                continue
            for ci, comp in enumerate(comps):
                for bi, b in enumerate(comp):
                    extra = set(b) - {"center", "radius", "amplitude"}
                    if extra:
                        errs.append(f"data.{key}[{ci}][{bi}]: unknown keys {sorted(extra)}")
                    try:
                        c = [float(v) for v in b["center"]]
                        r = float(b["radius"])
                        if len(c) != 2 or not r > 0:
                            raise ValueError
                    except (KeyError, TypeError, ValueError):
                        errs.append(f"data.{key}[{ci}][{bi}]: needs center [x1, x2] and radius > 0")
                        continue
                    if _is_num(da["M0"]) and (c[0] ** 2 + c[1] ** 2) ** 0.5 + r > da["M0"] * (1 + 1e-12):
                        errs.append(f"data.{key}[{ci}][{bi}]: bump leaves |x| <= M0 = {da['M0']}")

    R = cfg["grid"]["R_out"]
    if R != "auto":
        if not _is_num(R) or not R > 1:
            errs.append("grid.R_out must be 'auto' or a number greater than 1")
        elif (tm["truncation"] == "exact_cone" and h is not None and _is_num(tm["T_final"])
              and _is_num(da["M0"]) and R < tm["T_final"] + da["M0"] + 2 * h - 1e-12):
            errs.append(f"grid.R_out = {R} < T_final + M0 + 2h = {tm['T_final'] + da['M0'] + 2 * h}"
                        " required by exact-cone truncation")

    di = cfg["diagnostics"]
    if not isinstance(di["R_list"], list) or not di["R_list"] or not all(_is_num(r) and r > 0 for r in di["R_list"]):
        errs.append("diagnostics.R_list must be a nonempty list of positive radii")
    if not isinstance(di["z_max"], int) or not 1 <= di["z_max"] <= 2:
        errs.append("diagnostics.z_max must be 1 or 2 (two time levels bound the time order)")
    fw = di["fit_window"]
    if fw != "auto" and not (isinstance(fw, list) and len(fw) == 2 and all(_is_num(v) for v in fw)
                            and 0 < fw[0] < fw[1]):
        errs.append("diagnostics.fit_window must be 'auto' or [t_lo, t_hi] with 0 < t_lo < t_hi")
    if not isinstance(di["ratios"], bool):
        errs.append("diagnostics.ratios must be true or false")
    if not isinstance(cfg["output"]["dir"], str):
        errs.append("output.dir must be a string")
    if not isinstance(cfg["output"]["snapshots"], bool):
        errs.append("output.snapshots must be true or false")
    return errs


def config_from_dict(data: dict) -> RunConfig:
    errors = []
    cfg = copy.deepcopy(SCHEMA)
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a table"])
    for section, body in data.items():
        if section not in SCHEMA:
            errors.append(f"unknown section {section!r}")
            continue
        if not isinstance(body, dict):
            errors.append(f"section {section!r} must be a table")
            continue
        for key, val in body.items():
            if key not in SCHEMA[section]:
                errors.append(f"unknown key {section}.{key!r}")
            else:
                cfg[section][key] = val
    if errors:
        raise ConfigError(errors)
    for sec, key in (("grid", "h"), ("time", "cfl"), ("time", "T_final"), ("data", "epsilon"),
                     ("data", "M0"), ("obstacle", "r0")):
        if _is_num(cfg[sec][key]):
            cfg[sec][key] = float(cfg[sec][key])
    if _is_num(cfg["grid"]["R_out"]):
        cfg["grid"]["R_out"] = float(cfg["grid"]["R_out"])
    if isinstance(cfg["diagnostics"]["R_list"], list):
        cfg["diagnostics"]["R_list"] = [float(r) if _is_num(r) else r for r in cfg["diagnostics"]["R_list"]]
    errors = _validate(cfg)
    if errors:
        raise ConfigError(errors)
    if cfg["grid"]["R_out"] == "auto":
        cfg["grid"]["R_out"] = cfg["time"]["T_final"] + cfg["data"]["M0"] + 2 * cfg["grid"]["h"]
    return RunConfig(cfg)


def parse_config(path) -> RunConfig:
    """Read and validate a TOML (or echoed JSON) configuration."""
    try:
        data = _load(path)
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# outputs


def write_atomic(path, data):
    """Write text or bytes to ``path`` through a temporary file and rename."""
    d = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def plot_script(radii) -> str:
    R = f"{sorted(radii)[0]:g}"
    return f"""# gnuplot script for series.csv
set datafile separator ','
set key autotitle columnhead
set logscale xy
set xlabel 't'
set terminal pngcairo size 1000,700
set output 'local_energy.png'
plot 'series.csv' using 1:'local_energy_R{R}' with lines, \\
     'series.csv' using 1:'u_linf_R{R}' with lines, \\
     1/x with lines dashtype 2 title 't^-1'
set output 'sups.png'
unset logscale y
plot 'series.csv' using 1:'S_grad' with lines, \\
     'series.csv' using 1:'S_good' with lines, \\
     'series.csv' using 1:'S_u' with lines
set output 'ghost.png'
unset logscale
plot 'series.csv' using 1:'ghost_cum' with lines
"""


def compute_fits(series, window):
    """Fitted exponents for the local-energy norms, the S_u envelope and the energy."""
    import numpy as np

    from nullwave.diagnostics import fit_decay

    out = {"window": list(window)}
    t = series.column("t")

    def one(name, values):
        try:
            e, s = fit_decay(list(zip(t, values)), window)
            out[name] = {"exponent": e, "stderr": s}
        except ValueError as exc:
            out[name] = {"exponent": None, "stderr": None, "error": str(exc)}

    for R in series.radii:
        lbl = f"{R:g}"
        one(f"local_energy_norm_R{lbl}", np.sqrt(series.column(f"local_energy_R{lbl}")))
        one(f"u_linf_R{lbl}", series.column(f"u_linf_R{lbl}"))
    one("S_u_envelope", np.maximum.accumulate(series.column("S_u")[::-1])[::-1])
    one("energy", series.column("energy"))
    return out


def build_objects(cfg: RunConfig):
    from nullwave import nullforms
    from nullwave.geometry import build_grid, shape_from_config
    from nullwave.initdata import profile_from_dict
    from nullwave.solver import SolverConfig

    shape = shape_from_config(cfg["obstacle"])
    grid = build_grid(shape, cfg["grid"]["h"], cfg["grid"]["R_out"])
    co = cfg["coefficients"]
    tensor = nullforms.preset(co["preset"]) if co["preset"] else nullforms.read_tensor(co["file"])
    profile = profile_from_dict(cfg["data"])
    tm = cfg["time"]
    scfg = SolverConfig(cfl=tm["cfl"], T_final=tm["T_final"], truncation=tm["truncation"],
                        sample_every=tm["sample_every"])
    return grid, tensor, profile, scfg


def cmd_run(cfg: RunConfig, out_dir=None, log=print) -> int:
    from nullwave import fields
    from nullwave.diagnostics import Monitor
    from nullwave.initdata import DataError, h4_norm
    from nullwave.solver import NumericalAbort, run

    out_dir = out_dir or cfg["output"]["dir"]
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        log(f"error: cannot create output directory: {exc}")
        return EXIT_IO
    try:
        grid, tensor, profile, scfg = build_objects(cfg)
    except (ValueError, OSError) as exc:
        log(f"error: {exc}")
        return EXIT_IO
    di = cfg["diagnostics"]
    mon = Monitor(grid, z_max=di["z_max"], radii=di["R_list"], M0=profile.M0, ratios=di["ratios"])
    T = scfg.T_final
    window = (max(T / 5, 1e-9), T) if di["fit_window"] == "auto" else tuple(di["fit_window"])
    meta = {"config": cfg.canonical(), "config_sha256": cfg.digest(),
            "grid": {"n": grid.n, "h": grid.h, "R_out": grid.R_out,
                     "obstacle_nodes": int((grid.mask == 0).sum()),
                     "boundary_nodes": int((grid.mask == 2).sum()),
                     "slaved_nodes": int((grid.slave_dir >= 0).sum())},
            "steps": scfg.time_grid(grid.h)[0], "dt": scfg.time_grid(grid.h)[1],
            "status": "ok"}
    # small-data proxy: the discrete H^4 x H^3 size of (eps u0, eps u1)
    size = h4_norm(profile, grid)
    meta["data_size"] = {"h4_norm": size, "within_unit_ball": size <= 1.0}
    code = EXIT_OK
    state = None
    try:
        _, state = run(grid, tensor, profile, scfg, mon)
    except NumericalAbort as exc:
        meta["status"] = "numerical_abort"
        meta["abort"] = {"message": str(exc),
                         "last_sample_t": mon.series.records[-1].t if mon.series.records else None}
        log(f"numerical abort: {exc}")
        code = EXIT_NUMERICAL
    except DataError as exc:
        log(f"error: {exc}")
        return EXIT_IO
    try:
        write_atomic(os.path.join(out_dir, "series.csv"), mon.series.to_csv())
        fits = compute_fits(mon.series, window) if code == EXIT_OK else {"window": list(window)}
        write_atomic(os.path.join(out_dir, "fits.json"), json.dumps(fits, indent=2, sort_keys=True) + "\n")
        write_atomic(os.path.join(out_dir, "plot.gp"), plot_script(mon.series.radii))
        write_atomic(os.path.join(out_dir, "meta.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
        if cfg["output"]["snapshots"]:
            grid.dump(os.path.join(out_dir, "grid.bin"))
            if state is not None:
                fields.write_snapshot(os.path.join(out_dir, "final.bin"), state)
    except OSError as exc:
        log(f"error: cannot write outputs: {exc}")
        return EXIT_IO
    return code


def cmd_check_null(tensor_path, log=print) -> int:
    from nullwave import nullforms

    try:
        tensor = (nullforms.preset(tensor_path) if tensor_path in nullforms.PRESETS
                  and not os.path.exists(tensor_path) else nullforms.read_tensor(tensor_path))
    except (OSError, ValueError) as exc:
        log(f"error: {exc}")
        return EXIT_IO
    report = nullforms.check_null(tensor)
    for v in report.blocks:
        idx = " ".join(str(i + 1) for i in v.index)
        status = "null" if v.passed else "NOT NULL"
        log(f"block ({idx}): {status}  sampled max |symbol| = {v.sampled_max:.3e}")
        for msg in v.violations:
            log(f"    violated: {msg}")
    if not report.blocks:
        log("zero tensor: trivially null")
    if not report.passed:
        return EXIT_NOT_NULL
    dec = nullforms.decompose_null(tensor)
    log("decomposition:")
    for form, idx, val in dec.nonzero_terms():
        log(f"    c_{form[1:] if form != 'Q0' else '0'}({' '.join(str(i + 1) for i in idx)}) = {val:g}  [{form}]")
    return EXIT_OK


def cmd_fit_decay(series_path, column, t_lo, t_hi, log=print) -> int:
    from nullwave.diagnostics import fit_decay, read_series_csv

    try:
        data = read_series_csv(series_path)
    except (OSError, ValueError) as exc:
        log(f"error: {exc}")
        return EXIT_IO
    if column not in data:
        log(f"error: column {column!r} not in {series_path} (have {', '.join(data)})")
        return EXIT_IO
    if "t" not in data:
        log(f"error: {series_path} has no 't' column")
        return EXIT_IO
    try:
        e, s = fit_decay(list(zip(data["t"], data[column])), (t_lo, t_hi))
    except ValueError as exc:
        log(f"error: {exc}")
        return EXIT_NUMERICAL
    log(f"{e:.3f} +/- {s:.3f}")
    return EXIT_OK


def cmd_verify(full=False, log=print) -> int:
    from nullwave.acceptance import run_all

    results = run_all(full=full)
    width = max(len(r.name) for r in results)
    for r in results:
        log(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NOT_NULL


def set_threads(n):
    import numba

    if n is None:
        env = os.environ.get("NULLWAVE_THREADS")
        n = int(env) if env else None
    if n is not None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="nullwave", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: NULLWAVE_THREADS or all cores)")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="integrate a configured problem and write diagnostics")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override output.dir")
    p = sub.add_parser("check-null", help="test a coefficient tensor for the null condition")
    p.add_argument("tensor", help="tensor text file or preset name")
    p = sub.add_parser("fit-decay", help="fit a power law to a series.csv column")
    p.add_argument("series")
    p.add_argument("column")
    p.add_argument("t_lo", type=float)
    p.add_argument("t_hi", type=float)
    p = sub.add_parser("verify", help="run the property battery and print a pass/fail table")
    p.add_argument("--full", action="store_true", help="use the full acceptance scales")
    args = ap.parse_args(argv)
    try:
        set_threads(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.cmd == "run":
        try:
            cfg = parse_config(args.config)
        except ConfigError as exc:
            print(exc, file=sys.stderr)
            return EXIT_IO
        return cmd_run(cfg, args.out)
    if args.cmd == "check-null":
        return cmd_check_null(args.tensor)
    if args.cmd == "fit-decay":
        return cmd_fit_decay(args.series, args.column, args.t_lo, args.t_hi)
    return cmd_verify(args.full)


if __name__ == "__main__":
    sys.exit(main())
