"""Command-line front end.

Subcommands::

    cirls fit --config model.json
    cirls edf --config model.json --n-sim 1000
    cirls simulate --dgm 1 --gamma-grid -1,0,1 --n-sim 200 --seed 1
    cirls casestudy isotonic_warming

Exit codes: 0 ok, 2 input error, 3 numerical error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import constraints as cn
from .core import Control, ModelSpec, fit, unconstrained_fit
from .datasets import load_gdp, load_temperature
from .dof import expected_df, information_criteria, observed_df
from .errors import CirlsError, DidNotConverge, InputError, NumericalError
from .inference import build_tmvn, sample, summarize
from .simulation import NONDECREASING_STRATA, NONNEG_REGRESSION, DgmConfig, metrics_csv, run_study, summary_json

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
INTERCEPT = "(Intercept)"
DEFAULTS = {
    "inference": {"n_draws": 10000, "seed": 0, "level": 0.95},
    "edf": {"n_sim": 1000},
    "output": {"dir": "out", "formats": ["json", "csv"]},
}


# ---------------------------------------------------------------- helpers

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def config_hash(cfg: dict) -> str:
    blob = json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def read_csv(path, columns) -> dict:
    """Read the named numeric columns; any missing or non-numeric cell is an error."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise InputError(f"cannot read data file {path}: {e.strerror}") from None
    rows = [r for r in rows if r and not r[0].startswith("#")]
    if not rows:
        raise InputError(f"{path}: empty file, a header row is required")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in columns if c not in header]
    if missing:
        raise InputError(f"{path}: column {missing[0]!r} not in header {header}")
    idx = {c: header.index(c) for c in columns}
    out = {c: np.empty(len(rows) - 1) for c in columns}
    for r, row in enumerate(rows[1:], start=1):
        for c, j in idx.items():
            cell = row[j].strip() if j < len(row) else ""
            if cell == "":
                raise InputError(f"{path}: missing value in column {c!r} at data row {r} (line {r + 1})")
            try:
                out[c][r - 1] = float(cell)
            except ValueError:
                raise InputError(f"{path}: non-numeric value {cell!r} in column {c!r} at data row {r} (line {r + 1})") from None
            if not math.isfinite(out[c][r - 1]):
                raise InputError(f"{path}: non-finite value in column {c!r} at data row {r} (line {r + 1})")
    return out


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path, args) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise InputError(f"cannot read config {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"config {path} is not valid JSON: {e.msg} at line {e.lineno}") from None
    if not isinstance(cfg, dict) or "model" not in cfg or "data_path" not in cfg:
        raise InputError(f"config {path} needs 'data_path' and 'model'")
    cfg = _merge(DEFAULTS, cfg)
    data = Path(cfg["data_path"])
    if not data.is_absolute():
        data = path.parent / data
    cfg["data_path"] = str(data)
    if getattr(args, "seed", None) is not None:
        cfg["inference"]["seed"] = args.seed
    if getattr(args, "n_draws", None) is not None:
        cfg["inference"]["n_draws"] = args.n_draws
    if getattr(args, "n_sim", None) is not None:
        cfg["edf"]["n_sim"] = args.n_sim
    if getattr(args, "out", None) is not None:
        cfg["output"]["dir"] = args.out
    return cfg


def model_from_config(cfg: dict) -> ModelSpec:
    m = cfg["model"]
    for key in ("response", "predictors"):
        if key not in m:
            raise InputError(f"model config needs {key!r}")
    preds = list(m["predictors"])
    if len(set(preds)) != len(preds):
        raise InputError("predictor names must be unique")
    extra = [c for c in (m.get("offset"), m.get("weights")) if c]
    if m["response"] in preds:
        raise InputError(f"response {m['response']!r} is also listed as a predictor")
    data = read_csv(cfg["data_path"], [m["response"], *preds, *extra])
    n = data[m["response"]].shape[0]
    intercept = m.get("intercept", True)
    cols = ([np.ones(n)] if intercept else []) + [data[c] for c in preds]
    if not cols:
        raise InputError("model has no coefficients")
    names = ((INTERCEPT,) if intercept else ()) + tuple(preds)
    X = np.column_stack(cols)
    p = X.shape[1]
    cs = cn.combine([cn.from_dict(c, p, names) for c in m.get("constraints", [])], p)
    ctl = Control(**m.get("control", {}))
    return ModelSpec(
        X, data[m["response"]], m.get("family", "gaussian"), cs=cs,
        offset=data[m["offset"]] if m.get("offset") else None,
        weights=data[m["weights"]] if m.get("weights") else None,
        control=ctl, names=names,
    )


# ---------------------------------------------------------------- reports

def fit_report(spec: ModelSpec, seed: int, n_draws: int, level: float, edf_n_sim: int,
               allow_nonconverged: bool = False, keep_draws: bool = False) -> dict:
    """Fit, then add simulation-based inference and df when the unconstrained fit allows it."""
    res = fit(spec)
    if not res.converged and not allow_nonconverged:
        why = "deviance increased" if not res.monotone else f"no convergence in {res.iterations} iterations"
        raise DidNotConverge(f"fit did not converge ({why}); rerun with --allow-nonconverged to keep it")
    p = res.p
    sd = ci_low = ci_high = [None] * p
    inference = {"available": False, "reason": None}
    edf = None
    dist = None
    draws = None
    try:
        fu = unconstrained_fit(spec)
        if not np.isfinite(fu.dispersion):
            raise NumericalError("dispersion of the unconstrained fit is undefined (no residual df)")
        cd = sample(build_tmvn(fu, spec.cs), n_draws=n_draws, seed=seed)
        s = summarize(cd, level=level)
        sd, ci_low, ci_high = s["sd"], s["ci_low"], s["ci_high"]
        inference = {"available": True, "n_draws": n_draws, "level": level, "seed": seed,
                     "diagnostics": cd.diagnostics}
        if keep_draws:
            draws = cd.draws
        if edf_n_sim:
            rep = expected_df(fu, spec.cs, n_sim=edf_n_sim, seed=seed, odf=observed_df(res))
            edf, dist = rep.edf, rep.to_dict()["active_count_distribution"]
    except NumericalError as e:
        inference["reason"] = f"{type(e).__name__}: {e}"
    ic = information_criteria(res, observed_df(res))
    coefs = [
        {"name": nm, "estimate": float(res.beta[j]), "sd": sd[j], "ci_low": ci_low[j], "ci_high": ci_high[j]}
        for j, nm in enumerate(spec.names)
    ]
    report = {
        "software": {"name": "cirls", "version": __version__},
        "seed": seed,
        "family": spec.family.name,
        "n": res.n,
        "p": p,
        "coefficients": coefs,
        "deviance": res.deviance,
        "dispersion": res.dispersion,
        "odf": res.odf,
        "edf": edf,
        "edf_active_count_distribution": dist,
        "aic": ic["aic"],
        "bic": ic["bic"],
        "loglik": ic["loglik"],
        "active_constraints": [{"row": i, "side": side} for i, side in sorted(res.active)],
        "convergence": {"converged": res.converged, "iterations": res.iterations,
                        "monotone_deviance": res.monotone, "deviance_trace": list(res.deviance_trace)},
        "inference": inference,
        "fitted": res.mu,
    }
    return {"report": report, "draws": draws, "result": res}


def coefficients_csv(report: dict, comment: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "estimate", "sd", "ci_low", "ci_high"])
    for c in report["coefficients"]:
        w.writerow([c["name"], _num(c["estimate"]), _num(c["sd"]), _num(c["ci_low"]), _num(c["ci_high"])])
    return buf.getvalue()


def draws_csv(names, draws, comment: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in draws:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _emit(out: Path, stem: str, out_obj: dict, names, seed: int, chash: str, formats, emit_draws: bool):
    comment = f"seed={seed} config_hash={chash} version={__version__}"
    report = dict(out_obj["report"], config_hash=chash)
    if "json" in formats:
        _write(out / f"{stem}.json", dumps(report))
    if "csv" in formats:
        _write(out / f"{stem.replace('fit', 'coefficients')}.csv", coefficients_csv(report, comment))
    if emit_draws and out_obj["draws"] is not None:
        _write(out / f"{stem.replace('fit', 'draws')}.csv", draws_csv(names, out_obj["draws"], comment))


# ---------------------------------------------------------------- commands

def cmd_fit(args) -> int:
    cfg = load_config(args.config, args)
    spec = model_from_config(cfg)
    inf = cfg["inference"]
    chash = config_hash({k: v for k, v in cfg.items() if k != "output"})
    res = fit_report(spec, int(inf["seed"]), int(inf["n_draws"]), float(inf["level"]),
                     int(cfg["edf"]["n_sim"]), args.allow_nonconverged, args.emit_draws)
    _emit(Path(cfg["output"]["dir"]), "fit", res, spec.names, int(inf["seed"]), chash,
          cfg["output"]["formats"], args.emit_draws)
    print(f"wrote {cfg['output']['dir']}/fit.json (odf={res['report']['odf']:g}, deviance={res['report']['deviance']:.6g})")
    return EXIT_OK


def cmd_edf(args) -> int:
    cfg = load_config(args.config, args)
    spec = model_from_config(cfg)
    seed = int(cfg["inference"]["seed"])
    n_sim = int(cfg["edf"]["n_sim"])
    res = fit(spec)
    fu = unconstrained_fit(spec)
    rep = expected_df(fu, spec.cs, n_sim=n_sim, seed=seed, odf=observed_df(res))
    chash = config_hash({k: v for k, v in cfg.items() if k != "output"})
    body = dict(rep.to_dict(), p=spec.p, m=spec.cs.m, config_hash=chash,
                software={"name": "cirls", "version": __version__})
    out = Path(cfg["output"]["dir"])
    _write(out / "edf.json", dumps(body))
    print(f"wrote {out}/edf.json (odf={rep.odf:g}, edf={rep.edf:.4f})")
    return EXIT_OK


def _grid(text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"--gamma-grid must be comma-separated numbers, got {text!r}") from None
    if not vals:
        raise InputError("--gamma-grid is empty")
    return vals


def cmd_simulate(args) -> int:
    dgm = {"1": NONNEG_REGRESSION, "2": NONDECREASING_STRATA}[args.dgm]
    grid = _grid(args.gamma_grid)
    seed = 0 if args.seed is None else args.seed
    n_draws = 2000 if args.n_draws is None else args.n_draws
    cfgs = [DgmConfig(dgm, g, n=args.n, n_sim=args.n_sim, seed=seed, n_draws=n_draws, edf_n_sim=args.edf_n_sim)
            for g in grid]
    results = [run_study(c, workers=args.threads) for c in cfgs]
    chash = config_hash({"dgm": dgm, "grid": grid, "n": args.n, "n_sim": args.n_sim, "seed": seed,
                         "n_draws": n_draws, "edf_n_sim": args.edf_n_sim})
    comment = f"seed={seed} config_hash={chash} version={__version__}"
    out = Path(args.out or "out")
    _write(out / "metrics.csv", metrics_csv(results, comment))
    summ = json.loads(summary_json(results))
    summ.update(seed=seed, config_hash=chash, software={"name": "cirls", "version": __version__})
    _write(out / "summary.json", dumps(summ))
    print(f"wrote {out}/metrics.csv ({len(grid)} gamma values)")
    return EXIT_OK


def isotonic_spec() -> ModelSpec:
    d = load_temperature()
    n = d["year"].shape[0]
    names = tuple(str(y) for y in d["year"])
    return ModelSpec(np.eye(n), d["anomaly"], "gaussian",
                     cs=cn.build_monotone_increasing(n, range(n)), names=names)


def gdp_specs(path=None) -> dict:
    d = load_gdp(path)
    n = d["gdp"].shape[0]
    names = (INTERCEPT, *d["components"], "gdp")
    X = np.column_stack([np.ones(n), d["log_share"], d["gdp"]])
    cs = cn.build_sumzero(len(names), range(1, 7))
    return {sex: ModelSpec(X, d[f"life_{sex}"], "gaussian", cs=cs, names=names) for sex in ("men", "women")}


def cmd_casestudy(args) -> int:
    seed = 0 if args.seed is None else args.seed
    n_draws = DEFAULTS["inference"]["n_draws"] if args.n_draws is None else args.n_draws
    out = Path(args.out or "out")
    if args.name == "isotonic_warming":
        specs = {"": isotonic_spec()}
    else:
        specs = gdp_specs(args.data)
    for label, spec in specs.items():
        res = fit_report(spec, seed, n_draws, 0.95, DEFAULTS["edf"]["n_sim"], args.allow_nonconverged,
                         args.emit_draws)
        rep = res["report"]
        if args.name == "isotonic_warming":
            levels = int(round(rep["odf"]))
            rep["changepoints"] = levels
            rep["level_changes"] = levels - 1
        else:
            comp = [c["estimate"] for c in rep["coefficients"][1:7]]
            rep["component_sum"] = float(np.sum(comp))
        chash = config_hash({"casestudy": args.name, "model": label, "seed": seed, "n_draws": n_draws})
        stem = f"fit_{label}" if label else "fit"
        _emit(out, stem, res, spec.names, seed, chash, ("json", "csv"), args.emit_draws)
        print(f"wrote {out}/{stem}.json (odf={rep['odf']:g})")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
    common.add_argument("--n-draws", type=int, default=None, help="number of TMVN draws")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--emit-draws", action="store_true", help="also write draws.csv")
    common.add_argument("--allow-nonconverged", action="store_true", help="keep fits that did not converge")
    common.add_argument("--threads", type=int, default=1, help="worker processes for simulate")

    ap = argparse.ArgumentParser(prog="cirls", description="Constrained GLM fitting and inference.")
    ap.add_argument("--version", action="version", version=f"cirls {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fit", parents=[common], help="fit a model described by a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_fit)
    p = sub.add_parser("edf", parents=[common], help="expected degrees of freedom")
    p.add_argument("--config", required=True)
    p.add_argument("--n-sim", type=int, default=None)
    p.set_defaults(func=cmd_edf)
    p = sub.add_parser("simulate", parents=[common], help="simulation study over a gamma grid")
    p.add_argument("--dgm", choices=("1", "2"), required=True)
    p.add_argument("--gamma-grid", required=True)
    p.add_argument("--n-sim", type=int, default=200)
    p.add_argument("--n", type=int, default=500, help="observations per dataset")
    p.add_argument("--edf-n-sim", type=int, default=100, help="edf draws per replicate (0 to skip)")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("casestudy", parents=[common], help="bundled case studies")
    p.add_argument("name", choices=("isotonic_warming", "gdp_composition"))
    p.add_argument("--data", default=None, help="data file for gdp_composition")
    p.set_defaults(func=cmd_casestudy)
    return ap


def _join_grid(argv):
    # a grid such as "-1,0,1" looks like an option to argparse; bind it to its flag
    out, it = [], iter(argv)
    for a in it:
        if a == "--gamma-grid":
            out.append("--gamma-grid=" + next(it, ""))
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_grid(argv))
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, CirlsError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
