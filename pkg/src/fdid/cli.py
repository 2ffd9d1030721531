"""Command-line interface: simulate, estimate, diagnostics, fixture.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. On failure a JSON error record goes to stderr (and to
``error.json`` in the output directory when one was given).
"""
import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from importlib import metadata
from typing import Dict, List, Optional, Sequence

import numpy as np

from fdid.core import FunctionalSample, build_grid, grid_from_points
from fdid.estimators import cf_dr_estimate, ipw_estimate, naive_did, or_estimate
from fdid.exceptions import FdidError, IngestionError, InvalidArgument, InvalidDataset
from fdid.inference import (BootstrapConfig, cluster_multiplier_bootstrap, multiplier_bootstrap,
                            pointwise_ci, scb)
from fdid.learners import CrossfitConfig, ForestParams, crossfit_nuisances, make_folds
from fdid.reconstruct import reconstruct_deltas
from fdid import sim

FORMAT_VERSION = 1
ESTIMATE_METHODS = ("cf_dr", "or", "ipw", "naive")
DENSE_MIN_POINTS = 20


# ------------------------------------------------------------------ config

@dataclass
class RunConfig:
    command: str
    scenario: Optional[str] = None
    outcomes: Optional[str] = None
    units: Optional[str] = None
    placebo_outcomes: List[str] = field(default_factory=list)
    placebo_units: Optional[str] = None
    n: int = 200
    R: int = 200
    K: int = 5
    B: int = 1000
    alpha: float = 0.05
    seed: int = 0
    clip: float = 0.01
    methods: List[str] = field(default_factory=list)
    multiplier: str = "normal"
    grid_points: Optional[int] = None
    traffic_hours: List[float] = field(default_factory=lambda: [7.0, 19.0])
    out: str = "."

    def validate(self):
        if self.K < 2:
            raise InvalidArgument("--k must be at least 2")
        if self.B < 100:
            raise InvalidArgument("--b must be at least 100")
        if not 0 < self.alpha < 1:
            raise InvalidArgument("--alpha must lie in (0, 1)")
        if not 0 < self.clip < 0.5:
            raise InvalidArgument("--clip must lie in (0, 0.5)")
        if self.multiplier not in ("normal", "rademacher"):
            raise InvalidArgument("--multiplier must be normal or rademacher")
        if self.grid_points is not None and self.grid_points < 2:
            raise InvalidArgument("--grid-points must be at least 2")
        if self.n < 1 or self.R < 1:
            raise InvalidArgument("--n and --r must be positive")
        lo, hi = self.traffic_hours
        if lo > hi:
            raise InvalidArgument("--traffic-hours must be an increasing pair")

    def echo(self) -> dict:
        d = asdict(self)
        # the output location does not affect results; keep reruns byte-identical
        d.pop("out")
        d["format_version"] = FORMAT_VERSION
        return d


# ---------------------------------------------------------------- file io

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def atomic_write(path: str, text: str):
    """Write through a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, columns, rows):
    atomic_write(path, csv_text(columns, rows))


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else None
    return o


def write_json(path, obj):
    atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def versions() -> dict:
    out = {}
    for pkg in ("fdid", "numpy", "scipy"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


# --------------------------------------------------------------- ingestion

def _read_csv(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise InvalidDataset(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestionError([f"{path}: empty file"])
    header = [h.strip() for h in rows[0]]
    return header, [(i + 2, r) for i, r in enumerate(rows[1:]) if any(c.strip() for c in r)]


def _num(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("non-finite")
    return v


def ingest_panel(outcomes_csv: str, units_csv: str):
    """Read the long-format outcomes file and the per-unit file.

    Returns ``(samples, covariate_names)``. Every schema violation is
    collected and reported together; nothing is returned on error.
    """
    o_header, o_rows = _read_csv(outcomes_csv)
    u_header, u_rows = _read_csv(units_csv)
    outcome_rows, unit_rows, problems = [], [], []
    need = ("unit_id", "period", "time", "value")
    missing = [c for c in need if c not in o_header]
    if missing:
        raise IngestionError([f"outcomes: missing columns {missing}"])
    col = {c: o_header.index(c) for c in need}
    for line, r in o_rows:
        if len(r) != len(o_header):
            problems.append(f"outcomes row {line}: expected {len(o_header)} fields, got {len(r)}")
            continue
        try:
            period = int(_num(r[col["period"]]))
            if period not in (0, 1) or _num(r[col["period"]]) != period:
                raise ValueError
        except ValueError:
            problems.append(f"outcomes row {line}: period must be 0 or 1")
            continue
        try:
            t, v = _num(r[col["time"]]), _num(r[col["value"]])
        except ValueError:
            problems.append(f"outcomes row {line}: time and value must be finite numbers")
            continue
        outcome_rows.append({"unit_id": r[col["unit_id"]].strip(), "period": period,
                             "time": t, "value": v, "_line": line})
    for c in ("unit_id", "D"):
        if c not in u_header:
            raise IngestionError(problems + [f"units: missing column {c!r}"])
    for line, r in u_rows:
        if len(r) != len(u_header):
            problems.append(f"units row {line}: expected {len(u_header)} fields, got {len(r)}")
            continue
        rec = {h: r[i].strip() for i, h in enumerate(u_header)}
        rec["_line"] = line
        unit_rows.append(rec)
    return rows_to_samples(outcome_rows, unit_rows, problems)


def rows_to_samples(outcome_rows: Sequence[dict], unit_rows: Sequence[dict],
                    problems: Optional[List[str]] = None):
    """Validate and join in-memory rows into FunctionalSamples.

    Covariate columns are every units column other than ``unit_id``, ``D``
    and ``cluster_id``; columns named ``cat:<name>`` are one-hot encoded
    with the first sorted level dropped. ``problems`` carries issues already
    found while parsing so that all of them are reported together.
    """
    problems = list(problems or [])
    if not unit_rows:
        raise IngestionError(problems + ["units: no rows"])
    header = [k for k in unit_rows[0] if not k.startswith("_")]
    cov_cols = [h for h in header if h not in ("unit_id", "D", "cluster_id")]
    cat_cols = [h for h in cov_cols if h.startswith("cat:")]
    levels = {c: sorted({str(u[c]) for u in unit_rows}) for c in cat_cols}
    names = []
    for c in cov_cols:
        if c in levels:
            names += [f"{c[4:]}={lv}" for lv in levels[c][1:]]
        else:
            names.append(c)

    units = {}
    for pos, u in enumerate(unit_rows):
        line = u.get("_line", pos + 2)
        uid = str(u["unit_id"])
        if uid in units:
            problems.append(f"units row {line}: duplicate unit_id {uid!r}")
            continue
        try:
            D = int(_num(u["D"]))
            if D not in (0, 1) or _num(u["D"]) != D:
                raise ValueError
        except (ValueError, TypeError):
            problems.append(f"units row {line}: D must be 0 or 1")
            continue
        x = []
        bad = False
        for c in cov_cols:
            if c in levels:
                x += [1.0 if str(u[c]) == lv else 0.0 for lv in levels[c][1:]]
                continue
            try:
                x.append(_num(u[c]))
            except (ValueError, TypeError):
                problems.append(f"units row {line}: covariate {c!r} is not a finite number")
                bad = True
        if bad:
            continue
        cluster = u.get("cluster_id")
        cluster = None if cluster in (None, "") else str(cluster)
        units[uid] = (D, np.array(x, dtype=float), cluster)

    obs: Dict[str, Dict[int, list]] = {}
    seen = {}
    orphans = set()
    for pos, r in enumerate(outcome_rows):
        line = r.get("_line", pos + 2)
        uid = str(r["unit_id"])
        key = (uid, int(r["period"]), float(r["time"]))
        if key in seen:
            problems.append(f"outcomes row {line}: duplicate (unit_id, period, time) "
                            f"{key}, first seen in row {seen[key]}")
            continue
        seen[key] = line
        if uid not in units and uid not in orphans:
            orphans.add(uid)
            problems.append(f"outcomes row {line}: unit_id {uid!r} absent from units")
        obs.setdefault(uid, {0: [], 1: []})[int(r["period"])].append(
            (float(r["time"]), float(r["value"])))
    for uid in units:
        if uid not in obs:
            problems.append(f"units: unit_id {uid!r} has no outcome rows")
            continue
        for period in (0, 1):
            if not obs[uid][period]:
                problems.append(f"outcomes: unit_id {uid!r} has no period-{period} rows")
    if problems:
        raise IngestionError(problems)
    samples = []
    for uid, (D, x, cluster) in units.items():
        samples.append(FunctionalSample(uid, D, x, np.array(obs[uid][0]), np.array(obs[uid][1]),
                                        cluster))
    return samples, names


def write_panel(outcome_rows, unit_rows, outcomes_path, units_path):
    """Write rows in the ingestion schema (the fixture writer)."""
    write_csv(outcomes_path, ["unit_id", "period", "time", "value"], outcome_rows)
    cols = [k for k in unit_rows[0] if not k.startswith("_")]
    write_csv(units_path, cols, unit_rows)


# ------------------------------------------------------------- estimation

def choose_regime(samples, grid_points):
    """Shared observation times give a raw grid; otherwise dense or sparse."""
    times = [s.obs_pre[:, 0] for s in samples] + [s.obs_post[:, 0] for s in samples]
    t0 = times[0]
    shared = all(t.size == t0.size and np.array_equal(t, t0) for t in times)
    lo = min(float(t.min()) for t in times)
    hi = max(float(t.max()) for t in times)
    if hi <= lo:
        raise InvalidDataset("observation times span a single point")
    if shared and (grid_points is None or grid_points == t0.size):
        return grid_from_points(t0, (lo, hi)), "raw"
    grid = build_grid(grid_points or 101, lo, hi)
    if min(t.size for t in times) >= DENSE_MIN_POINTS:
        return grid, "dense"
    return grid, "sparse"


def estimate_panel(samples, cfg: RunConfig, methods=None):
    """Reconstruct, cross-fit and estimate; returns a result dict."""
    methods = list(methods or cfg.methods or ["cf_dr", "or", "ipw", "naive"])
    if "cf_dr" not in methods:
        methods.insert(0, "cf_dr")
    grid, regime = choose_regime(samples, cfg.grid_points)
    data = reconstruct_deltas(samples, grid, regime)
    clusters = data.cluster_ids
    if clusters is not None and len(set(clusters.tolist())) >= cfg.K:
        folds = make_folds(data.n, cfg.K, cfg.seed, clusters=clusters)
    else:
        folds = make_folds(data.n, cfg.K, cfg.seed)
    nuis = crossfit_nuisances(
        data, folds, "flexible",
        CrossfitConfig(clip=cfg.clip, forest=ForestParams(seed=cfg.seed),
                       need_mu1="or" in methods))
    fns = {"cf_dr": lambda: cf_dr_estimate(data, nuis), "or": lambda: or_estimate(data, nuis),
           "ipw": lambda: ipw_estimate(data, nuis), "naive": lambda: naive_did(data)}
    results = {m: fns[m]() for m in ESTIMATE_METHODS if m in methods}
    cf = results["cf_dr"]
    boot = BootstrapConfig(cfg.B, cfg.multiplier, cfg.seed, clusters is not None)
    if clusters is not None and len(set(clusters.tolist())) >= 2:
        crit = cluster_multiplier_bootstrap(cf.phi, clusters, cf.sigma_hat, boot, cfg.alpha)
    else:
        crit = multiplier_bootstrap(cf.phi, cf.sigma_hat, boot, cfg.alpha)
    return {"grid": grid, "regime": regime, "data": data, "results": results,
            "band": scb(cf, crit, cfg.alpha), "crit": crit}


def traffic_mask(points, hours):
    return (points >= hours[0]) & (points <= hours[1])


def run_estimate(cfg: RunConfig):
    samples, names = ingest_panel(cfg.outcomes, cfg.units)
    est = estimate_panel(samples, cfg)
    grid, data, results, band = est["grid"], est["data"], est["results"], est["band"]
    mask = traffic_mask(grid.points, cfg.traffic_hours)
    per_method = {}
    for m, res in results.items():
        pw = pointwise_ci(res, cfg.alpha)
        per_method[m] = {
            "tau": res.tau_hat, "sigma": res.sigma_hat, "lo_pt": pw.lower, "hi_pt": pw.upper,
            "average": float(res.tau_hat.mean()),
            "traffic_average": float(res.tau_hat[mask].mean()) if mask.any() else None,
        }
    payload = {
        "format_version": FORMAT_VERSION,
        "config": cfg.echo(),
        "versions": versions(),
        "regime": est["regime"],
        "grid": grid.points,
        "n_units": data.n,
        "n_treated": int(data.D.sum()),
        "n_clusters": None if data.cluster_ids is None else len(set(data.cluster_ids.tolist())),
        "covariates": names,
        "recon_rmse_mean": float(np.mean(data.recon_rmse)),
        "methods": per_method,
        "band": {"kind": band.kind, "alpha": band.alpha, "critical_value": band.critical_value,
                 "lo": band.lower, "hi": band.upper},
    }
    pw = pointwise_ci(results["cf_dr"], cfg.alpha)
    rows = [{"t": t, "tau": c, "lo_pt": a, "hi_pt": b, "lo_scb": lo, "hi_scb": hi}
            for t, c, a, b, lo, hi in zip(grid.points, band.center, pw.lower, pw.upper,
                                          band.lower, band.upper)]
    os.makedirs(cfg.out, exist_ok=True)
    write_json(os.path.join(cfg.out, "estimate.json"), payload)
    write_csv(os.path.join(cfg.out, "band.csv"),
              ["t", "tau", "lo_pt", "hi_pt", "lo_scb", "hi_scb"], rows)
    return payload


# ------------------------------------------------------------ diagnostics

def placebo_metrics(tau) -> dict:
    """Errors of a placebo estimate against a zero truth."""
    tau = np.asarray(tau, dtype=float)
    return {"abs_avg_bias": float(abs(tau.mean())), "mab": float(np.abs(tau).mean()),
            "rmse": float(np.sqrt(np.mean(tau ** 2))), "superr": float(np.abs(tau).max())}


def signal_metrics(signal: float, placebo_rmse: float) -> dict:
    signal = abs(float(signal))
    ratio = signal / placebo_rmse if placebo_rmse > 0 else math.inf
    return {"signal": signal, "signal_rmse": ratio, "net_signal": signal - placebo_rmse}


def run_diagnostics(cfg: RunConfig):
    if not cfg.placebo_outcomes:
        raise InvalidArgument("diagnostics needs at least one --placebo-outcomes file")
    samples, _ = ingest_panel(cfg.outcomes, cfg.units)
    main = estimate_panel(samples, cfg)
    mask = traffic_mask(main["grid"].points, cfg.traffic_hours)
    if not mask.any():
        raise InvalidArgument("the traffic window contains no grid points")
    placebos = []
    for path in cfg.placebo_outcomes:
        ps, _ = ingest_panel(path, cfg.placebo_units or cfg.units)
        placebos.append(estimate_panel(ps, cfg))
    rows = []
    for m, res in main["results"].items():
        per = [placebo_metrics(p["results"][m].tau_hat) for p in placebos]
        avg = {k: float(np.mean([d[k] for d in per])) for k in per[0]}
        sig = signal_metrics(res.tau_hat[mask].mean(), avg["rmse"])
        rows.append({"method": m, **avg, **sig})
    cols = ["method", "abs_avg_bias", "mab", "rmse", "superr", "signal", "signal_rmse",
            "net_signal"]
    os.makedirs(cfg.out, exist_ok=True)
    write_csv(os.path.join(cfg.out, "diagnostics.csv"), cols, rows)
    write_json(os.path.join(cfg.out, "diagnostics.json"),
               {"format_version": FORMAT_VERSION, "config": cfg.echo(), "versions": versions(),
                "n_placebos": len(placebos), "rows": rows})
    return rows


# -------------------------------------------------------------- simulation

SUMMARY_COLUMNS = ["scenario", "method", "n", "bias", "mab", "ise", "superr"]


def run_simulate(cfg: RunConfig):
    if not cfg.scenario:
        raise InvalidArgument("simulate needs --scenario")
    overrides = dict(n=cfg.n, R=cfg.R, seed=cfg.seed, K=cfg.K, B=cfg.B, alpha=cfg.alpha,
                     clip=cfg.clip, multiplier=cfg.multiplier)
    if cfg.grid_points is not None:
        overrides["M"] = cfg.grid_points
    spec = sim.scenario(cfg.scenario, **overrides)
    report = sim.run_scenario(spec, cfg.methods or sim.METHODS)
    out = cfg.out
    os.makedirs(os.path.join(out, "plotdata"), exist_ok=True)
    write_csv(os.path.join(out, "summary_metrics.csv"), SUMMARY_COLUMNS, report.summary())
    cover_keys = [f"cover_{t:g}" for t in sim.EVAL_POINTS]
    write_csv(os.path.join(out, "inference.csv"),
              ["scenario", "method", "n", *cover_keys, "ci_width", "scb_cover", "band_width"],
              report.coverage())
    write_csv(os.path.join(out, "per_replication.csv"),
              ["replication", "method", "bias", "mab", "ise", "superr", *cover_keys,
               "ci_width", "scb_cover", "band_width", "crit"],
              report.per_replication())
    t = report.grid.points
    means = report.mean_curves()
    write_csv(os.path.join(out, "plotdata", "mean_curves.csv"), ["t", "truth", *report.methods],
              [{"t": t[i], **{k: v[i] for k, v in means.items()}} for i in range(t.size)])
    rmse = report.rmse_curves()
    write_csv(os.path.join(out, "plotdata", "rmse_curves.csv"), ["t", *report.methods],
              [{"t": t[i], **{k: v[i] for k, v in rmse.items()}} for i in range(t.size)])
    band = report.mean_band()
    if band is not None:
        write_csv(os.path.join(out, "plotdata", "band_curves.csv"),
                  ["t", "truth", "cf_dr", "lo_scb", "hi_scb"],
                  [{"t": t[i], "truth": means["truth"][i], "cf_dr": means["cf_dr"][i],
                    "lo_scb": band[0][i], "hi_scb": band[1][i]} for i in range(t.size)])
    write_json(os.path.join(out, "run.json"),
               {"format_version": FORMAT_VERSION, "config": cfg.echo(),
                "scenario": sim.spec_dict(spec), "versions": versions(),
                "replications": spec.R, "failures": report.failures,
                "failure_reasons": sorted({r.failed for r in report.replications if r.failed})})
    return report


def run_fixture(cfg: RunConfig):
    out = cfg.out
    o, u = sim.ulez_fixture(seed=cfg.seed)
    write_panel(o, u, os.path.join(out, "outcomes.csv"), os.path.join(out, "units.csv"))
    po, pu = sim.ulez_fixture(effect=0.0, seed=cfg.seed + 1)
    write_panel(po, pu, os.path.join(out, "placebo_outcomes.csv"),
                os.path.join(out, "placebo_units.csv"))


# --------------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error(InvalidArgument(message), None)
        sys.exit(2)


def _hours(s):
    try:
        lo, hi = (float(v) for v in s.split("-"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected LO-HI, e.g. 7-19") from exc
    return [lo, hi]


def _methods(s):
    items = [m.strip() for m in s.split(",") if m.strip()]
    bad = [m for m in items if m not in sim.METHODS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown methods: {', '.join(bad)}")
    return items


def build_parser():
    p = _Parser(prog="fdid", description="Functional difference-in-differences")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--k", type=int, default=5, help="cross-fitting folds")
        sp.add_argument("--b", type=int, default=1000, help="bootstrap draws")
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--clip", type=float, default=0.01, help="propensity clipping bound")
        sp.add_argument("--methods", type=_methods, default=None,
                        help="comma list of cf_dr,or,ipw,naive,oracle")
        sp.add_argument("--multiplier", default="normal", choices=["normal", "rademacher"])
        sp.add_argument("--grid-points", type=int, default=None)
        sp.add_argument("--out", default=".")

    s = sub.add_parser("simulate", help="Monte Carlo study of one scenario")
    s.add_argument("--scenario", required=True, choices=list(sim.SCENARIOS))
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--r", type=int, default=200)
    common(s)

    for name, helptext in (("estimate", "estimate the effect curve from panel files"),
                           ("diagnostics", "placebo diagnostics against a zero truth")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--outcomes", required=True)
        e.add_argument("--units", required=True)
        e.add_argument("--traffic-hours", type=_hours, default=[7.0, 19.0])
        if name == "diagnostics":
            e.add_argument("--placebo-outcomes", nargs="+", required=True)
            e.add_argument("--placebo-units", default=None)
        common(e)

    f = sub.add_parser("fixture", help="write the synthetic hourly panel fixture")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default=".")
    return p


def config_from_args(a) -> RunConfig:
    cfg = RunConfig(command=a.command, out=a.out, seed=a.seed)
    for attr, key in (("scenario", "scenario"), ("n", "n"), ("R", "r"), ("K", "k"), ("B", "b"),
                      ("alpha", "alpha"), ("clip", "clip"), ("multiplier", "multiplier"),
                      ("grid_points", "grid_points"), ("outcomes", "outcomes"),
                      ("units", "units"), ("placebo_outcomes", "placebo_outcomes"),
                      ("placebo_units", "placebo_units"), ("traffic_hours", "traffic_hours")):
        if hasattr(a, key) and getattr(a, key) is not None:
            setattr(cfg, attr, getattr(a, key))
    if getattr(a, "methods", None):
        cfg.methods = a.methods
    cfg.validate()
    if cfg.command in ("estimate", "diagnostics") and "oracle" in cfg.methods:
        raise InvalidArgument("the oracle estimator needs simulated truths")
    return cfg


def _emit_error(exc, out):
    rec = {"error": type(exc).__name__, "message": str(exc),
           "exit_code": getattr(exc, "exit_code", 4)}
    if isinstance(exc, IngestionError):
        rec["problems"] = exc.problems
    if getattr(exc, "unit_ids", None):
        rec["unit_ids"] = [str(u) for u in exc.unit_ids]
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    if out:
        try:
            write_json(os.path.join(out, "error.json"), rec)
        except OSError:
            pass


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    out = getattr(args, "out", None)
    try:
        cfg = config_from_args(args)
        run = {"simulate": run_simulate, "estimate": run_estimate,
               "diagnostics": run_diagnostics, "fixture": run_fixture}[cfg.command]
        run(cfg)
    except FdidError as exc:
        _emit_error(exc, out)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        _emit_error(exc, out)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
