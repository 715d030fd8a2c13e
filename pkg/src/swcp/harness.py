"""Experiment configs, run manifests and the six experiment commands.

A config is a flat ``key = value`` text file (``#`` starts a comment).
Every key is listed in ``SCHEMA`` with its type and default; unknown keys
and malformed values are rejected. Each command writes ``manifest.json``
before computing anything, then its CSV/JSON outputs, all listed in the
manifest. Outputs depend only on the config (minus ``out`` and
``workers``) and the code, so reruns are byte-identical.
"""

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, engine
from .analysis import (
    Classifier,
    bisect_critical,
    comb_brw_critical,
    dump_json,
    estimate_growth_rate,
    lambda2_brw_lower_bound,
    limiting_quadratic_root,
    strong_survival_boundary,
)
from .dynamics import GraphSpec, simulate_batch
from .errors import BracketError, DomainError, InvalidParameter
from .topology import ModelParams

# --------------------------------------------------------------- config


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(float(x)) for x in text.split(",") if x.strip()]


def _strs(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _pairs(text):
    out = []
    for item in _strs(text):
        a, b = item.split(":")
        out.append((int(a), int(b)))
    return out


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


# key -> (parser, default, help)
SCHEMA = {
    "command": (str, None, "subcommand this config is for"),
    "experiment": (str, None, "experiment id; feeds the RNG key path"),
    "seed": (_int, 0, "master seed"),
    "workers": (_int, 1, "process-pool size (does not change results)"),
    "out": (str, "out", "output directory"),
    "alpha": (float, None, "short-range mass"),
    "beta": (float, None, "long-range probability"),
    "lam": (float, None, "alpha + beta (with r, instead of alpha/beta)"),
    "r": (float, 2.0, "alpha / beta"),
    "gamma": (float, 0.0, "random-vertex probability (small world only)"),
    "m": (_int, 1, "short-range radius"),
    "d": (_int, 1, "dimension"),
    "strict": (_bool, True, "require alpha > beta > 0"),
    "family": (str, "big", "graph family: big, comb or small"),
    "R": (_int, None, "torus side for a single small world"),
    "R_list": (_ints, [], "torus sides"),
    "graph_seed": (_int, None, "fixed small-world matching seed (default: one graph per replicate)"),
    "r_list": (_floats, [1.0, 2.0, 4.0], "ratios for critical-values"),
    "M_list": (_ints, [], "complete-graph sizes for critical-values"),
    "T": (_int, 300, "horizon"),
    "window": (_int, None, "return window (default T/5)"),
    "replicates": (_int, 1000, "replicates per estimate"),
    "max_replicates": (_int, None, "cap for tie doubling (default 4x replicates)"),
    "threshold": (float, 0.02, "classifier threshold"),
    "tol": (float, 0.02, "bisection width"),
    "classifiers": (_strs, ["survival", "return"], "phase-gap classifiers to run"),
    "bracket_survival": (_floats, [0.95, 1.15], "lambda bracket for the survival classifier"),
    "bracket_return": (_floats, [1.0, 1.6], "lambda bracket for the return classifier"),
    "survive_cap": (_int, 1000, "population at which a run counts as surviving"),
    "trunc_cap": (_int, 500, "particle cap for the return classifier (lower-bound process)"),
    "mode": (str, "cp", "cp or brw"),
    "horizon": (_int, 20000, "time cap for all-ones runs"),
    "gap_summary": (str, None, "phase-gap summary.json supplying lambda1"),
    "lambda_margin": (float, 0.02, "added to the certified lambda1 upper end"),
    "control_lam": (float, 0.5, "subcritical control lambda for metastability"),
    "lambda_grid": (_floats, [0.6, 1.8], "lambdas for growth-rate"),
    "t_min": (_int, 5, "first time in the growth fit"),
    "t_max": (_int, 15, "last time in the growth fit"),
    "pairs": (_pairs, [(5, 5), (5, 10)], "(t,s) pairs for submultiplicativity residuals"),
    "n_boot": (_int, 400, "bootstrap resamples"),
    "start": (str, "origin", "simulate: origin or all"),
    "stride": (_int, 1, "trajectory recording stride"),
    "replicate": (_int, 0, "simulate: replicate index for the trajectory dump"),
    "max_sites": (_int, 10**7, "resource guard: largest allowed population"),
}

# keys that do not influence any output
_VOLATILE = ("out", "workers")


class ConfigError(InvalidParameter):
    """Malformed or inconsistent configuration."""


@dataclass
class ExperimentConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def canonical(self):
        """Sorted ``key = value`` text of every output-relevant setting."""
        lines = []
        for k in sorted(self.values):
            if k in _VOLATILE:
                continue
            lines.append(f"{k} = {self.values[k]!r}")
        return "\n".join(lines) + "\n"

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def params(self, lam=None, gamma=None):
        """ModelParams from ``alpha``/``beta`` or ``lam``/``r`` (``lam`` argument overrides)."""
        g = self.gamma if gamma is None else gamma
        if lam is not None or (self.lam is not None and self.alpha is None):
            lam = self.lam if lam is None else lam
            return ModelParams.from_lambda(lam, self.r, gamma=g, m=self.m, d=self.d, strict=self.strict)
        if self.alpha is None or self.beta is None:
            raise ConfigError("set either alpha and beta, or lam and r")
        return ModelParams(self.alpha, self.beta, g, self.m, self.d, self.strict)

    def graph(self):
        return GraphSpec(self.family, R=self.R, graph_seed=self.graph_seed)


def parse_config_text(text, overrides=None):
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        raw[k] = v
    raw.update(overrides or {})
    values = {k: spec[1] for k, spec in SCHEMA.items()}
    for k, v in raw.items():
        if k not in SCHEMA:
            raise ConfigError(f"unknown config key {k!r}")
        if v is None:
            continue
        try:
            values[k] = SCHEMA[k][0](v) if isinstance(v, str) else v
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k!r}: {exc}") from None
    return ExperimentConfig(values)


def load_config(path, overrides=None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, overrides)


def preset_path(name):
    """Path of a shipped preset config."""
    p = resources.files("swcp") / "presets" / f"{name}.cfg"
    if not p.is_file():
        raise ConfigError(f"no preset named {name!r}")
    return str(p)


def preset_names():
    return sorted(p.name[:-4] for p in (resources.files("swcp") / "presets").iterdir() if p.name.endswith(".cfg"))


# -------------------------------------------------------------- manifest


def code_version():
    """Package version plus a digest of the package sources."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.rglob("*")):
        if p.suffix in (".py", ".cfg") and "__pycache__" not in p.parts:
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


SEED_RULE = (
    "replicate key = combine(combine(combine(ROOT_TAG, seed), blake2b64(experiment)), replicate); "
    "uniform(t, vertex, particle, channel) = unit(combine(combine(combine(combine(key, t), vertex_key), particle), channel))"
)


def write_manifest(out_dir, cfg, command, outputs):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": cfg.hash(),
        "code_version": code_version(),
        "timestamp": _timestamp(),
        "seed_rule": SEED_RULE,
        "config": {k: v for k, v in sorted(cfg.values.items()) if k not in _VOLATILE},
        "outputs": sorted(outputs),
    }
    dump_json(_jsonable(manifest), out_dir / "manifest.json")
    return manifest


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        x = float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _summary(out_dir, cfg, payload):
    body = {"manifest": "manifest.json", "config_hash": cfg.hash()}
    body.update(payload)
    body = _jsonable(body)
    dump_json(body, out_dir / "summary.json")
    return body


def _experiment(cfg, default):
    return cfg.experiment or default


# -------------------------------------------------------------- commands


def cmd_critical_values(cfg, out_dir):
    """Comb threshold, K_M lower bounds and the strong-survival boundary per ratio."""
    write_manifest(out_dir, cfg, "critical-values", ["critical_values.csv", "boundary_curve.csv", "summary.json"])
    rows, table = [], []
    for r in cfg.r_list:
        closed = comb_brw_critical(r)
        quad = limiting_quadratic_root(r)
        strong = strong_survival_boundary(r)
        if not cfg.M_list:
            rows.append([r, "", closed, quad, "", "", "", strong, ""])
            table.append({"r": r, "comb_critical": closed, "quadratic_root": quad, "strong_boundary": strong})
        for M in cfg.M_list:
            try:
                lb = lambda2_brw_lower_bound(r, M, detail=True)
                rows.append([r, M, closed, quad, lb.value, lb.active, lb.F_at_value, strong, ""])
                table.append({"r": r, "M": M, "comb_critical": closed, "quadratic_root": quad,
                              "lambda2_lower_bound": lb.value, "active": lb.active, "strong_boundary": strong})
            except (DomainError, InvalidParameter) as exc:
                rows.append([r, M, closed, quad, "", "", "", strong, str(exc)])
                table.append({"r": r, "M": M, "error": str(exc)})
    _write_csv(
        out_dir / "critical_values.csv",
        ["r", "M", "comb_critical", "quadratic_root", "lambda2_lower_bound", "active", "F_at_bound", "strong_boundary", "error"],
        rows,
    )
    curve = []
    for beta in np.linspace(0.02, 0.98, 49):
        beta = float(beta)
        alpha = 1.0 - beta * beta
        curve.append([beta, alpha, alpha + beta, alpha / beta])
    _write_csv(out_dir / "boundary_curve.csv", ["beta", "alpha", "lambda", "r"], curve)
    return _summary(out_dir, cfg, {"command": "critical-values", "rows": table})


def cmd_phase_gap(cfg, out_dir, workers=1):
    """Bisect the survival and return classifiers on lambda at fixed r."""
    outputs = ["summary.json"] + [f"trace_{c}.csv" for c in cfg.classifiers]
    write_manifest(out_dir, cfg, "phase-gap", outputs)
    spec = cfg.graph()
    result = {"command": "phase-gap", "r": cfg.r, "m": cfg.m, "d": cfg.d, "T": cfg.T, "replicates": cfg.replicates}
    intervals = {}
    for name in cfg.classifiers:
        if name == "survival":
            clf, bracket = Classifier("survival", survive_cap=cfg.survive_cap, mode=cfg.mode), cfg.bracket_survival
        elif name == "return":
            clf = Classifier("return", window=cfg.window, trunc_cap=cfg.trunc_cap, mode=cfg.mode)
            bracket = cfg.bracket_return
        else:
            raise ConfigError(f"unknown classifier {name!r}")
        try:
            res = bisect_critical(
                spec, cfg.r, clf, bracket, cfg.T, cfg.replicates, cfg.seed, m=cfg.m, d=cfg.d,
                threshold=cfg.threshold, tol=cfg.tol, max_replicates=cfg.max_replicates,
                experiment=_experiment(cfg, "phase-gap") + "-" + name, workers=workers, strict=cfg.strict,
            )
            res.write_trace_csv(out_dir / f"trace_{name}.csv")
            intervals[name] = {"low": res.lam_low, "high": res.lam_high, "resolved": res.resolved}
        except BracketError as exc:
            trace = exc.diagnostics.get("trace", [])
            _write_csv(
                out_dir / f"trace_{name}.csv",
                ["iteration", "lambda", "estimate", "ci_low", "ci_high", "decision"],
                [[t["iteration"], t["lam"], t["estimate"], t["ci_low"], t["ci_high"], t["decision"]] for t in trace],
            )
            intervals[name] = {"low": float(bracket[0]), "high": float(bracket[1]), "resolved": False, "error": str(exc)}
    result["intervals"] = intervals
    if "survival" in intervals and "return" in intervals:
        s, t = intervals["survival"], intervals["return"]
        disjoint = s["high"] < t["low"]
        result["gap"] = {
            "estimate": 0.5 * (t["low"] + t["high"]) - 0.5 * (s["low"] + s["high"]),
            "ci": [t["low"] - s["high"], t["high"] - s["low"]],
            "disjoint": disjoint,
            "message": "gap resolved" if disjoint else "gap not resolved at this budget",
        }
    return _summary(out_dir, cfg, result)


def _cdf(times, kinds_done, T):
    """Empirical P(stop <= t) for t = 0..T, and its binomial standard error."""
    n = times.size
    ts = np.arange(T + 1)
    stopped = np.where(kinds_done, times, T + 1)
    counts = np.bincount(np.minimum(stopped, T + 1), minlength=T + 2)[: T + 1]
    cdf = np.cumsum(counts) / n
    return ts, cdf, np.sqrt(cdf * (1 - cdf) / n)


def cmd_tau_convergence(cfg, out_dir, workers=1):
    """Compare tau and sigma laws on small worlds of growing size with the big world."""
    write_manifest(out_dir, cfg, "tau-convergence", ["tau_cdf.csv", "sigma_cdf.csv", "summary.json"])
    params = cfg.params()
    if params.gamma:
        raise ConfigError("tau-convergence compares against the big world; gamma must be 0")
    base = _experiment(cfg, "tau-convergence")
    graphs = [("big", None)] + [("small", R) for R in cfg.R_list]
    result = {"command": "tau-convergence", "params": params.as_dict(), "T": cfg.T, "replicates": cfg.replicates}
    for stat in ("tau", "sigma"):
        curves = {}
        rows = []
        for fam, R in graphs:
            spec = GraphSpec(fam, R=R, graph_seed=cfg.graph_seed if fam == "small" else None)
            res = simulate_batch(
                spec, params, cfg.replicates, cfg.seed, f"{base}-{stat}-{fam}-{R}", cfg.T,
                stop_on_return=(stat == "sigma"), workers=workers,
            )
            done = res.status != engine.CENSORED
            ts, cdf, se = _cdf(res.time, done, cfg.T)
            label = "big" if fam == "big" else str(R)
            curves[label] = (cdf, se, int((~done).sum()))
            rows += [[label, int(t), float(c), float(s)] for t, c, s in zip(ts, cdf, se)]
        _write_csv(out_dir / f"{stat}_cdf.csv", ["graph", "t", "cdf", "stderr"], rows)
        big_cdf, big_se, big_cens = curves["big"]
        per_R = {}
        for R in cfg.R_list:
            cdf, se, cens = curves[str(R)]
            diff = cdf - big_cdf
            tol = 3 * np.sqrt(se**2 + big_se**2)
            per_R[str(R)] = {
                "sup_distance": float(np.max(np.abs(diff))),
                "domination_holds": bool(np.all(diff >= -tol)),
                "worst_domination_margin": float(np.min(diff + tol)),
                "censored": cens,
                "p_stop_at_1": float(cdf[1]) if cfg.T >= 1 else None,
            }
        result[stat] = {"big": {"censored": big_cens, "p_stop_at_1": float(big_cdf[1])}, "small": per_R}
    return _summary(out_dir, cfg, result)


def _median_fit(Rs, samples, d, n_boot, seed):
    """Least-squares slope of log median vs R^d, with a bootstrap standard error."""
    x = np.array([R**d for R in Rs], dtype=np.float64)
    y = np.log([np.median(s) for s in samples])
    A = np.vstack([x, np.ones_like(x)]).T
    slope, icpt = np.linalg.lstsq(A, y, rcond=None)[0]
    rng = np.random.default_rng([seed, 0x3E7A])
    boots = []
    for _ in range(n_boot):
        yb = np.log([np.median(s[rng.integers(0, s.size, s.size)]) for s in samples])
        boots.append(np.linalg.lstsq(A, yb, rcond=None)[0][0])
    se = float(np.std(boots, ddof=1))
    fitted = A @ np.array([slope, icpt])
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return {
        "slope": float(slope),
        "intercept": float(icpt),
        "slope_stderr": se,
        "t_stat": float(slope / se) if se > 0 else math.inf,
        "r_squared": 1 - ss_res / ss_tot if ss_tot > 0 else 1.0,
    }


def _log_curvature(Rs, samples, d, n_boot, seed):
    """Curvature of the median survival time as a function of log(R^d).

    Zero for growth logarithmic in the volume, strongly positive for
    growth exponential in it. Quadratic least squares on the medians, with
    a bootstrap standard error.
    """
    x = np.log(np.array([R**d for R in Rs], dtype=np.float64))
    A = np.vstack([x**2, x, np.ones_like(x)]).T
    curv = float(np.linalg.lstsq(A, [np.median(s) for s in samples], rcond=None)[0][0])
    rng = np.random.default_rng([seed, 0x3E7B])
    boots = [
        np.linalg.lstsq(A, [np.median(s[rng.integers(0, s.size, s.size)]) for s in samples], rcond=None)[0][0]
        for _ in range(n_boot)
    ]
    return {"curvature": curv, "curvature_stderr": float(np.std(boots, ddof=1))}


def _survival_block(cfg, params, label, workers):
    stats, kept_R, kept, rows = {}, [], [], []
    for R in cfg.R_list:
        res = simulate_batch(
            GraphSpec("small", R=R, graph_seed=cfg.graph_seed), params, cfg.replicates, cfg.seed,
            f"{_experiment(cfg, 'metastability')}-{label}-{R}", cfg.horizon, start="all", workers=workers,
        )
        cens = res.status == engine.CENSORED
        for i, (t, c) in enumerate(zip(res.time, cens)):
            rows.append([label, R, i, int(t), "Censored" if c else "Extinct"])
        q1, med, q3 = (float(v) for v in np.percentile(res.time, [25, 50, 75]))
        # the median is only known when fewer than half the runs are censored
        capped = int(cens.sum()) * 2 >= res.time.size
        stats[str(R)] = {"q1": q1, "median": med, "q3": q3, "censored": int(cens.sum()), "median_at_cap": capped}
        if not capped:
            kept_R.append(R)
            kept.append(res.time.astype(np.float64))
    fit = _median_fit(kept_R, kept, params.d, cfg.n_boot, cfg.seed) if len(kept_R) >= 2 else None
    if fit is not None and len(kept_R) >= 3:
        fit.update(_log_curvature(kept_R, kept, params.d, cfg.n_boot, cfg.seed))
    return stats, fit, kept_R, rows


def metastability_lambda(cfg):
    """lambda for the supercritical run: explicit ``lam``/``alpha``, else lambda1 upper end + margin."""
    if cfg.gap_summary is None:
        return None, "config"
    try:
        gap = json.loads(Path(cfg.gap_summary).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read gap summary {cfg.gap_summary}: {exc}") from None
    for key in ("r", "m", "d"):
        if gap.get(key) != getattr(cfg, key):
            raise ConfigError(f"gap summary has {key}={gap.get(key)}, config has {getattr(cfg, key)}")
    surv = gap.get("intervals", {}).get("survival")
    if not surv or not surv.get("resolved", False):
        raise ConfigError("gap summary has no resolved survival interval")
    return surv["high"] + cfg.lambda_margin, "gap_summary"


def cmd_metastability(cfg, out_dir, workers=1):
    """Survival time from all-ones on small worlds with gamma > 0, versus R."""
    write_manifest(out_dir, cfg, "metastability", ["survival.csv", "summary.json"])
    if not cfg.gamma > 0:
        raise ConfigError("metastability needs gamma > 0")
    lam, source = metastability_lambda(cfg)
    params = cfg.params(lam=lam)
    control = cfg.params(lam=cfg.control_lam) if cfg.control_lam else None
    stats, fit, kept_R, rows = _survival_block(cfg, params, "main", workers)
    result = {
        "command": "metastability",
        "params": params.as_dict(),
        "lambda_source": source,
        "horizon": cfg.horizon,
        "replicates": cfg.replicates,
        "per_R": stats,
        "fit": fit,
        "fit_R": kept_R,
    }
    meds = [stats[str(R)]["median"] for R in cfg.R_list]
    result["strictly_increasing"] = all(b > a for a, b in zip(meds, meds[1:]))
    if control is not None:
        c_stats, c_fit, _, c_rows = _survival_block(cfg, control, "control", workers)
        rows += c_rows
        # no metastability: the median grows at most linearly in log(R^d), i.e. no convex trend
        flat = c_fit is not None and "curvature" in c_fit and c_fit["curvature"] <= 3 * c_fit["curvature_stderr"]
        result["control"] = {
            "params": control.as_dict(),
            "per_R": c_stats,
            "fit": c_fit,
            "no_metastability": bool(flat),
        }
    _write_csv(out_dir / "survival.csv", ["run", "R", "replicate", "time", "kind"], rows)
    return _summary(out_dir, cfg, result)


def cmd_growth_rate(cfg, out_dir, workers=1):
    """Growth rate of E|B_t| over a lambda grid, CP and BRW side by side."""
    write_manifest(out_dir, cfg, "growth-rate", ["growth.csv", "residuals.csv", "summary.json"])
    rows, res_rows, table = [], [], []
    for lam in cfg.lambda_grid:
        params = cfg.params(lam=lam)
        for mode in ("cp", "brw"):
            g = estimate_growth_rate(
                params, cfg.t_min, cfg.t_max, cfg.replicates, cfg.seed, mode=mode, pairs=cfg.pairs,
                n_boot=cfg.n_boot, experiment=f"{_experiment(cfg, 'growth-rate')}-{mode}-{lam!r}", workers=workers,
            )
            rows.append([lam, mode, g.c2_hat, g.slope_stderr, g.z, g.intercept, math.log(lam)])
            for (t, s), (v, se) in g.residuals.items():
                res_rows.append([lam, mode, t, s, v, se])
            table.append({
                "lambda": lam, "mode": mode, "c2_hat": g.c2_hat, "stderr": g.slope_stderr, "z": g.z,
                "log_lambda": math.log(lam),
                "residuals": [{"t": t, "s": s, "value": v, "stderr": se} for (t, s), (v, se) in g.residuals.items()],
            })
    _write_csv(out_dir / "growth.csv", ["lambda", "mode", "c2_hat", "stderr", "z", "intercept", "log_lambda"], rows)
    _write_csv(out_dir / "residuals.csv", ["lambda", "mode", "t", "s", "residual", "stderr"], res_rows)
    cp = [row for row in table if row["mode"] == "cp"]
    neg = [row["lambda"] for row in cp if row["z"] < -3]
    pos = [row["lambda"] for row in cp if row["z"] > 3]
    bracket = [max(neg), min(pos)] if neg and pos and max(neg) < min(pos) else None
    result = {"command": "growth-rate", "r": cfg.r, "m": cfg.m, "d": cfg.d, "rows": table, "sign_change_bracket": bracket}
    if cfg.gap_summary is not None and bracket is not None:
        try:
            surv = json.loads(Path(cfg.gap_summary).read_text())["intervals"]["survival"]
            result["lambda1_interval"] = [surv["low"], surv["high"]]
            result["consistent_with_lambda1"] = bracket[0] <= surv["high"] and surv["low"] <= bracket[1]
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read gap summary {cfg.gap_summary}: {exc}") from None
    return _summary(out_dir, cfg, result)


def cmd_simulate(cfg, out_dir, workers=1):
    """Raw run: one trajectory dump plus stop outcomes for ``replicates`` runs."""
    write_manifest(out_dir, cfg, "simulate", ["trajectory.csv", "outcomes.csv", "summary.json"])
    params = cfg.params()
    spec = cfg.graph()
    if cfg.start not in ("origin", "all"):
        raise ConfigError("start must be origin or all")
    if cfg.start == "all" and spec.family != "small":
        raise ConfigError("start = all needs a small world")
    start = "all" if cfg.start == "all" else None
    exp = _experiment(cfg, "simulate")
    one = simulate_batch(
        spec, params, 1, cfg.seed, exp, cfg.T, mode=cfg.mode, start=start, record_pop=True, record_origin=True,
        record_stride=cfg.stride, replicates=[cfg.replicate], max_sites=cfg.max_sites,
    )
    stride = cfg.stride if spec.family == "small" else 1
    rows = []
    stop = int(one.time[0])
    for k in range(one.pops.shape[1]):
        t = k * stride
        if t > stop:
            break
        rows.append([t, int(one.pops[0, k]), int(one.origin[0, k])])
    _write_csv(out_dir / "trajectory.csv", ["t", "population", "origin_infected"], rows)
    batch = simulate_batch(
        spec, params, cfg.replicates, cfg.seed, exp, cfg.T, mode=cfg.mode, start=start, workers=workers,
        max_sites=cfg.max_sites,
    )
    batch.write_outcomes_csv(out_dir / "outcomes.csv")
    kinds = [o.kind for o in batch.outcomes()]
    return _summary(out_dir, cfg, {
        "command": "simulate",
        "params": params.as_dict(),
        "graph": spec.as_dict(),
        "T": cfg.T,
        "counts": {k: kinds.count(k) for k in ("Extinct", "Returned", "Censored")},
    })


COMMANDS = {
    "critical-values": lambda cfg, out, workers: cmd_critical_values(cfg, out),
    "phase-gap": cmd_phase_gap,
    "tau-convergence": cmd_tau_convergence,
    "metastability": cmd_metastability,
    "growth-rate": cmd_growth_rate,
    "simulate": cmd_simulate,
}


def run_command(name, cfg, out_dir=None, workers=None):
    """Run one experiment command; returns its summary dict."""
    if name not in COMMANDS:
        raise ConfigError(f"unknown command {name!r}")
    if cfg.command is not None and cfg.command != name:
        raise ConfigError(f"config is for {cfg.command!r}, not {name!r}")
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[name](cfg, out, workers if workers is not None else cfg.workers)
