"""Benchmark harness: config-driven estimator sweeps over synthetic
distributions, with deterministic CSV output and convergence-slope fits.

A sweep produces one row per (estimator, d, M, hyperparameter point, seed).
Row values are pure functions of the config, so reruns are byte-identical.
Wall-clock timings are real measurements and therefore excluded from the
determinism guarantee; they go to a `.timings.csv` sidecar instead of the
main table. A `.summary.csv` sidecar holds the best-hyperparameter median
error per (estimator, d, M), which is what the plotter consumes.

Failures of individual cells (a bad lambda, a singular subset, CG running
out of iterations) are recorded as rows with error = nan and the exception
text in the reason column; they never abort the sweep. For the iterative
schemes all snapshot fits of one cell group come from a single recursion
run, so those rows share the path's fit time.
"""

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .estimators import (
    TruncatedTikhonov,
    fit_nystrom,
    fit_spectral_cutoff,
    fit_tikhonov,
    fit_tikhonov_cg,
    fit_truncated_tikhonov,
    landweber_path,
    nu_method_path,
)
from .kernels import ImplicitGram, MatrixKernelSpec, ScalarRadialKernel, assemble_gram
from .oracles import (
    MixtureDistribution,
    OracleScore,
    make_grid_distribution,
    median_bandwidth,
    sample,
    score_batch,
    standard_gaussian,
)
from .svgplot import render_line_chart

SCHEMA_VERSION = 1

# defaults for the hyperparameter search
LAMBDA_GRID = tuple(10.0 ** -k for k in range(0, 9))
ITERATION_GRID = tuple(range(20, 101, 10))
FRACTION_GRID = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)

ESTIMATOR_IDS = ("tikhonov", "tikhonov_cg", "truncated_tikhonov",
                 "spectral_cutoff", "landweber", "nu_method", "nystrom",
                 "oracle")

# curl-free systems up to this size use the dense Gram; above it the
# matrix-free path (diagonal kernels always go through the scalar MxM path)
DENSE_SYSTEM_LIMIT = 4096

# the "exact" Tikhonov fit on large matrix-free systems: tight tolerance,
# capped budget; cells whose lambda is too small to converge report failure
_TIK_IMPLICIT_TOL = 1e-8
_TIK_IMPLICIT_MAX_ITER = 800

ROWS_HEADER = ("estimator", "kind", "d", "M", "hyperparams", "seed",
               "error", "reason")
TIMINGS_HEADER = ("estimator", "kind", "d", "M", "hyperparams", "seed",
                  "fit_ms", "predict_ms")
SUMMARY_HEADER = ("estimator", "kind", "d", "M", "hyperparams",
                  "median_error", "n_ok")
SLOPES_HEADER = ("estimator", "kind", "d", "slope", "status")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _glabel(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else format(float(v), ".10g")


# ======================================================================
# config schema
# ======================================================================

def _check_keys(obj: dict, allowed, where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise InputError(f"{where}: unknown key(s) {', '.join(map(repr, unknown))}")


def _as_list(v):
    return v if isinstance(v, list) else [v]


def _int_list(v, where, minimum=1):
    out = []
    for item in _as_list(v):
        if isinstance(item, bool) or not isinstance(item, int) or item < minimum:
            raise InputError(f"{where}: expected integer(s) >= {minimum}, got {item!r}")
        out.append(item)
    if not out:
        raise InputError(f"{where}: list must be non-empty")
    return tuple(out)


def _float_list(v, where, low=0.0, high=math.inf, open_low=True):
    out = []
    for item in _as_list(v):
        if isinstance(item, bool) or not isinstance(item, (int, float)) \
                or not math.isfinite(item):
            raise InputError(f"{where}: expected finite number(s), got {item!r}")
        x = float(item)
        if x < low or x > high or (open_low and x == low):
            raise InputError(f"{where}: value {x!r} out of range")
        out.append(x)
    if not out:
        raise InputError(f"{where}: list must be non-empty")
    return tuple(out)


def _scalar_float(v, where, low=0.0, open_low=True):
    vals = _float_list(v, where, low=low, open_low=open_low)
    if len(vals) != 1 or isinstance(v, list):
        raise InputError(f"{where}: expected a single number")
    return vals[0]


@dataclass(frozen=True)
class EstimatorEntry:
    """One validated estimator block of the config, with its search grid."""

    id: str
    kind: str                      # "diagonal" | "curl_free" | "-" for oracle
    family: str = "imq"
    bandwidth: object = "median"   # "median" or a positive float
    grid: tuple = ()               # ((label, params_dict), ...)
    tol: float = 1e-4
    max_iter: int = 40
    nu: float = 1.0
    eta: float = 0.0               # 0 means auto step size
    subset_size: int = 0
    subset_fraction: float = 0.0


_COMMON_KEYS = ("id", "kind", "family", "bandwidth")
_ENTRY_KEYS = {
    "tikhonov": _COMMON_KEYS + ("lambdas",),
    "tikhonov_cg": _COMMON_KEYS + ("lambdas", "tol", "max_iter"),
    "truncated_tikhonov": _COMMON_KEYS + ("lambdas",),
    "spectral_cutoff": _COMMON_KEYS + ("fractions", "lambdas"),
    "landweber": _COMMON_KEYS + ("iterations", "eta"),
    "nu_method": _COMMON_KEYS + ("iterations", "nu"),
    "nystrom": _COMMON_KEYS + ("lambdas", "subset_size", "subset_fraction"),
    "oracle": ("id",),
}


def _parse_estimator(obj, where: str) -> EstimatorEntry:
    if not isinstance(obj, dict):
        raise InputError(f"{where}: estimator entries must be objects")
    eid = obj.get("id")
    if eid not in ESTIMATOR_IDS:
        raise InputError(f"{where}: 'id' must be one of {', '.join(ESTIMATOR_IDS)}, "
                         f"got {eid!r}")
    _check_keys(obj, _ENTRY_KEYS[eid], where)

    if eid == "oracle":
        return EstimatorEntry(id=eid, kind="-", grid=(("-", {}),))

    kind = obj.get("kind")
    if kind not in ("diagonal", "curl_free"):
        raise InputError(f"{where}: 'kind' must be 'diagonal' or 'curl_free', "
                         f"got {kind!r}")
    family = obj.get("family", "imq")
    if family not in ("imq", "gaussian"):
        raise InputError(f"{where}: 'family' must be 'imq' or 'gaussian'")
    bandwidth = obj.get("bandwidth", "median")
    if bandwidth != "median":
        bandwidth = _scalar_float(bandwidth, f"{where}.bandwidth")

    kw = dict(id=eid, kind=kind, family=family, bandwidth=bandwidth)

    if eid in ("tikhonov", "tikhonov_cg", "truncated_tikhonov", "nystrom"):
        lams = _float_list(obj.get("lambdas", list(LAMBDA_GRID)), f"{where}.lambdas")
        kw["grid"] = tuple((f"lam={_glabel(l)}", {"lam": l}) for l in lams)
    if eid == "tikhonov_cg":
        kw["tol"] = _scalar_float(obj.get("tol", 1e-4), f"{where}.tol")
        kw["max_iter"] = _int_list(obj.get("max_iter", 40), f"{where}.max_iter")[0]
    if eid == "spectral_cutoff":
        if "fractions" in obj and "lambdas" in obj:
            raise InputError(f"{where}: give either 'fractions' or 'lambdas', not both")
        if "lambdas" in obj:
            lams = _float_list(obj["lambdas"], f"{where}.lambdas")
            kw["grid"] = tuple((f"lam={_glabel(l)}", {"lam": l}) for l in lams)
        else:
            fracs = _float_list(obj.get("fractions", list(FRACTION_GRID)),
                                f"{where}.fractions", low=0.0, high=1.0)
            kw["grid"] = tuple((f"fraction={_glabel(f)}", {"fraction": f})
                               for f in fracs)
    if eid in ("landweber", "nu_method"):
        ts = _int_list(obj.get("iterations", list(ITERATION_GRID)),
                       f"{where}.iterations")
        kw["grid"] = tuple((f"t={t}", {"t": t}) for t in ts)
    if eid == "landweber" and "eta" in obj:
        kw["eta"] = _scalar_float(obj["eta"], f"{where}.eta")
    if eid == "nu_method":
        kw["nu"] = _scalar_float(obj.get("nu", 1.0), f"{where}.nu", low=1.0,
                                 open_low=False)
    if eid == "nystrom":
        if "subset_size" in obj and "subset_fraction" in obj:
            raise InputError(f"{where}: give either 'subset_size' or "
                             f"'subset_fraction', not both")
        if "subset_size" in obj:
            kw["subset_size"] = _int_list(obj["subset_size"], f"{where}.subset_size")[0]
        else:
            kw["subset_fraction"] = _float_list(
                obj.get("subset_fraction", 0.5), f"{where}.subset_fraction",
                low=0.0, high=1.0)[0]
    return EstimatorEntry(**kw)


@dataclass(frozen=True)
class ExperimentConfig:
    distribution: str                 # "grid" | "gaussian" | "mixture"
    dimensions: tuple
    sample_sizes: tuple
    estimators: tuple                 # of EstimatorEntry
    seeds: tuple
    eval_size: int = 1024
    distribution_seed: int = 0
    mixture: MixtureDistribution = None


_CONFIG_KEYS = ("schema_version", "distribution", "mixture_file", "dimensions",
                "sample_sizes", "estimators", "seeds", "eval_size",
                "distribution_seed")


def parse_experiment_config(data, base_dir: str = ".") -> ExperimentConfig:
    """Validate a parsed config object. Unknown keys are hard errors."""
    if not isinstance(data, dict):
        raise InputError("config root must be an object")
    _check_keys(data, _CONFIG_KEYS, "config")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"config: 'schema_version' must be {SCHEMA_VERSION}, "
                         f"got {data.get('schema_version')!r}")

    dist = data.get("distribution")
    if dist not in ("grid", "gaussian", "mixture"):
        raise InputError("config: 'distribution' must be 'grid', 'gaussian' "
                         f"or 'mixture', got {dist!r}")
    mixture = None
    if dist == "mixture":
        if "mixture_file" not in data:
            raise InputError("config: distribution 'mixture' requires 'mixture_file'")
        mixture = load_mixture_file(os.path.join(base_dir, data["mixture_file"]))
    elif "mixture_file" in data:
        raise InputError("config: 'mixture_file' is only valid with "
                         "distribution 'mixture'")

    dims = _int_list(data.get("dimensions"), "config.dimensions") \
        if "dimensions" in data else None
    if dims is None:
        raise InputError("config: missing required key 'dimensions'")
    if mixture is not None and any(d != mixture.dim for d in dims):
        raise InputError(f"config.dimensions: mixture file has d={mixture.dim}; "
                         f"all dimensions must equal it")
    if "sample_sizes" not in data:
        raise InputError("config: missing required key 'sample_sizes'")
    sizes = _int_list(data["sample_sizes"], "config.sample_sizes")
    if "seeds" not in data:
        raise InputError("config: missing required key 'seeds'")
    seeds = _int_list(data["seeds"], "config.seeds", minimum=0)

    raw_ests = data.get("estimators")
    if not isinstance(raw_ests, list) or not raw_ests:
        raise InputError("config: 'estimators' must be a non-empty list")
    entries = tuple(_parse_estimator(e, f"config.estimators[{i}]")
                    for i, e in enumerate(raw_ests))
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise InputError("config.estimators: estimator ids must be unique")

    eval_size = _int_list(data.get("eval_size", 1024), "config.eval_size")[0]
    dseed = _int_list(data.get("distribution_seed", 0),
                      "config.distribution_seed", minimum=0)[0]
    return ExperimentConfig(distribution=dist, dimensions=dims,
                            sample_sizes=sizes, estimators=entries,
                            seeds=seeds, eval_size=eval_size,
                            distribution_seed=dseed, mixture=mixture)


def load_experiment_config(path) -> ExperimentConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from None
    return parse_experiment_config(data, base_dir=os.path.dirname(str(path)))


_MIXTURE_KEYS = ("means", "weights", "scale")


def load_mixture_file(path) -> MixtureDistribution:
    """JSON mixture description: means (list of rows), weights, scale."""
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: mixture file root must be an object")
    _check_keys(data, _MIXTURE_KEYS, str(path))
    if "means" not in data or "weights" not in data:
        raise InputError(f"{path}: mixture file needs 'means' and 'weights'")
    return MixtureDistribution(np.asarray(data["means"], dtype=np.float64),
                               np.asarray(data["weights"], dtype=np.float64),
                               scale=float(data.get("scale", 1.0)))


def build_distribution(cfg: ExperimentConfig, d: int) -> MixtureDistribution:
    if cfg.distribution == "gaussian":
        return standard_gaussian(d)
    if cfg.distribution == "mixture":
        return cfg.mixture
    return make_grid_distribution(d, cfg.distribution_seed)


# ======================================================================
# sweep execution
# ======================================================================

@dataclass(frozen=True)
class ResultRow:
    estimator: str
    kind: str
    d: int
    M: int
    hyperparams: str
    seed: int
    error: float
    reason: str
    fit_ms: float
    predict_ms: float


@dataclass
class _Cell:
    error: float = math.nan
    reason: str = ""
    fit_ms: float = 0.0
    predict_ms: float = 0.0
    est: object = field(default=None, repr=False, compare=False)


def _reason(exc) -> str:
    text = str(exc).splitlines()[0] if str(exc) else ""
    return f"{type(exc).__name__}: {text}"


def _now_ms() -> float:
    return time.perf_counter() * 1e3


def _mean_error(truth: np.ndarray, pred: np.ndarray, d: int) -> float:
    return float(np.mean(np.square(truth - pred).sum(axis=1)) / d)


def _fit_cells(entry: EstimatorEntry, X: np.ndarray,
               spec: MatrixKernelSpec, seed: int, d: int, M: int) -> list:
    """Fit every grid point of one (entry, d, M, seed) cell group."""
    cells = [_Cell() for _ in entry.grid]
    n = len(entry.grid)

    if entry.id in ("tikhonov", "tikhonov_cg"):
        big = entry.kind == "curl_free" and M * d > DENSE_SYSTEM_LIMIT
        implicit = big or entry.id == "tikhonov_cg"
        gram = ImplicitGram(spec, X) if implicit else None
        if entry.kind == "curl_free" and not implicit:
            gram = assemble_gram(spec, X, mode="dense")
        # descending lambda so each solve can warm-start from the previous
        order = sorted(range(n), key=lambda i: -entry.grid[i][1]["lam"])
        prev, prev_lam = None, None
        for i in order:
            lam = entry.grid[i][1]["lam"]
            t0 = _now_ms()
            try:
                if entry.id == "tikhonov_cg":
                    est = fit_tikhonov_cg(X, spec, lam, tol=entry.tol,
                                          max_iter=entry.max_iter, gram=gram)
                elif implicit:
                    x0 = None if prev is None else (prev * (prev_lam / lam)).ravel()
                    est = fit_tikhonov(X, spec, lam, mode="implicit", gram=gram,
                                       cg_tol=_TIK_IMPLICIT_TOL,
                                       cg_max_iter=_TIK_IMPLICIT_MAX_ITER,
                                       _cg_x0=x0)
                    prev, prev_lam = est.coeffs, lam
                else:
                    est = fit_tikhonov(X, spec, lam, mode="dense", gram=gram)
            except Exception as exc:
                cells[i] = _Cell(reason=_reason(exc), fit_ms=_now_ms() - t0)
                prev, prev_lam = None, None
                continue
            cells[i] = _Cell(fit_ms=_now_ms() - t0, est=est)
        return cells

    if entry.id in ("truncated_tikhonov", "spectral_cutoff"):
        # diagonal kernels go through the scalar M x M eigensystem (cached on
        # the implicit gram); curl-free ones need the dense Md x Md spectrum,
        # and over the dense limit the implicit gram makes the fit refuse
        # cleanly instead of materializing the matrix
        try:
            if entry.kind == "curl_free" and M * d <= DENSE_SYSTEM_LIMIT:
                gram = assemble_gram(spec, X, mode="dense")
            else:
                gram = ImplicitGram(spec, X)
        except Exception as exc:
            return [_Cell(reason=_reason(exc)) for _ in range(n)]
        for i, (_, params) in enumerate(entry.grid):
            t0 = _now_ms()
            try:
                if entry.id == "truncated_tikhonov":
                    est = fit_truncated_tikhonov(X, spec, params["lam"], gram=gram)
                elif "lam" in params:
                    est = fit_spectral_cutoff(X, spec, lam=params["lam"], gram=gram)
                else:
                    rank = max(1, int(round(params["fraction"] * M))) * d
                    est = fit_spectral_cutoff(X, spec, rank=rank, gram=gram)
            except Exception as exc:
                cells[i] = _Cell(reason=_reason(exc), fit_ms=_now_ms() - t0)
                continue
            cells[i] = _Cell(fit_ms=_now_ms() - t0, est=est)
        return cells

    if entry.id in ("landweber", "nu_method"):
        # one recursion run snapshots every t in the grid; its wall time is
        # shared by all snapshot rows
        use_dense = entry.kind == "curl_free" and M * d <= DENSE_SYSTEM_LIMIT
        mode = "dense" if use_dense else "implicit"
        ts = [params["t"] for _, params in entry.grid]
        uniq = sorted(set(ts))
        t0 = _now_ms()
        try:
            if entry.id == "landweber":
                eta = entry.eta if entry.eta > 0 else None
                path = landweber_path(X, spec, uniq, eta=eta, mode=mode)
            else:
                path = nu_method_path(X, spec, uniq, nu=entry.nu, mode=mode)
        except Exception as exc:
            ms = _now_ms() - t0
            return [_Cell(reason=_reason(exc), fit_ms=ms) for _ in range(n)]
        ms = _now_ms() - t0
        by_t = dict(zip(uniq, path))
        return [_Cell(fit_ms=ms, est=by_t[t]) for t in ts]

    if entry.id == "nystrom":
        size = entry.subset_size or max(1, int(round(entry.subset_fraction * M)))
        size = min(size, M)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, d, M)))
        idx = np.sort(rng.choice(M, size=size, replace=False))
        for i, (_, params) in enumerate(entry.grid):
            t0 = _now_ms()
            try:
                est = fit_nystrom(X, idx, spec, TruncatedTikhonov(params["lam"]))
            except Exception as exc:
                cells[i] = _Cell(reason=_reason(exc), fit_ms=_now_ms() - t0)
                continue
            cells[i] = _Cell(fit_ms=_now_ms() - t0, est=est)
        return cells

    raise InputError(f"unknown estimator id {entry.id!r}")


def _run_cell_group(cfg: ExperimentConfig, entry: EstimatorEntry,
                    d: int, M: int, seed: int) -> list:
    n = len(entry.grid)
    try:
        dist = build_distribution(cfg, d)
        X = sample(dist, M, np.random.SeedSequence(seed, spawn_key=(1, d, M)))
        Q = sample(dist, cfg.eval_size, np.random.SeedSequence(seed, spawn_key=(2, d, M)))
        truth = score_batch(dist, Q)
    except Exception as exc:
        return [_Cell(reason=_reason(exc)) for _ in range(n)]

    if entry.id == "oracle":
        t0 = _now_ms()
        pred = OracleScore(dist).predict(Q)
        return [_Cell(error=_mean_error(truth, pred, d), predict_ms=_now_ms() - t0)]

    try:
        bw = entry.bandwidth if isinstance(entry.bandwidth, float) \
            else median_bandwidth(X)
        spec = MatrixKernelSpec(entry.kind, ScalarRadialKernel(entry.family, bw))
    except Exception as exc:
        return [_Cell(reason=_reason(exc)) for _ in range(n)]

    cells = _fit_cells(entry, X, spec, seed, d, M)
    for cell in cells:
        if cell.est is None:
            continue
        t0 = _now_ms()
        try:
            pred = cell.est.predict(Q)
            cell.error = _mean_error(truth, pred, d)
        except Exception as exc:
            cell.reason = _reason(exc)
            cell.error = math.nan
        cell.predict_ms = _now_ms() - t0
        cell.est = None
    return cells


def run_grid_rows(cfg: ExperimentConfig, threads: int = 1) -> list:
    """All ResultRows of the sweep, in canonical config order."""
    tasks = [(entry, d, M, seed)
             for entry in cfg.estimators
             for d in cfg.dimensions
             for M in cfg.sample_sizes
             for seed in cfg.seeds]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(
                lambda t: _run_cell_group(cfg, *t), tasks))
    else:
        outcomes = [_run_cell_group(cfg, *t) for t in tasks]
    by_task = dict(zip(((e.id, d, M, s) for e, d, M, s in tasks), outcomes))

    rows = []
    for entry in cfg.estimators:
        for d in cfg.dimensions:
            for M in cfg.sample_sizes:
                for gi, (label, _) in enumerate(entry.grid):
                    for seed in cfg.seeds:
                        cell = by_task[(entry.id, d, M, seed)][gi]
                        rows.append(ResultRow(
                            estimator=entry.id, kind=entry.kind, d=d, M=M,
                            hyperparams=label, seed=seed, error=cell.error,
                            reason=cell.reason, fit_ms=cell.fit_ms,
                            predict_ms=cell.predict_ms))
    return rows


# ======================================================================
# aggregation
# ======================================================================

@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    kind: str
    d: int
    M: int
    hyperparams: str
    median_error: float
    n_ok: int


def summarize(rows) -> list:
    """Best hyperparameter point per (estimator, d, M) by median error.

    The median is over seeds whose cell succeeded; grid points with no
    successful seed are skipped; an (estimator, d, M) block where every
    cell failed yields a nan row with hyperparams '-'.
    """
    groups = {}
    for row in rows:
        key = (row.estimator, row.kind, row.d, row.M)
        groups.setdefault(key, {}).setdefault(row.hyperparams, []).append(row.error)
    out = []
    for (est, kind, d, M), by_hyper in groups.items():
        best = None
        for label, errs in by_hyper.items():
            ok = [e for e in errs if math.isfinite(e)]
            if not ok:
                continue
            med = float(np.median(np.asarray(ok)))
            if best is None or med < best[1]:
                best = (label, med, len(ok))
        if best is None:
            out.append(SummaryRow(est, kind, d, M, "-", math.nan, 0))
        else:
            out.append(SummaryRow(est, kind, d, M, best[0], best[1], best[2]))
    return out


@dataclass(frozen=True)
class SlopeRow:
    estimator: str
    kind: str
    d: int
    slope: float
    status: str      # "ok" | "exact-fit" | "insufficient-data"


def fit_convergence_slopes(summary) -> list:
    """Least-squares slope of log(median error) vs log M per (estimator, d)."""
    series = {}
    for s in summary:
        series.setdefault((s.estimator, s.kind, s.d), []).append(
            (s.M, s.median_error))
    out = []
    for (est, kind, d), pts in series.items():
        meds = [m for _, m in pts]
        if all(math.isfinite(m) and m == 0.0 for m in meds):
            out.append(SlopeRow(est, kind, d, math.nan, "exact-fit"))
            continue
        usable = [(M, m) for M, m in pts if math.isfinite(m) and m > 0.0]
        if len(usable) < 3:
            out.append(SlopeRow(est, kind, d, math.nan, "insufficient-data"))
            continue
        usable.sort()
        log_m = np.log([M for M, _ in usable])
        log_e = np.log([m for _, m in usable])
        slope = float(np.polyfit(log_m, log_e, 1)[0])
        out.append(SlopeRow(est, kind, d, slope, "ok"))
    return out


# ======================================================================
# CSV writers
# ======================================================================

def _write_csv(path, header, records) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(records)


def write_rows_csv(rows, path) -> None:
    _write_csv(path, ROWS_HEADER,
               ((r.estimator, r.kind, r.d, r.M, r.hyperparams, r.seed,
                 _fmt(r.error), r.reason) for r in rows))


def write_timings_csv(rows, path) -> None:
    _write_csv(path, TIMINGS_HEADER,
               ((r.estimator, r.kind, r.d, r.M, r.hyperparams, r.seed,
                 f"{r.fit_ms:.3f}", f"{r.predict_ms:.3f}") for r in rows))


def write_summary_csv(summary, path) -> None:
    _write_csv(path, SUMMARY_HEADER,
               ((s.estimator, s.kind, s.d, s.M, s.hyperparams,
                 _fmt(s.median_error), s.n_ok) for s in summary))


def write_slopes_csv(slopes, path) -> None:
    _write_csv(path, SLOPES_HEADER,
               ((s.estimator, s.kind, s.d, _fmt(s.slope), s.status)
                for s in slopes))


def _sidecar(out_path, tag: str) -> str:
    base = str(out_path)
    if base.endswith(".csv"):
        base = base[:-4]
    return f"{base}.{tag}.csv"


# ======================================================================
# experiment entry points
# ======================================================================

def _as_config(config) -> ExperimentConfig:
    if isinstance(config, ExperimentConfig):
        return config
    return load_experiment_config(config)


def run_grid_experiment(config, out_path, threads: int = 1) -> list:
    """Full sweep; writes the row CSV plus timing and summary sidecars."""
    cfg = _as_config(config)
    rows = run_grid_rows(cfg, threads=threads)
    write_rows_csv(rows, out_path)
    write_timings_csv(rows, _sidecar(out_path, "timings"))
    write_summary_csv(summarize(rows), _sidecar(out_path, "summary"))
    return rows


def run_convergence_experiment(config, out_path, threads: int = 1) -> list:
    """Sweep plus per-estimator log-log slope fit over the sample sizes."""
    cfg = _as_config(config)
    sizes = sorted(set(cfg.sample_sizes))
    if len(sizes) < 3 or sizes[-1] < 10 * sizes[0]:
        raise InputError("convergence experiment needs >= 3 distinct sample "
                         "sizes spanning at least one decade, got "
                         f"{list(cfg.sample_sizes)}")
    rows = run_grid_rows(cfg, threads=threads)
    summary = summarize(rows)
    slopes = fit_convergence_slopes(summary)
    write_rows_csv(rows, out_path)
    write_timings_csv(rows, _sidecar(out_path, "timings"))
    write_summary_csv(summary, _sidecar(out_path, "summary"))
    write_slopes_csv(slopes, _sidecar(out_path, "slopes"))
    return slopes


# ======================================================================
# plotting
# ======================================================================

def read_summary_csv(path) -> list:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if header != SUMMARY_HEADER:
            raise InputError(f"{path}: line 1: expected header "
                             f"{','.join(SUMMARY_HEADER)!r}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SUMMARY_HEADER):
                raise InputError(f"{path}: line {lineno}: expected "
                                 f"{len(SUMMARY_HEADER)} fields, got {len(row)}")
            try:
                out.append(SummaryRow(row[0], row[1], int(row[2]), int(row[3]),
                                      row[4], float(row[5]), int(row[6])))
            except ValueError as exc:
                raise InputError(f"{path}: line {lineno}: {exc}") from None
    return out


def emit_plot(csv_path, x_field: str = "M", log_x: bool = False,
              log_y: bool = False, title: str = "") -> str:
    """Render best-hyperparameter error curves from a summary CSV as SVG."""
    if x_field not in ("M", "d"):
        raise InputError(f"x_field must be 'M' or 'd', got {x_field!r}")
    summary = read_summary_csv(csv_path)
    other = "d" if x_field == "M" else "M"
    n_other = len({getattr(s, other) for s in summary})
    series = {}
    for s in summary:
        name = s.estimator if n_other <= 1 \
            else f"{s.estimator} {other}={getattr(s, other)}"
        if name not in series:
            series[name] = []
        if math.isfinite(s.median_error):
            series[name].append((float(getattr(s, x_field)), s.median_error))
    plot_series = [(name, sorted(pts)) for name, pts in series.items()]
    return render_line_chart(plot_series, title=title, x_label=x_field,
                             y_label="median normalized error",
                             log_x=log_x, log_y=log_y)
