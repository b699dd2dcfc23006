"""Seeded simulation grids, diagnostics studies and the time/memory benchmark."""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
import os
import time
import tracemalloc
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .datagen import (
    BetaScheme,
    BetaSpec,
    SPLITS,
    ConfigError,
    CovarianceSpec,
    CovFamily,
    Dataset,
    derive_seed,
    make_dataset,
    resolve_p1,
)
from .fdrctl import (
    ds_select,
    mds_aggregate,
    mds_select,
    null_symmetry_diagnostic,
    randms_select,
)
from .fitters import estimate_sigma2
from .metrics import score_selection, summarize

log = logging.getLogger(__name__)

METHODS = ("RandMS", "DS", "MDS")
THREADS_ENV = "MIRRORFDR_THREADS"
RECORD_FIELDS = (
    "scenario_id",
    "method",
    "rep",
    "seed",
    "fdp",
    "tpr",
    "n_selected",
    "sigma2_used",
    "tau",
    "wall_time_s",
    "peak_mem_bytes",
    "status",
)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str = "base"
    n: int = 800
    p: int = 2000
    active: float | int = 50
    covariance: CovarianceSpec = CovarianceSpec(CovFamily.TOEPLITZ_BLOCK, 0.5)
    betas: BetaSpec = BetaSpec(BetaScheme.NORMAL_SCALED, delta=5.0)
    sigma2_true: float = 1.0
    # None means estimate from the CV-tuned LASSO
    sigma2_input: Optional[float] = None
    q: float = 0.1
    gamma: float = 1.0
    methods: tuple = METHODS
    mds_splits: int = 50
    repetitions: int = 50
    base_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not 0 < self.q < 1:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not self.sigma2_true > 0:
            raise ConfigError(f"sigma2_true must be positive, got {self.sigma2_true}")
        if self.sigma2_input is not None and not self.sigma2_input > 0:
            raise ConfigError(f"sigma2_input must be positive, got {self.sigma2_input}")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}")
        if self.n < 4 or self.p < 1:
            raise ConfigError(f"need n >= 4 and p >= 1, got n={self.n}, p={self.p}")
        resolve_p1(self.active, self.p)

    @property
    def p1(self) -> int:
        return resolve_p1(self.active, self.p)

    def beta_spec(self) -> BetaSpec:
        return dataclasses.replace(self.betas, p1=self.p1)

    def rep_seed(self, rep: int) -> int:
        return derive_seed(self.base_seed, zlib.crc32(self.scenario_id.encode()), rep)

    def dataset(self, rep: int) -> Dataset:
        return make_dataset(self.n, self.p, self.covariance, self.beta_spec(), self.sigma2_true, self.rep_seed(rep))


@dataclass
class RunRecord:
    scenario_id: str
    method: str
    rep: int
    seed: int
    fdp: float = math.nan
    tpr: float = math.nan
    n_selected: int = 0
    sigma2_used: Optional[float] = None
    tau: Optional[float] = None
    wall_time_s: float = 0.0
    peak_mem_bytes: Optional[int] = None
    status: str = "ok"
    # diagnostics, not part of records.csv
    n_screened: Optional[int] = None
    lasso_tpr: Optional[float] = None
    null_above: Optional[int] = None
    null_below: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def row(self) -> dict:
        return {k: getattr(self, k) for k in RECORD_FIELDS}


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


def _run_method(cfg: ScenarioConfig, ds: Dataset, method: str, seed: int) -> RunRecord:
    rec = RunRecord(cfg.scenario_id, method, -1, seed)
    t0 = time.perf_counter()
    if method == "RandMS":
        res = randms_select(ds, cfg.q, cfg.gamma, cfg.sigma2_input, seed)
        selected, rec.tau, rec.sigma2_used = res.selected, res.tau, res.sigma2_used
        screened = res.screened
        if ds.support_true is not None:
            null = np.setdiff1d(np.arange(ds.p), ds.support_true)
            rec.null_above, rec.null_below = null_symmetry_diagnostic(res.m, null, res.tau)
    elif method == "DS":
        res = ds_select(ds, cfg.q, seed)
        selected, rec.tau, screened = res.selected, res.tau, res.screened
    else:
        res = mds_select(ds, cfg.q, cfg.mds_splits, seed)
        selected, screened = res.selected, None
    rec.wall_time_s = time.perf_counter() - t0
    score = score_selection(selected, ds.support_true, ds.p)
    rec.fdp, rec.tpr, rec.n_selected = score.fdp, score.tpr, score.n_selected
    if screened is not None:
        rec.n_screened = int(len(screened))
        if len(ds.support_true):
            rec.lasso_tpr = len(np.intersect1d(screened, ds.support_true)) / len(ds.support_true)
    return rec


def _run_repetition(cfg: ScenarioConfig, rep: int) -> list[RunRecord]:
    seed = cfg.rep_seed(rep)
    out = []
    try:
        ds = cfg.dataset(rep)
    except Exception as exc:  # record the failure and keep the grid going
        return [RunRecord(cfg.scenario_id, m, rep, seed, status=f"error: {exc}") for m in cfg.methods]
    for i, method in enumerate(cfg.methods):
        mseed = derive_seed(seed, METHODS.index(method))
        try:
            rec = _run_method(cfg, ds, method, mseed)
        except Exception as exc:
            log.warning("%s rep %d %s failed: %s", cfg.scenario_id, rep, method, exc)
            rec = RunRecord(cfg.scenario_id, method, rep, mseed, status=f"error: {type(exc).__name__}: {exc}")
        rec.rep = rep
        out.append(rec)
    return out


def run_scenario(
    config: ScenarioConfig,
    threads: Optional[int] = None,
    progress: Optional[Callable[[int, int], None]] = None,
) -> list[RunRecord]:
    """One record per (method, repetition), ordered by method then repetition.

    Repetition ``r`` draws a fresh dataset from a seed derived from
    ``(base_seed, scenario_id, r)``; outputs do not depend on ``threads``.
    """
    threads = _default_threads() if threads is None else max(1, int(threads))
    reps = range(config.repetitions)
    if threads == 1 or config.repetitions == 1:
        results = []
        for r in reps:
            results.append(_run_repetition(config, r))
            if progress:
                progress(r + 1, config.repetitions)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_repetition, itertools.repeat(config), reps))
    by_method = {m: [] for m in config.methods}
    for rep_records in results:
        for rec in rep_records:
            by_method[rec.method].append(rec)
    return [rec for m in config.methods for rec in by_method[m]]


_SHORTCUTS = {
    "rho": ("covariance", "rho"),
    "block_size": ("covariance", "block_size"),
    "family": ("covariance", "family"),
    "delta": ("betas", "delta"),
    "scheme": ("betas", "scheme"),
    "pool": ("betas", "pool"),
}


def _with_value(cfg: ScenarioConfig, name: str, value: Any) -> ScenarioConfig:
    if name in _SHORTCUTS:
        outer, inner = _SHORTCUTS[name]
    elif "." in name:
        outer, inner = name.split(".", 1)
    else:
        outer, inner = name, None
    names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    if outer not in names or outer == "scenario_id":
        raise ConfigError(f"unknown sweep field {name!r}")
    if inner is None:
        return dataclasses.replace(cfg, **{outer: value})
    sub = getattr(cfg, outer)
    if not dataclasses.is_dataclass(sub) or inner not in {f.name for f in dataclasses.fields(sub)}:
        raise ConfigError(f"unknown sweep field {name!r}")
    return dataclasses.replace(cfg, **{outer: dataclasses.replace(sub, **{inner: value})})


def scenario_grid(base: ScenarioConfig, sweep: Optional[dict[str, Sequence]] = None) -> list[ScenarioConfig]:
    """Cartesian expansion of ``sweep`` over ``base``; the last name varies fastest."""
    sweep = dict(sweep or {})
    if not sweep:
        return [base]
    names = list(sweep)
    configs = []
    for values in itertools.product(*(sweep[k] for k in names)):
        cfg = base
        for k, v in zip(names, values):
            cfg = _with_value(cfg, k, v)
        sid = base.scenario_id + "".join(f"__{k}={v}" for k, v in zip(names, values))
        configs.append(dataclasses.replace(cfg, scenario_id=sid))
    ids = [c.scenario_id for c in configs]
    if len(set(ids)) != len(ids):
        raise ConfigError("sweep produced duplicate scenario ids")
    return configs


def summarize_records(records: Iterable[RunRecord]) -> list[dict]:
    """Per (scenario, method) FDR/TPR summaries; failed repetitions are counted, not averaged."""
    groups: dict[tuple, list[RunRecord]] = {}
    for rec in records:
        groups.setdefault((rec.scenario_id, rec.method), []).append(rec)
    rows = []
    for (sid, method), recs in groups.items():
        ok = [r for r in recs if r.ok]
        row = {"scenario_id": sid, "method": method, "repetitions": len(recs), "failed": len(recs) - len(ok)}
        if ok:
            fdr = summarize([r.fdp for r in ok])
            tpr = summarize([r.tpr for r in ok])
            row.update(
                mean_fdr=fdr.mean,
                median_fdr=fdr.median,
                fdr_q1=fdr.q1,
                fdr_q3=fdr.q3,
                fdr_mcse=fdr.mcse,
                mean_tpr=tpr.mean,
                median_tpr=tpr.median,
                tpr_q1=tpr.q1,
                tpr_q3=tpr.q3,
                tpr_mcse=tpr.mcse,
                mean_selected=float(np.mean([r.n_selected for r in ok])),
                mean_wall_time_s=float(np.mean([r.wall_time_s for r in ok])),
            )
        rows.append(row)
    return rows


def sigma_sensitivity_study(
    base: ScenarioConfig,
    sigma2_inputs: Sequence[float],
    repetitions: int = 20,
    threads: Optional[int] = None,
) -> tuple[list[RunRecord], list[dict]]:
    """RandMS with a fixed, possibly wrong, noise variance fed to the randomisation.

    The datasets are the same for every input value so the comparison is paired.
    """
    records, table = [], []
    for s2 in sigma2_inputs:
        cfg = dataclasses.replace(
            base,
            scenario_id=base.scenario_id,
            sigma2_input=float(s2),
            methods=("RandMS",),
            repetitions=repetitions,
        )
        recs = run_scenario(cfg, threads)
        for r in recs:
            r.scenario_id = f"{base.scenario_id}__sigma2_input={s2}"
        records.extend(recs)
        ok = [r for r in recs if r.ok]
        fdr = summarize([r.fdp for r in ok]) if ok else None
        table.append(
            {
                "sigma2_input": float(s2),
                "mean_fdr": fdr.mean if fdr else math.nan,
                "fdr_mcse": fdr.mcse if fdr else math.nan,
                "mean_tpr": float(np.mean([r.tpr for r in ok])) if ok else math.nan,
                "mean_selected_fraction": float(np.mean([r.n_selected for r in ok])) / base.p if ok else math.nan,
                "mean_screened_fraction": float(np.mean([r.n_screened for r in ok])) / base.p if ok else math.nan,
                "failed": len(recs) - len(ok),
            }
        )
    return records, table


SCREENING_STRESS = ScenarioConfig(
    scenario_id="screening_violation",
    n=200,
    p=1000,
    active=50,
    covariance=CovarianceSpec(CovFamily.TOEPLITZ_BLOCK, 0.5),
    betas=BetaSpec(BetaScheme.FIXED_POOL, pool=(-1.0, 1.0)),
    sigma2_true=1.0,
    q=0.1,
    methods=("RandMS",),
    repetitions=50,
)


def screening_violation_study(
    config: ScenarioConfig = SCREENING_STRESS, threads: Optional[int] = None
) -> tuple[list[RunRecord], list[dict], dict]:
    """LASSO-stage TPR against achieved FDR, plus null mirror counts around tau.

    Returns the records, one diagnostics row per repetition and a summary
    with the Spearman correlation between LASSO TPR and FDP.
    """
    records = run_scenario(dataclasses.replace(config, methods=("RandMS",)), threads)
    rows = [
        {
            "rep": r.rep,
            "lasso_tpr": r.lasso_tpr,
            "fdp": r.fdp,
            "tpr": r.tpr,
            "null_above": r.null_above,
            "null_below": r.null_below,
            "n_screened": r.n_screened,
        }
        for r in records
        if r.ok
    ]
    summary: dict[str, Any] = {"repetitions": len(records), "failed": len(records) - len(rows)}
    if len(rows) >= 3:
        x = [r["lasso_tpr"] for r in rows]
        y = [r["fdp"] for r in rows]
        if np.ptp(x) > 0 and np.ptp(y) > 0:
            rho, pval = stats.spearmanr(x, y)
            summary.update(spearman_lasso_tpr_fdr=float(rho), spearman_pvalue=float(pval))
        else:
            # rank correlation is undefined when either margin is constant
            summary.update(spearman_lasso_tpr_fdr=None, spearman_pvalue=None)
        summary["mean_null_above"] = float(np.mean([r["null_above"] for r in rows]))
        summary["mean_null_below"] = float(np.mean([r["null_below"] for r in rows]))
        full = [r["fdp"] for r in rows if r["lasso_tpr"] == 1.0]
        summary["mean_fdr_when_sure_screening"] = float(np.mean(full)) if full else None
        summary["n_sure_screening"] = len(full)
    return records, rows, summary


MEMORY_METHOD = "tracemalloc"


class _MemoryMeter:
    """High-water mark of traced allocations, overall and summed over stages.

    Only allocations made through Python's allocator are traced (NumPy
    buffers included); scratch space inside the compiled solver is not.
    """

    def __init__(self):
        self.peak = 0
        self.stage_sum = 0

    def __enter__(self):
        self._was_tracing = tracemalloc.is_tracing()
        if not self._was_tracing:
            tracemalloc.start()
        self._base = tracemalloc.get_traced_memory()[0]
        return self

    def stage(self, fn, *args, **kwargs):
        start = tracemalloc.get_traced_memory()[0]
        tracemalloc.reset_peak()
        out = fn(*args, **kwargs)
        peak = tracemalloc.get_traced_memory()[1]
        self.stage_sum += max(peak - start, 0)
        self.peak = max(self.peak, peak - self._base)
        return out

    def __exit__(self, *exc):
        if not self._was_tracing:
            tracemalloc.stop()
        return False


BENCHMARK_FIELDS = ("p", "method", "rep", "seed", "wall_time_s", "peak_mem_bytes", "stage_alloc_bytes", "mem_method")


def benchmark(
    p_values: Sequence[int] = (1000, 2000, 5000, 10000),
    n: int = 300,
    p1: int = 30,
    splits: int = 50,
    repetitions: int = 1,
    rho: float = 0.5,
    q: float = 0.1,
    base_seed: int = 0,
    measure_memory: bool = True,
) -> list[dict]:
    """Wall time and memory of one RandMS run versus ``splits``-fold MDS.

    RandMS includes the residual-variance estimate. Timing and memory are
    taken in separate passes so that tracing overhead does not inflate
    the wall time.
    """
    rows = []
    for p in p_values:
        cfg = ScenarioConfig(
            scenario_id=f"benchmark_p{p}",
            n=n,
            p=p,
            active=p1,
            covariance=CovarianceSpec(CovFamily.TOEPLITZ_BLOCK, rho),
            betas=BetaSpec(BetaScheme.FIXED_POOL),
            q=q,
            methods=("RandMS", "MDS"),
            mds_splits=splits,
            repetitions=repetitions,
            base_seed=base_seed,
        )
        for rep in range(repetitions):
            ds = cfg.dataset(rep)
            seed = cfg.rep_seed(rep)
            for method in ("RandMS", "MDS"):
                mseed = derive_seed(seed, METHODS.index(method))
                stages = _benchmark_stages(method, ds, q, splits, mseed)
                t0 = time.perf_counter()
                for fn in stages:
                    fn()
                wall = time.perf_counter() - t0
                peak = stage_sum = None
                if measure_memory:
                    with _MemoryMeter() as meter:
                        for fn in _benchmark_stages(method, ds, q, splits, mseed):
                            meter.stage(fn)
                    peak, stage_sum = meter.peak, meter.stage_sum
                rows.append(
                    {
                        "p": p,
                        "method": "MDS" if method == "MDS" else "RandMS",
                        "rep": rep,
                        "seed": mseed,
                        "wall_time_s": wall,
                        "peak_mem_bytes": peak,
                        "stage_alloc_bytes": stage_sum,
                        "mem_method": MEMORY_METHOD if measure_memory else "",
                    }
                )
                log.info("benchmark p=%d %s rep=%d: %.2fs", p, method, rep, wall)
    return rows


def _benchmark_stages(method: str, ds: Dataset, q: float, splits: int, seed: int) -> list[Callable[[], Any]]:
    """The procedure broken into the stages whose memory is metered separately."""
    if method == "RandMS":
        state: dict[str, Any] = {}

        def sigma():
            state["s2"] = estimate_sigma2(ds.X, ds.y, seed=derive_seed(seed, 1))

        def select():
            return randms_select(ds, q, sigma2=state["s2"], seed=seed)

        return [sigma, select]
    selections: list = []
    split_seeds = [derive_seed(seed, SPLITS, i) for i in range(splits)]

    def one(s):
        return lambda: selections.append(ds_select(ds, q, s).selected)

    return [one(s) for s in split_seeds] + [lambda: mds_aggregate(selections, ds.p, q)]


def benchmark_table(rows: Sequence[dict]) -> list[dict]:
    """Mean time and memory per (p, method): the two panels of the benchmark figure."""
    out = []
    keys = sorted({(r["p"], r["method"]) for r in rows})
    for p, method in keys:
        sub = [r for r in rows if r["p"] == p and r["method"] == method]
        mem = [r["peak_mem_bytes"] for r in sub if r["peak_mem_bytes"] is not None]
        alloc = [r["stage_alloc_bytes"] for r in sub if r["stage_alloc_bytes"] is not None]
        out.append(
            {
                "p": p,
                "method": method,
                "mean_wall_time_s": float(np.mean([r["wall_time_s"] for r in sub])),
                "mean_peak_mem_bytes": float(np.mean(mem)) if mem else None,
                "mean_stage_alloc_bytes": float(np.mean(alloc)) if alloc else None,
                "repetitions": len(sub),
            }
        )
    return out
