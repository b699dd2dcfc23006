"""Command line front end: ``simulate``, ``analyze`` and ``benchmark``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import jsonschema
import numpy as np

from . import harness
from .datagen import BetaScheme, BetaSpec, ConfigError, CovarianceSpec, CovFamily, Dataset
from .fdrctl import randms_select

log = logging.getLogger("mirrorfdr")

SCHEMA_VERSION = 1
PRESETS = Path(__file__).with_name("presets")

_COV = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "family": {"enum": [f.value for f in CovFamily]},
        "rho": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "block_size": {"type": "integer", "minimum": 1},
    },
}
_BETAS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scheme": {"enum": [s.value for s in BetaScheme]},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "pool": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
}
_SCENARIO = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id"],
    "properties": {
        "id": {"type": "string", "pattern": "^[A-Za-z0-9_.=-]+$"},
        "kind": {"enum": ["grid", "sigma_sensitivity", "screening_violation"]},
        "n": {"type": "integer", "minimum": 4},
        "p": {"type": "integer", "minimum": 1},
        "active": {"type": "number", "minimum": 0},
        "covariance": _COV,
        "betas": _BETAS,
        "sigma2_true": {"type": "number", "exclusiveMinimum": 0},
        "sigma2_input": {"oneOf": [{"const": "estimate"}, {"type": "number", "exclusiveMinimum": 0}]},
        "q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "gamma": {"type": "number", "exclusiveMinimum": 0},
        "methods": {"type": "array", "items": {"enum": list(harness.METHODS)}, "minItems": 1, "uniqueItems": True},
        "mds_splits": {"type": "integer", "minimum": 2},
        "repetitions": {"type": "integer", "minimum": 1},
        "sweep": {"type": "object", "additionalProperties": {"type": "array", "minItems": 1}},
        "sigma2_inputs": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
    },
}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "scenarios"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "description": {"type": "string"},
        "base_seed": {"type": "integer", "minimum": 0},
        "scenarios": {"type": "array", "items": _SCENARIO},
    },
}


@dataclass
class Study:
    kind: str
    config: harness.ScenarioConfig
    sweep: dict
    sigma2_inputs: tuple = ()


def _json_path(err: jsonschema.ValidationError) -> str:
    out = "$"
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def load_config(path: str | os.PathLike) -> list[Study]:
    """Parse and validate a simulation config; raise ConfigError with a located message."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{path}: {_json_path(e)}: {e.message}" for e in errors]
        raise ConfigError("\n".join(lines))
    if not doc["scenarios"]:
        raise ConfigError(f"{path}: no scenarios")
    base_seed = doc.get("base_seed", 0)
    studies = []
    seen = set()
    for i, sc in enumerate(doc["scenarios"]):
        where = f"{path}: $.scenarios[{i}]"
        if sc["id"] in seen:
            raise ConfigError(f"{where}.id: duplicate scenario id {sc['id']!r}")
        seen.add(sc["id"])
        try:
            studies.append(_study(sc, base_seed))
        except (ConfigError, ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return studies


def _study(sc: dict, base_seed: int) -> Study:
    kind = sc.get("kind", "grid")
    base = harness.SCREENING_STRESS if kind == "screening_violation" else harness.ScenarioConfig()
    cov = dataclasses.replace(base.covariance, **sc.get("covariance", {}))
    bdict = dict(sc.get("betas", {}))
    if "pool" in bdict:
        bdict["pool"] = tuple(bdict["pool"])
    betas = dataclasses.replace(base.betas, **bdict)
    fields = {k: sc[k] for k in ("n", "p", "active", "sigma2_true", "q", "gamma", "mds_splits", "repetitions") if k in sc}
    if "sigma2_input" in sc:
        fields["sigma2_input"] = None if sc["sigma2_input"] == "estimate" else float(sc["sigma2_input"])
    if "methods" in sc:
        fields["methods"] = tuple(sc["methods"])
    cfg = dataclasses.replace(
        base, scenario_id=sc["id"], covariance=cov, betas=betas, base_seed=base_seed, **fields
    )
    if kind != "grid" and "sweep" in sc:
        raise ConfigError(f"sweep is only allowed for grid scenarios, not {kind}")
    if (kind == "sigma_sensitivity") != ("sigma2_inputs" in sc):
        raise ConfigError("sigma2_inputs is required for, and only allowed in, sigma_sensitivity scenarios")
    sweep = sc.get("sweep", {})
    harness.scenario_grid(cfg, sweep)  # validates field names early
    return Study(kind, cfg, sweep, tuple(sc.get("sigma2_inputs", ())))


def _fmt(v: Any) -> str:
    # repr of a float is the shortest string that reads back to the same double
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class _CsvWriter:
    def __init__(self, path: Path, header: Sequence[str]):
        self.header = list(header)
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.header)

    def rows(self, rows: Sequence[dict]) -> None:
        for r in rows:
            self._w.writerow([_fmt(r.get(k)) for k in self.header])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def write_csv(path: str | os.PathLike, rows: Sequence[dict], header: Sequence[str]) -> None:
    w = _CsvWriter(Path(path), header)
    w.rows(rows)
    w.close()


def read_records(path: str | os.PathLike) -> list[dict]:
    """Read records.csv back with numeric fields restored."""
    ints = {"rep", "seed", "n_selected", "peak_mem_bytes"}
    floats = {"fdp", "tpr", "sigma2_used", "tau", "wall_time_s"}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec: dict[str, Any] = {}
            for k, v in row.items():
                if v == "" and k in ints | floats:
                    rec[k] = None
                elif k in ints:
                    rec[k] = int(v)
                elif k in floats:
                    rec[k] = float(v)
                else:
                    rec[k] = v
            out.append(rec)
    return out


def _clean(x):
    """JSON has no NaN; map non-finite floats to null, recursively."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _digest(rows: Sequence[dict]) -> str:
    parts = []
    for r in rows:
        if "mean_fdr" in r:
            parts.append(f"{r['method']}: FDR {r['mean_fdr']:.3f} TPR {r['mean_tpr']:.3f}")
        else:
            parts.append(f"{r['method']}: all {r['repetitions']} failed")
        if r.get("failed"):
            parts[-1] += f" ({r['failed']} failed)"
    return "; ".join(parts)


def cmd_simulate(config: str, out: str, threads: Optional[int] = None) -> int:
    try:
        studies = load_config(config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = _CsvWriter(out_dir / "records.csv", harness.RECORD_FIELDS)
    summary: dict[str, Any] = {"config": str(config), "scenarios": [], "complete": False}
    summary_rows: list[dict] = []
    status = 0
    try:
        for study in studies:
            if study.kind == "grid":
                for cfg in harness.scenario_grid(study.config, study.sweep):
                    records = harness.run_scenario(cfg, threads)
                    writer.rows([r.row() for r in records])
                    rows = harness.summarize_records(records)
                    summary_rows.extend(rows)
                    summary["scenarios"].append({"scenario_id": cfg.scenario_id, "kind": "grid", "methods": rows})
                    print(f"{cfg.scenario_id}: {_digest(rows)}", flush=True)
            elif study.kind == "sigma_sensitivity":
                records, table = harness.sigma_sensitivity_study(
                    study.config, study.sigma2_inputs, study.config.repetitions, threads
                )
                writer.rows([r.row() for r in records])
                summary_rows.extend(harness.summarize_records(records))
                write_csv(out_dir / f"sigma_{study.config.scenario_id}.csv", table, list(table[0]))
                summary["scenarios"].append(
                    {"scenario_id": study.config.scenario_id, "kind": study.kind, "table": table}
                )
                for row in table:
                    print(
                        f"{study.config.scenario_id} sigma2_input={row['sigma2_input']}: "
                        f"FDR {row['mean_fdr']:.3f} TPR {row['mean_tpr']:.3f}",
                        flush=True,
                    )
            else:
                records, diag, info = harness.screening_violation_study(study.config, threads)
                writer.rows([r.row() for r in records])
                summary_rows.extend(harness.summarize_records(records))
                write_csv(
                    out_dir / f"screening_{study.config.scenario_id}.csv",
                    diag,
                    ["rep", "lasso_tpr", "fdp", "tpr", "null_above", "null_below", "n_screened"],
                )
                summary["scenarios"].append({"scenario_id": study.config.scenario_id, "kind": study.kind, **info})
                rho = info.get("spearman_lasso_tpr_fdr")
                shown = "undefined" if rho is None else f"{rho:.3f}"
                print(f"{study.config.scenario_id}: Spearman(LASSO TPR, FDP) {shown}", flush=True)
        summary["complete"] = True
    except KeyboardInterrupt:
        print("interrupted; partial results kept", file=sys.stderr)
        status = 130
    finally:
        writer.close()
        if summary_rows:
            write_csv(out_dir / "summary.csv", summary_rows, _summary_header(summary_rows))
        (out_dir / "summary.json").write_text(json.dumps(_clean(summary), indent=2))
    return status


def _summary_header(rows):
    header = []
    for r in rows:
        header += [k for k in r if k not in header]
    return header


# ---- analyze ---------------------------------------------------------------


class IngestionError(ValueError):
    pass


@dataclass
class AnalysisRequest:
    input: str
    outcome_col: str
    features: Optional[Sequence[str]] = None  # None means every other column
    q: float = 0.1
    gamma: float = 1.0
    sigma2: Optional[float] = None
    seed: int = 0
    log_transform_outcome: bool = False
    report_multiplicative: bool = False

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2}")


def read_table(path, outcome_col: str, features: Optional[Sequence[str]] = None):
    """Load the outcome and feature columns of a CSV as floats, with cell-level errors."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if outcome_col not in header:
        raise IngestionError(f"{path}: outcome column {outcome_col!r} not found")
    if features is None:
        features = [h for h in header if h != outcome_col]
    missing_cols = [f for f in features if f not in header]
    if missing_cols:
        raise IngestionError(f"{path}: feature columns not found: {missing_cols}")
    if outcome_col in features:
        raise IngestionError(f"{path}: outcome column {outcome_col!r} also listed as a feature")
    if not features:
        raise IngestionError(f"{path}: need at least one feature column")
    cols = [header.index(outcome_col)] + [header.index(f) for f in features]
    data = np.empty((len(rows) - 1, len(cols)))
    missing, bad = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise IngestionError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
        for j, c in enumerate(cols):
            cell = row[c].strip()
            if cell == "" or cell.upper() in ("NA", "NAN"):
                missing.append(f"line {i} column {header[c]!r}")
                continue
            try:
                data[i - 2, j] = float(cell)
            except ValueError:
                bad.append(f"line {i} column {header[c]!r}: {cell!r}")
    if missing:
        raise IngestionError(f"{path}: missing values at " + "; ".join(missing[:20]) + (" ..." if len(missing) > 20 else ""))
    if bad:
        raise IngestionError(f"{path}: non-numeric cells at " + "; ".join(bad[:20]) + (" ..." if len(bad) > 20 else ""))
    if not np.isfinite(data).all():
        raise IngestionError(f"{path}: non-finite values")
    return data[:, 1:], data[:, 0], list(features)


def _ci(est, lo, hi) -> str:
    return f"{est:.2f} [{lo:.2f}, {hi:.2f}]"


def cmd_analyze(req: AnalysisRequest) -> dict:
    """RandMS on a user table; returns the report as a dict (also rendered by ``format_report``)."""
    X, y, names = read_table(req.input, req.outcome_col, req.features)
    n = X.shape[0]
    if n < 10:
        raise IngestionError(f"need at least 10 rows, got {n}")
    if req.log_transform_outcome:
        if (y <= 0).any():
            raise IngestionError("log transform needs a strictly positive outcome")
        y = np.log(y)
    if np.ptp(y) == 0:
        raise ConfigError("outcome is constant")
    res = randms_select(Dataset(X, y), req.q, req.gamma, req.sigma2, req.seed)
    selected = []
    for j in sorted(res.selected, key=lambda j: -res.m[j]):
        entry = {
            "feature": names[j],
            "index": int(j),
            "mirror": float(res.m[j]),
            "estimate": float(res.beta_infer[j]),
            "ci_lower": float(res.ci_lower[j]),
            "ci_upper": float(res.ci_upper[j]),
        }
        if req.report_multiplicative:
            entry.update(
                multiplicative=math.exp(entry["estimate"]),
                multiplicative_lower=math.exp(entry["ci_lower"]),
                multiplicative_upper=math.exp(entry["ci_upper"]),
            )
        selected.append(entry)
    return {
        "input": str(req.input),
        "outcome": req.outcome_col,
        "log_outcome": req.log_transform_outcome,
        "n": n,
        "p": X.shape[1],
        "q": req.q,
        "gamma": req.gamma,
        "seed": req.seed,
        "sigma2_used": res.sigma2_used,
        "sigma2_estimated": req.sigma2 is None,
        "tau": res.tau,
        "n_screened": int(res.screened.size),
        "n_selected": int(res.selected.size),
        "selected": selected,
        "notes": res.notes,
    }


def format_report(rep: dict) -> str:
    lines = [
        f"n={rep['n']} p={rep['p']} q={rep['q']} gamma={rep['gamma']} seed={rep['seed']}",
        f"sigma2 {'estimated' if rep['sigma2_estimated'] else 'fixed'}: {rep['sigma2_used']:.4g}",
        "tau: " + ("none (no feature passes)" if rep["tau"] is None else f"{rep['tau']:.4g}"),
        f"screened {rep['n_screened']} -> selected {rep['n_selected']}",
    ]
    for e in rep["selected"]:
        line = f"  {e['feature']}: {_ci(e['estimate'], e['ci_lower'], e['ci_upper'])}"
        if "multiplicative" in e:
            line += f"  x{_ci(e['multiplicative'], e['multiplicative_lower'], e['multiplicative_upper'])}"
        lines.append(line)
    lines += [f"note: {n}" for n in rep["notes"]]
    return "\n".join(lines)


# ---- benchmark -------------------------------------------------------------

DEFAULT_LADDER = (1000, 2000, 5000, 10000)


def cmd_benchmark(out: str, p_values=DEFAULT_LADDER, n=300, p1=30, splits=50, repetitions=1, seed=0) -> int:
    rows = harness.benchmark(p_values, n=n, p1=p1, splits=splits, repetitions=repetitions, base_seed=seed)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out_path, rows, harness.BENCHMARK_FIELDS)
    table = harness.benchmark_table(rows)
    write_csv(out_path.with_name(out_path.stem + "_table.csv"), table, list(table[0]))
    for r in table:
        mem = r["mean_peak_mem_bytes"]
        print(f"p={r['p']} {r['method']}: {r['mean_wall_time_s']:.2f}s peak {mem / 2**20:.1f} MiB", flush=True)
    return 0


def _threads(value: Optional[int]) -> Optional[int]:
    if value is not None:
        return value
    env = os.environ.get(harness.THREADS_ENV)
    return int(env) if env else None


def _ladder(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("ladder values must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mirrorfdr", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a JSON scenario config")
    s.add_argument("--config", required=True, help="config path or the name of a bundled preset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--threads", type=int, help=f"worker processes (default: ${harness.THREADS_ENV} or all cores)")

    a = sub.add_parser("analyze", help="select features of a CSV table")
    a.add_argument("--input", required=True)
    a.add_argument("--outcome-col", required=True)
    a.add_argument("--features", help="comma-separated feature columns (default: all others)")
    a.add_argument("--q", type=float, default=0.1)
    a.add_argument("--gamma", type=float, default=1.0)
    a.add_argument("--sigma2", type=float, help="fixed noise variance (default: estimate)")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--log-outcome", action="store_true")
    a.add_argument("--multiplicative", action="store_true")
    a.add_argument("--out", help="write the report as JSON here")

    b = sub.add_parser("benchmark", help="time and memory of RandMS versus MDS")
    b.add_argument("--out", required=True, help="CSV path")
    b.add_argument("--p", type=_ladder, default=DEFAULT_LADDER, help="comma-separated p ladder")
    b.add_argument("--n", type=int, default=300)
    b.add_argument("--p1", type=int, default=30)
    b.add_argument("--splits", type=int, default=50)
    b.add_argument("--repetitions", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--smoke", action="store_true", help="single p=1000 repetition")
    return ap


def _resolve_config(name: str) -> str:
    if Path(name).exists():
        return name
    preset = PRESETS / (name if name.endswith(".json") else name + ".json")
    return str(preset) if preset.exists() else name


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "simulate":
        return cmd_simulate(_resolve_config(args.config), args.out, _threads(args.threads))
    if args.command == "analyze":
        try:
            req = AnalysisRequest(
                args.input,
                args.outcome_col,
                args.features.split(",") if args.features else None,
                args.q,
                args.gamma,
                args.sigma2,
                args.seed,
                args.log_outcome,
                args.multiplicative,
            )
            rep = cmd_analyze(req)
        except (ConfigError, IngestionError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(format_report(rep))
        if args.out:
            Path(args.out).write_text(json.dumps(_clean(rep), indent=2))
        return 0
    p_values = (1000,) if args.smoke else args.p
    reps = 1 if args.smoke else args.repetitions
    return cmd_benchmark(args.out, p_values, args.n, args.p1, args.splits, reps, args.seed)


if __name__ == "__main__":
    sys.exit(main())
