"""CSV dataset ingestion, run configuration, and result serialization."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .data import Dataset, EstimateResult
from .learners import RegressorSpec
from .pipeline import PIPELINE_METHODS
from .regularized import GammaGrid
from .scenarios import ScenarioSpec, scenario
from .scenarios import SimulationReport


def _fmt(v) -> str:
    """Serialize a number: fixed 9 decimals near unit scale, 9 significant digits otherwise."""
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if abs(v) >= 0.1:
        return f"{v:.9f}"
    return f"{v:.9g}"


def load_dataset_csv(path: Union[str, Path], roles: Dict[str, Sequence[str]]) -> Dataset:
    """Read a headered CSV and map columns into the A/X/W/Y blocks.

    ``roles`` maps each of ``"A"``, ``"X"``, ``"W"``, ``"Y"`` to a list of
    column names (``"Y"`` may also be a single name). Any missing column or
    non-numeric cell raises with the offending name and file line.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    norm: Dict[str, List[str]] = {}
    for key in ("A", "X", "W", "Y"):
        cols = roles.get(key)
        if cols is None or (not isinstance(cols, str) and len(cols) == 0):
            raise ValueError(f"role {key} has no columns assigned")
        norm[key] = [cols] if isinstance(cols, str) else list(cols)
    if len(norm["Y"]) != 1:
        raise ValueError("role Y must name exactly one column")
    flat = [c for cols in norm.values() for c in cols]
    if len(set(flat)) != len(flat):
        raise ValueError("role column lists must be disjoint")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        missing = [c for c in flat if c not in header]
        if missing:
            raise ValueError(f"{path}: missing required column(s) {missing}")
        col_idx = {c: header.index(c) for c in flat}
        rows: Dict[str, List[List[float]]] = {k: [] for k in norm}
        n_rows = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            parsed: Dict[str, List[float]] = {}
            for key, cols in norm.items():
                vals = []
                for c in cols:
                    cell = row[col_idx[c]].strip()
                    try:
                        vals.append(float(cell))
                    except ValueError:
                        raise ValueError(
                            f"{path}: non-numeric value {cell!r} in column {c!r} at line {line_no}"
                        ) from None
                parsed[key] = vals
            for key in norm:
                rows[key].append(parsed[key])
            n_rows += 1
    if n_rows == 0:
        raise ValueError(f"{path}: no data rows")
    return Dataset(
        A=rows["A"],
        X=rows["X"],
        W=rows["W"],
        Y=[r[0] for r in rows["Y"]],
    )


def _fit_rows(results: Sequence[EstimateResult]) -> List[List[str]]:
    rows = [["method", "estimate", "std_error", "ci_lower", "ci_upper", "gamma_prime"]]
    for r in results:
        if r.beta.size != 1:
            raise ValueError("the fit report schema covers a single coefficient")
        rows.append(
            [
                r.method,
                _fmt(r.beta[0]),
                _fmt(r.std_error[0]),
                _fmt(r.ci_lower[0]),
                _fmt(r.ci_upper[0]),
                _fmt(r.gamma) if r.gamma is not None else "",
            ]
        )
    return rows


def _simulate_rows(report: SimulationReport) -> List[List[str]]:
    rows = [["method", "metric", "value"]]
    meta = [
        ("scenario", report.scenario),
        ("beta0", _fmt(report.beta0)),
        ("runs", str(report.runs)),
        ("N", str(report.n_obs)),
        ("K", str(report.K)),
        ("S", str(report.S)),
        ("level", _fmt(report.level)),
        ("seed", "" if report.seed is None else str(report.seed)),
    ]
    rows.extend([["_run", k, v] for k, v in meta])
    for m in report.methods:
        rows.append([m.method, "coverage", _fmt(m.coverage)])
        rows.append([m.method, "rejection_rate", _fmt(m.rejection_rate)])
        rows.append([m.method, "median_scaled_length", _fmt(m.median_scaled_length)])
        rows.append([m.method, "failures", str(m.n_failures)])
    return rows


def lengths_companion_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_lengths" + (path.suffix or ".csv"))


def _write_csv(path: Path, rows: List[List[str]]) -> None:
    text = "\n".join(",".join(row) for row in rows) + "\n"
    path.write_text(text, encoding="utf-8")


def emit_report(
    result: Union[EstimateResult, Sequence[EstimateResult], SimulationReport],
    path: Union[str, Path],
    format: str = "csv",
) -> None:
    """Write a fit or simulation report to ``path`` as CSV or JSON.

    Fit reports carry one row per method with the coefficient, its standard
    error ``sqrt(sigma2/N)``, the interval bounds, and the inflated
    regularization parameter (empty for plain DML). Simulation reports carry
    one ``(method, metric)`` row per summary metric plus the raw scaled
    interval lengths in a ``*_lengths`` companion file.
    """
    if format not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {format!r}")
    path = Path(path)
    if isinstance(result, SimulationReport):
        if format == "csv":
            _write_csv(path, _simulate_rows(result))
            lrows = [["method", "run", "scaled_length"]]
            for m in result.methods:
                lrows.extend(
                    [m.method, str(i + 1), _fmt(v)] for i, v in enumerate(m.ci_length_scaled)
                )
            _write_csv(lengths_companion_path(path), lrows)
        else:
            payload = {
                "scenario": result.scenario,
                "beta0": result.beta0,
                "runs": result.runs,
                "N": result.n_obs,
                "K": result.K,
                "S": result.S,
                "level": result.level,
                "seed": result.seed,
                "methods": [
                    {
                        "method": m.method,
                        "coverage": m.coverage,
                        "rejection_rate": m.rejection_rate,
                        "median_scaled_length": m.median_scaled_length,
                        "failures": m.n_failures,
                        "ci_length_scaled": list(m.ci_length_scaled),
                    }
                    for m in result.methods
                ],
            }
            path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        return

    results = [result] if isinstance(result, EstimateResult) else list(result)
    if format == "csv":
        _write_csv(path, _fit_rows(results))
    else:
        payload = [
            {
                "method": r.method,
                "estimate": float(r.beta[0]),
                "std_error": float(r.std_error[0]),
                "ci_lower": float(r.ci_lower[0]),
                "ci_upper": float(r.ci_upper[0]),
                "gamma_prime": r.gamma,
            }
            for r in results
        ]
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_simulation_csv(path: Union[str, Path]) -> dict:
    """Reload an emitted simulation CSV (round-trip of the numeric fields)."""
    out: dict = {"run": {}, "metrics": {}}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["method", "metric", "value"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for method, metric, value in reader:
            if method == "_run":
                out["run"][metric] = value
            else:
                out["metrics"][(method, metric)] = float(value) if value else math.nan
    companion = lengths_companion_path(path)
    if companion.exists():
        lengths: Dict[str, List[float]] = {}
        with open(companion, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for method, _, value in reader:
                lengths.setdefault(method, []).append(float(value))
        out["lengths"] = lengths
    return out


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

def parse_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Flat ``key = value`` file with dotted keys; ``#`` starts a comment."""
    out: Dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {line_no} is not a key=value pair: {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_gamma_grid(text: str) -> GammaGrid:
    """Comma-separated grid values; ``inf`` adds the plain-DML sentinel."""
    values = []
    include_inf = False
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token.lower() in ("inf", "infinity"):
            include_inf = True
        else:
            values.append(float(token))
    return GammaGrid(values=tuple(sorted(set(values))), include_infinity=include_inf)


def _parse_methods(text: str) -> List[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    for m in methods:
        if m not in PIPELINE_METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {PIPELINE_METHODS}")
    return methods


@dataclass
class RunConfig:
    """Merged command-line and config-file settings for one CLI invocation."""

    command: str
    seed: int
    input_path: Optional[str] = None
    output_path: Optional[str] = None
    roles: Dict[str, List[str]] = field(default_factory=dict)
    K: int = 2
    S: int = 100
    M: int = 100
    N: int = 200
    level: float = 0.95
    learner: RegressorSpec = field(default_factory=RegressorSpec)
    grid: Optional[GammaGrid] = None
    methods: List[str] = field(default_factory=lambda: ["DML", "regsDML"])
    scenario: Optional[ScenarioSpec] = None
    threads: int = 1
    format: str = "csv"

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is required; estimation never falls back to OS entropy")
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"level must lie in (0, 1), got {self.level}")
        flat = [c for cols in self.roles.values() for c in cols]
        if len(set(flat)) != len(flat):
            raise ValueError("role column lists must be disjoint")


def _learner_from_mapping(cfg: Dict[str, str]) -> RegressorSpec:
    kind = cfg.get("learner.kind", "spline")
    kwargs = {}
    if "learner.forest_trees" in cfg:
        kwargs["forest_trees"] = int(cfg["learner.forest_trees"])
    if "learner.forest_min_node" in cfg:
        kwargs["forest_min_node"] = int(cfg["learner.forest_min_node"])
    if "learner.forest_mtry" in cfg:
        raw = cfg["learner.forest_mtry"]
        kwargs["forest_mtry"] = raw if raw == "auto" else int(raw)
    if "learner.spline_df" in cfg:
        raw = cfg["learner.spline_df"]
        kwargs["spline_df"] = raw if raw == "auto" else int(raw)
    return RegressorSpec(kind=kind, **kwargs)


def _default_threads() -> int:
    env = os.environ.get("REGSDML_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def build_run_config(command: str, cli: Dict[str, object]) -> RunConfig:
    """Merge the config file (if any) with command-line flags; flags win."""
    cfg: Dict[str, str] = {}
    if cli.get("config"):
        cfg = parse_config_file(str(cli["config"]))

    def pick(flag: str, key: str, default=None):
        if cli.get(flag) is not None:
            return cli[flag]
        if key in cfg:
            return cfg[key]
        return default

    roles = {}
    for role in ("A", "X", "W", "Y"):
        raw = cfg.get(f"roles.{role}")
        if raw:
            roles[role] = [c.strip() for c in raw.split(",") if c.strip()]

    grid_text = pick("gamma_grid", "gamma_grid")
    scenario_name = pick("scenario", "scenario")
    spec = None
    if scenario_name:
        spec = scenario(
            str(scenario_name),
            beta0=cfg.get("scenario.beta0"),
            chi=cfg.get("scenario.chi"),
            kappa_noise=cfg.get("scenario.kappa_noise"),
            alpha_link=cfg.get("scenario.alpha_link"),
        )

    learner = _learner_from_mapping(cfg)
    if cli.get("learner") is not None:
        learner = RegressorSpec(kind=str(cli["learner"]), **{
            k: getattr(learner, k)
            for k in ("forest_trees", "forest_min_node", "forest_mtry", "spline_df")
        })

    seed = pick("seed", "seed")
    return RunConfig(
        command=command,
        seed=int(seed) if seed is not None else None,
        input_path=pick("data", "data"),
        output_path=pick("out", "out"),
        roles=roles,
        K=int(pick("K", "K", 2)),
        S=int(pick("S", "S", 100)),
        M=int(pick("M", "M", 100)),
        N=int(pick("N", "N", 200)),
        level=float(pick("level", "level", 0.95)),
        learner=learner,
        grid=parse_gamma_grid(str(grid_text)) if grid_text else None,
        methods=_parse_methods(str(pick("methods", "methods", "DML,regsDML"))),
        scenario=spec,
        threads=int(pick("threads", "threads", _default_threads())),
        format=str(pick("format", "format", "csv")),
    )
