"""End-to-end driver: CSV ingestion, train/test split, simulation designs,
roster fitting and report emission.

A run is described by one JSON configuration::

    {
      "data": {"path": "mines.csv", "schema": {...}}      # or {"simulate": {"which": "sim2", "m": 1000, "seed": 1}}
      "ppca": {"enabled": true, "k": "auto", "k_max": null, "fit_on": "train"},
      "split": {"fraction": 0.7, "seed": 0},               # null fits on all rows and skips validation
      "models": ["poisson", "cmp", "probit_ztp", "sw_ztp", "probit_ztcmp", "sw_ztcmp"],
      "prior": {...}, "mcmc": {...}, "seed": 0,
      "validation": {"draws": 1000}, "workers": 1, "binary_offset": false, "output_dir": "out"
    }

Offsets enter the count components only unless ``binary_offset`` is set.

Every random stream is derived from the root ``seed`` so identical
configurations produce byte-identical JSON reports. The wall-clock
timestamp lives only in ``run_manifest.json``.
"""
from __future__ import annotations

import datetime as _dt
import json
import math
import platform
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy
from scipy import stats

from . import cmp, ppca
from .diagnostics import (
    DicResult,
    dic,
    fit_report,
    hpd_interval,
    parameter_summary,
    posterior_predictive,
    validation_metrics,
    write_report,
)
from .errors import ConfigError, HurdleCmpError, HurdleFitError, SchemaViolation
from .links import LinkSpec
from .mcmc import ChainConfig, PosteriorChain
from .models import (
    CmpModel,
    HurdleFit,
    PoissonModel,
    PriorSpec,
    RegressionData,
    fit_hurdle,
    fit_ordinary_cmp_exchange,
    fit_ordinary_poisson,
    rescaled_coefficients,
)

__all__ = [
    "DatasetSchema",
    "IngestResult",
    "SplitSpec",
    "SimSpec",
    "SimulatedData",
    "RowAudit",
    "ExperimentConfig",
    "ExperimentResult",
    "ROSTER",
    "MINING_SCHEMA",
    "ingest",
    "split_indices",
    "split",
    "simulate",
    "fit_roster_model",
    "prepare",
    "run_experiment",
]

ROSTER = ("poisson", "cmp", "probit_ztp", "sw_ztp", "probit_ztcmp", "sw_ztcmp")
COMPOSITION_TOTAL = 100.0


# ---------------------------------------------------------------- ingestion


@dataclass
class DatasetSchema:
    """Column roles of an input CSV.

    ``categorical_cols`` maps each categorical column to its reference
    level (``None`` takes the first level in sorted order). Columns listed
    in ``log_cols`` enter the design as ``log(1 + value)``.
    """

    response_col: str = "NUM_INJURIES"
    exposure_col: str | None = "EMP_HRS_TOTAL"
    categorical_cols: dict = field(default_factory=lambda: {"MINE_TYPE": "Sand and Gravel"})
    numeric_cols: list = field(default_factory=lambda: ["SEAM"])
    log_cols: list = field(default_factory=lambda: ["SEAM"])
    composition_cols: list = field(default_factory=list)
    composition_tol: float = 0.5

    @classmethod
    def from_dict(cls, doc: dict | None) -> "DatasetSchema":
        doc = dict(doc or {})
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown schema keys {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def required_columns(self) -> list:
        cols = [self.response_col]
        if self.exposure_col:
            cols.append(self.exposure_col)
        return cols + list(self.categorical_cols) + list(self.numeric_cols) + list(self.composition_cols)


MINING_SCHEMA = DatasetSchema(composition_cols=[
    "PCT_HRS_UNDERGROUND", "PCT_HRS_SURFACE", "PCT_HRS_STRIP", "PCT_HRS_AUGER", "PCT_HRS_CULM_BANK",
    "PCT_HRS_DREDGE", "PCT_HRS_OTHER_SURFACE", "PCT_HRS_SHOP_YARD", "PCT_HRS_MILL_PREP", "PCT_HRS_OFFICE",
])


@dataclass
class IngestResult:
    """Regression data plus the composition block kept aside for PPCA.

    ``composition`` stays in percent, each row renormalized to sum to 100.
    ``warnings`` lists ``{"row", "sum"}`` records for renormalized rows;
    row numbers count data rows from 1 (header excluded).
    """

    data: RegressionData
    composition: np.ndarray
    composition_names: list
    warnings: list


def _bad_rows(mask) -> list:
    return [int(i) + 1 for i in np.flatnonzero(np.asarray(mask))]


def _violation(what: str, mask):
    rows = _bad_rows(mask)
    if rows:
        head = ", ".join(map(str, rows[:10])) + (" ..." if len(rows) > 10 else "")
        raise SchemaViolation(f"{what} at row(s) {head}", rows)


def _numeric(frame: pd.DataFrame, col: str) -> np.ndarray:
    values = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=float)
    _violation(f"missing or non-numeric {col}", ~np.isfinite(values))
    return values


def ingest(path, schema: DatasetSchema | None = None) -> IngestResult:
    """Read a CSV and build the design matrix, offsets and composition block.

    Design columns are: intercept, one dummy per non-reference level of each
    categorical (named ``COL[level]``), then the numeric columns (``log(COL)``
    for logged ones, computed as ``log1p``).

    Raises
    ------
    SchemaViolation
        Missing columns, negative or non-integer counts, nonpositive
        exposure, invalid numeric values or composition rows off by more
        than the tolerance; ``.rows`` lists the offending data rows.
    """
    schema = schema or DatasetSchema()
    frame = pd.read_csv(path, encoding="utf-8", dtype=str, keep_default_na=False, na_values=[""])
    missing = [c for c in schema.required_columns() if c not in frame.columns]
    if missing:
        raise SchemaViolation(f"missing column(s) {missing}", [])
    m = len(frame)

    y = _numeric(frame, schema.response_col)
    _violation(f"negative or non-integer {schema.response_col}", (y < 0) | (y != np.round(y)))

    offset = None
    if schema.exposure_col:
        expo = _numeric(frame, schema.exposure_col)
        _violation(f"nonpositive {schema.exposure_col}", expo <= 0)
        offset = np.log(expo)

    columns, names = [np.ones(m)], ["intercept"]
    for col, reference in schema.categorical_cols.items():
        values = frame[col]
        _violation(f"missing {col}", values.isna())
        levels = sorted(values.unique())
        ref = levels[0] if reference is None else reference
        if ref not in levels:
            raise SchemaViolation(f"reference level {ref!r} of {col} does not occur in the data", [])
        for level in levels:
            if level != ref:
                columns.append((values == level).to_numpy(dtype=float))
                names.append(f"{col}[{level}]")
    for col in schema.numeric_cols:
        v = _numeric(frame, col)
        if col in schema.log_cols:
            _violation(f"negative {col} cannot be log-transformed", v < 0)
            columns.append(np.log1p(v))
            names.append(f"log({col})")
        else:
            columns.append(v)
            names.append(col)

    comp = np.empty((m, 0))
    notes = []
    if schema.composition_cols:
        comp = np.column_stack([_numeric(frame, c) for c in schema.composition_cols])
        _violation("negative composition share", (comp < 0).any(axis=1))
        totals = comp.sum(axis=1)
        _violation(f"composition total outside {COMPOSITION_TOTAL} +/- {schema.composition_tol}",
                   np.abs(totals - COMPOSITION_TOTAL) > schema.composition_tol)
        # float round-off is not reported
        off_total = np.flatnonzero(np.abs(totals - COMPOSITION_TOTAL) > 1e-8)
        if off_total.size:
            notes = [{"row": int(i) + 1, "sum": float(totals[i])} for i in off_total]
            warnings.warn(f"renormalized {off_total.size} composition row(s) to {COMPOSITION_TOTAL}",
                          UserWarning, stacklevel=2)
            comp = comp * (COMPOSITION_TOTAL / totals)[:, None]

    data = RegressionData(y.astype(np.int64), np.column_stack(columns), offset, tuple(names))
    return IngestResult(data, comp, list(schema.composition_cols), notes)


# -------------------------------------------------------------------- split


@dataclass(frozen=True)
class SplitSpec:
    fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ConfigError(f"train fraction must lie in (0, 1), got {self.fraction}")


def split_indices(m: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sorted (train, test) row indices; ``floor(fraction * m + 0.5)`` train rows."""
    n_train = int(math.floor(spec.fraction * m + 0.5))
    perm = np.random.default_rng(spec.seed).permutation(m)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(data: RegressionData, spec: SplitSpec) -> tuple[RegressionData, RegressionData]:
    train, test = split_indices(data.m, spec)
    return data.subset(train), data.subset(test)


# --------------------------------------------------------------- simulation

SIM_TRUTH = {
    "sim1": {"binary_link": "probit", "beta": (-1.0, -0.5), "gamma": (1.0, 0.3), "nu": 1.0},
    "sim2": {"binary_link": "skewed_weibull", "beta": (-2.0, 1.0), "alpha": 3.0, "gamma": (1.0, 0.3), "nu": 0.63},
}


@dataclass(frozen=True)
class SimSpec:
    which: str = "sim1"
    m: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.which not in SIM_TRUTH:
            raise ConfigError(f"unknown simulation {self.which!r}")
        if self.m < 10:
            raise ConfigError("simulations need m >= 10")


@dataclass
class SimulatedData:
    data: RegressionData
    truth: dict
    spec: SimSpec


def simulate(spec: SimSpec) -> SimulatedData:
    """Simulation designs 1 and 2.

    ``x ~ N(0, 1)``; the response is the elementwise product of a Bernoulli
    gate (probit for sim1, skewed Weibull with alpha=3 for sim2) and an
    untruncated count (Poisson for sim1, CMP with nu=0.63 for sim2), both
    drawn independently at the same ``x``.
    """
    truth = SIM_TRUTH[spec.which]
    rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal(spec.m)
    X = np.column_stack([np.ones(spec.m), x])
    eta = X @ np.asarray(truth["beta"])
    if truth["binary_link"] == "probit":
        p = stats.norm.cdf(eta)
    else:
        p = np.exp(-(np.clip(-eta, 0.0, None) ** truth["alpha"]))
    gate = (rng.random(spec.m) < p).astype(np.int64)
    log_lam = X @ np.asarray(truth["gamma"])
    counts = cmp.sample_batch(log_lam, truth["nu"], rng)
    data = RegressionData(gate * counts, X, None, ("intercept", "x1"))
    return SimulatedData(data, dict(truth, which=spec.which, m=spec.m, seed=spec.seed), spec)


# -------------------------------------------------------------------- audit


class RowAudit:
    """Records which original rows each pipeline stage read."""

    FIT_STAGES = ("ppca_fit", "model_fit")
    TEST_STAGES = ("validation",)

    def __init__(self):
        self.log: list[tuple[str, np.ndarray]] = []

    def record(self, stage: str, rows) -> None:
        self.log.append((stage, np.asarray(rows, dtype=np.int64).copy()))

    def rows(self, stage: str) -> np.ndarray:
        got = [r for s, r in self.log if s == stage]
        return np.unique(np.concatenate(got)) if got else np.empty(0, np.int64)

    def leaks(self, train_rows, test_rows) -> dict:
        """Rows read outside their allowed split, per stage (empty when clean)."""
        train, test = set(np.asarray(train_rows).tolist()), set(np.asarray(test_rows).tolist())
        out = {}
        for stage, rows in self.log:
            allowed = train if stage in self.FIT_STAGES else test if stage in self.TEST_STAGES else None
            if allowed is None:
                continue
            bad = sorted(set(rows.tolist()) - allowed)
            if bad:
                out.setdefault(stage, []).extend(bad)
        return out


def _take(data: RegressionData, rows, stage: str, audit: RowAudit | None) -> RegressionData:
    if audit is not None:
        audit.record(stage, rows)
    return data.subset(rows)


# ------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    data: dict
    models: list = field(default_factory=lambda: list(ROSTER))
    ppca: dict = field(default_factory=lambda: {"enabled": False})
    split: dict | None = field(default_factory=lambda: {"fraction": 0.7, "seed": 0})
    prior: dict = field(default_factory=dict)
    mcmc: dict = field(default_factory=dict)
    seed: int = 0
    validation: dict = field(default_factory=lambda: {"draws": 1000})
    workers: int = 1
    binary_offset: bool = False
    output_dir: str = "out"
    base_dir: str = "."

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(doc) - (set(cls.__dataclass_fields__) - {"base_dir"})
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        if "data" not in doc:
            raise ConfigError("configuration needs a 'data' section")
        cfg = cls(**doc, base_dir=str(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        return cls.from_dict(doc, path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def validate(self) -> None:
        if not isinstance(self.data, dict) or ("path" in self.data) == ("simulate" in self.data):
            raise ConfigError("data needs exactly one of 'path' or 'simulate'")
        bad = [m for m in self.models if m not in ROSTER]
        if bad or not self.models:
            raise ConfigError(f"unknown or empty model roster {bad}; choose from {list(ROSTER)}")
        try:
            self.chain_config()
            self.prior_spec()
            self.split_spec()
            if "simulate" in self.data:
                SimSpec(**self.data["simulate"])
            DatasetSchema.from_dict(self.data.get("schema"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        k = self.ppca.get("k", "auto")
        if not (k == "auto" or (isinstance(k, int) and k >= 1)):
            raise ConfigError(f"ppca.k must be 'auto' or a positive integer, got {k!r}")
        if self.ppca.get("fit_on", "train") not in ("train", "all"):
            raise ConfigError("ppca.fit_on must be 'train' or 'all'")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")

    def chain_config(self) -> ChainConfig:
        return ChainConfig(**self.mcmc)

    def prior_spec(self) -> PriorSpec:
        return PriorSpec(**self.prior)

    def split_spec(self) -> SplitSpec | None:
        return None if self.split is None else SplitSpec(**self.split)

    def schema(self) -> DatasetSchema:
        doc = self.data.get("schema")
        return MINING_SCHEMA if doc is None else DatasetSchema.from_dict(doc)

    def data_path(self) -> Path:
        p = Path(self.data["path"])
        return p if p.is_absolute() else Path(self.base_dir) / p


def model_seeds(seed: int) -> dict:
    """Per-model seeds keyed by roster position, so subsets reuse the same streams."""
    children = np.random.SeedSequence(seed).spawn(len(ROSTER) + 1)
    seeds = {name: int(c.generate_state(1, np.uint64)[0]) for name, c in zip(ROSTER, children)}
    seeds["ppca"] = int(children[-1].generate_state(1, np.uint32)[0])
    return seeds


# ---------------------------------------------------------------- preparing


@dataclass
class Prepared:
    """Design after PPCA plus the row partition, all keyed to original rows."""

    full: RegressionData
    train_rows: np.ndarray
    test_rows: np.ndarray
    ppca_model: ppca.PpcaModel | None = None
    ppca_scores: dict = field(default_factory=dict)
    composition_names: list = field(default_factory=list)
    ingest_warnings: list = field(default_factory=list)
    truth: dict | None = None


def prepare(config: ExperimentConfig, audit: RowAudit | None = None) -> Prepared:
    """Load or simulate the data, split it and append PPCA scores."""
    truth = None
    comp, comp_names, notes = np.empty((0, 0)), [], []
    if "simulate" in config.data:
        sim = simulate(SimSpec(**config.data["simulate"]))
        data, truth = sim.data, sim.truth
    else:
        res = ingest(config.data_path(), config.schema())
        data, comp, comp_names, notes = res.data, res.composition, res.composition_names, res.warnings

    spec = config.split_spec()
    if spec is None:
        train, test = np.arange(data.m), np.empty(0, np.int64)
    else:
        train, test = split_indices(data.m, spec)

    prep = Prepared(data, train, test, composition_names=comp_names, ingest_warnings=notes, truth=truth)
    if config.ppca.get("enabled", False) and comp.shape[1] > 0:
        fit_rows = train if config.ppca.get("fit_on", "train") == "train" else np.arange(data.m)
        if audit is not None:
            audit.record("ppca_fit", fit_rows)
        shares = comp / COMPOSITION_TOTAL
        X_fit = shares[fit_rows]
        k = config.ppca.get("k", "auto")
        seed = model_seeds(config.seed)["ppca"]
        if k == "auto":
            k_max = config.ppca.get("k_max") or shares.shape[1] - 1
            k, scores = ppca.select_k(X_fit, k_max, return_scores=True, seed=seed)
            prep.ppca_scores = {int(j): float(v) for j, v in scores.items()}
        # shares sum to one, so the ML noise variance collapses at k = d - 1
        model, _ = ppca.map_fit(X_fit, int(k), seed=seed)
        pcs = ppca.transform(shares, model)
        names = data.names + tuple(f"PC{j + 1}" for j in range(model.k))
        prep.full = RegressionData(data.y, np.column_stack([data.X, pcs]), data.offset_log, names)
        prep.ppca_model = model
    return prep


# ------------------------------------------------------------------ fitting


@dataclass
class ModelResult:
    name: str
    fit: object = None
    dic: DicResult | None = None
    error: str | None = None
    validation: dict | None = None
    validation_error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _with_seed(config: ChainConfig, seed: int) -> ChainConfig:
    d = config.to_dict()
    d["seed"] = seed
    return ChainConfig(**d)


def _parse_name(name: str) -> tuple[str, str]:
    link, family = name.split("_")
    return ("skewed_weibull" if link == "sw" else "probit"), family


def fit_roster_model(name: str, train: RegressionData, prior: PriorSpec, config: ChainConfig,
                     seed: int, binary_offset: bool = False) -> ModelResult:
    """Fit one roster entry on training data; failures are captured, not raised."""
    cfg = _with_seed(config, seed)
    try:
        if name == "poisson":
            chain = fit_ordinary_poisson(train, prior, cfg)
            return ModelResult(name, chain, dic(chain, PoissonModel(train, prior).log_lik))
        if name == "cmp":
            chain = fit_ordinary_cmp_exchange(train, prior, cfg)
            return ModelResult(name, chain, dic(chain, CmpModel(train, prior).log_lik))
        link, family = _parse_name(name)
        fit = fit_hurdle(train, link, family, prior, cfg, binary_offset=binary_offset)
        return ModelResult(name, fit)
    except HurdleFitError as exc:
        return ModelResult(name, exc.partial, error=f"{type(exc).__name__}: {exc}")
    except (HurdleCmpError, FloatingPointError, ValueError) as exc:
        return ModelResult(name, error=f"{type(exc).__name__}: {exc}")


def _chains(result: ModelResult) -> dict:
    fit = result.fit
    if isinstance(fit, PosteriorChain):
        return {"count": fit}
    if isinstance(fit, HurdleFit):
        return {k: c for k, c in (("binary", fit.binary_chain), ("positive", fit.positive_chain)) if c is not None}
    return {}


def _combined_dic(result: ModelResult) -> float:
    if isinstance(result.fit, HurdleFit):
        return result.fit.combined_dic
    return result.dic.dic if result.dic is not None else math.nan


def _validate(result: ModelResult, test: RegressionData, draws: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    pred = posterior_predictive(result.fit, test.X, test.offset_log, S=draws, rng=rng)
    return validation_metrics(test.y, pred.mean(), pred.draws)


def _model_report(result: ModelResult) -> tuple[dict, pd.DataFrame | None]:
    doc = {"model": result.name, "status": "ok" if result.ok else "failed"}
    if result.error:
        doc["error"] = result.error
    frames = []
    fit = result.fit
    if isinstance(fit, HurdleFit):
        doc.update(combined_dic=fit.combined_dic, count_family=fit.count_family,
                   link={"family": fit.link.family.value, "convention": fit.link.convention})
        doc["components"] = {}
        for part, chain in _chains(result).items():
            extra = None
            if part == "binary" and "alpha" in chain.param_names:
                scaled = rescaled_coefficients(chain)
                names = [n for n in chain.param_names if n.startswith("beta_")]
                extra = {f"scaled_{n}": scaled[:, j] for j, n in enumerate(names)}
            summary = parameter_summary(chain, extra=extra)
            res = fit.details.get(part)
            doc["components"][part] = fit_report(summary, res, acceptance_rate=chain.acceptance_rate)
            frames.append(summary.assign(component=part))
    elif isinstance(fit, PosteriorChain):
        summary = parameter_summary(fit)
        doc.update(fit_report(summary, result.dic, acceptance_rate=fit.acceptance_rate))
        doc["combined_dic"] = result.dic.dic
        frames.append(summary.assign(component="count"))
    if result.validation is not None:
        doc["validation"] = result.validation
    if result.validation_error is not None:
        doc["validation_error"] = result.validation_error
    table = pd.concat(frames, ignore_index=True) if frames else None
    return doc, table


def _reconstruction_rows(result: ModelResult, prep: Prepared) -> list:
    rows = []
    model = prep.ppca_model
    if model is None or not result.ok:
        return rows
    for part, chain in _chains(result).items():
        cols = [j for j, n in enumerate(chain.param_names) if n.split("_", 1)[-1].startswith("PC")]
        if len(cols) != model.k:
            continue
        recon = ppca.reconstruct_coefficients(chain.draws[:, cols], model)
        for j, comp_name in enumerate(prep.composition_names):
            h = hpd_interval(recon[:, j])
            rows.append({"model": result.name, "component": part, "variable": comp_name,
                         "Estimate": float(recon[:, j].mean()), "lower": h.lower, "upper": h.upper})
    return rows


@dataclass
class ExperimentResult:
    results: dict
    comparison: pd.DataFrame
    reconstruction: pd.DataFrame
    prepared: Prepared
    out_dir: Path | None

    @property
    def failures(self) -> dict:
        return {k: r.error for k, r in self.results.items() if not r.ok}


def _package_versions() -> dict:
    from . import __version__

    return {"hurdlecmp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pd.__version__, "python": platform.python_version()}


def run_experiment(config, out_dir=None, seed: int | None = None, audit: RowAudit | None = None,
                   validate: bool = True, write: bool = True) -> ExperimentResult:
    """Ingest, optional PPCA, split, roster fits, validation and reports.

    Parameters
    ----------
    config : ExperimentConfig, dict or path to a JSON file
    out_dir : path, optional
        Overrides ``config.output_dir``.
    seed : int, optional
        Overrides the root seed.
    audit : RowAudit, optional
        Receives every row-index access of the fitting and validation stages.
    validate : bool
        Skip the posterior-predictive validation when False.
    write : bool
        Skip writing files when False.

    Model failures are recorded per model and do not stop the roster.
    """
    if isinstance(config, (str, Path)):
        config = ExperimentConfig.load(config)
    elif isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    if seed is not None:
        config.seed = int(seed)
    out = Path(out_dir if out_dir is not None else config.output_dir)

    prep = prepare(config, audit)
    train = _take(prep.full, prep.train_rows, "model_fit", audit)
    prior, chain_cfg = config.prior_spec(), config.chain_config()
    seeds = model_seeds(config.seed)

    def job(name):
        return fit_roster_model(name, train, prior, chain_cfg, seeds[name], bool(config.binary_offset))

    if int(config.workers) > 1:
        with ThreadPoolExecutor(max_workers=int(config.workers)) as pool:
            fitted = list(pool.map(job, config.models))
    else:
        fitted = [job(name) for name in config.models]
    results = {r.name: r for r in fitted}

    if validate and prep.test_rows.size:
        test = _take(prep.full, prep.test_rows, "validation", audit)
        draws = int(config.validation.get("draws", 1000))
        for name, r in results.items():
            if r.ok:
                try:
                    r.validation = _validate(r, test, draws, seeds[name] ^ 0x5EED)
                except HurdleCmpError as exc:
                    r.validation_error = f"{type(exc).__name__}: {exc}"


    comparison, recon_rows = [], []
    for name, r in results.items():
        row = {"model": name, "status": "ok" if r.ok else "failed", "DIC": _combined_dic(r)}
        if isinstance(r.fit, HurdleFit):
            row.update(binary_DIC=r.fit.binary_dic, positive_DIC=r.fit.positive_dic)
        val = r.validation or {}
        row.update(MSE=val.get("mse", math.nan), MAE=val.get("mae", math.nan), KS=val.get("ks", math.nan))
        comparison.append(row)
        recon_rows.extend(_reconstruction_rows(r, prep))
    comp_cols = ["model", "status", "DIC", "binary_DIC", "positive_DIC", "MSE", "MAE", "KS"]
    comparison = pd.DataFrame(comparison).reindex(columns=comp_cols)
    recon = pd.DataFrame(recon_rows, columns=["model", "component", "variable", "Estimate", "lower", "upper"])

    if write:
        _write_outputs(out, config, prep, results, comparison, recon, seeds)
    return ExperimentResult(results, comparison, recon, prep, out if write else None)


def _write_outputs(out: Path, config, prep, results, comparison, recon, seeds) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, r in results.items():
        mdir = out / name
        mdir.mkdir(exist_ok=True)
        for part, chain in _chains(r).items():
            chain.save(mdir / f"chain_{part}.csv")
        doc, table = _model_report(r)
        write_report(doc, mdir / "summary.json", table, mdir / "parameters.csv")
    comparison.to_csv(out / "comparison.csv", index=False, float_format="%.10g")
    recon.to_csv(out / "pca_reconstruction.csv", index=False, float_format="%.10g")
    if prep.ppca_model is not None:
        prep.ppca_model.save(out / "ppca_model.json")
    manifest = {
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "seeds": {"root": config.seed, **seeds},
        "versions": _package_versions(),
        "config": config.to_dict(),
        "n_train": int(prep.train_rows.size),
        "n_test": int(prep.test_rows.size),
        "design_columns": list(prep.full.names),
        "ppca": None if prep.ppca_model is None else {"k": prep.ppca_model.k, "bic": prep.ppca_scores},
        "ingest_warnings": prep.ingest_warnings,
        "truth": prep.truth,
        "failures": {k: r.error for k, r in results.items() if not r.ok},
    }
    write_report(manifest, out / "run_manifest.json")


def load_fits(out_dir, models) -> dict:
    """Rebuild fitted models from chain files written by :func:`run_experiment`."""
    out = Path(out_dir)
    fits = {}
    for name in models:
        mdir = out / name
        if name in ("poisson", "cmp"):
            path = mdir / "chain_count.csv"
            if path.exists():
                fits[name] = PosteriorChain.load(path)
            continue
        b, p = mdir / "chain_binary.csv", mdir / "chain_positive.csv"
        if b.exists() and p.exists():
            link, family = _parse_name(name)
            fits[name] = HurdleFit(PosteriorChain.load(b), PosteriorChain.load(p), link=LinkSpec(link),
                                   count_family=family)
    return fits


def validate_saved(config: ExperimentConfig, out_dir, audit: RowAudit | None = None) -> pd.DataFrame:
    """Posterior-predictive validation on the test split for previously saved chains."""
    prep = prepare(config, audit)
    if not prep.test_rows.size:
        raise ConfigError("validation needs a train/test split")
    test = _take(prep.full, prep.test_rows, "validation", audit)
    seeds = model_seeds(config.seed)
    draws = int(config.validation.get("draws", 1000))
    rows = []
    for name, fit in load_fits(out_dir, config.models).items():
        try:
            metrics = _validate(ModelResult(name, fit), test, draws, seeds[name] ^ 0x5EED)
        except HurdleCmpError:
            metrics = {"mse": math.nan, "mae": math.nan, "ks": math.nan}
        rows.append({"model": name, "MSE": metrics["mse"], "MAE": metrics["mae"], "KS": metrics["ks"]})
    return pd.DataFrame(rows, columns=["model", "MSE", "MAE", "KS"])


def collect_reports(out_dir) -> pd.DataFrame:
    """Comparison table assembled from the ``summary.json`` files under ``out_dir``."""
    rows = []
    for path in sorted(Path(out_dir).glob("*/summary.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        val = doc.get("validation") or {}
        comps = doc.get("components", {})
        rows.append({"model": doc.get("model", path.parent.name), "status": doc.get("status"),
                     "DIC": doc.get("combined_dic"),
                     "binary_DIC": comps.get("binary", {}).get("dic"),
                     "positive_DIC": comps.get("positive", {}).get("dic"),
                     "MSE": val.get("mse"), "MAE": val.get("mae"), "KS": val.get("ks")})
    return pd.DataFrame(rows, columns=["model", "status", "DIC", "binary_DIC", "positive_DIC", "MSE", "MAE", "KS"])
