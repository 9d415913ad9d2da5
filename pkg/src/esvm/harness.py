"""Experiment pipeline: train a chain, fit control variates, score them on
held-out chains, and emit machine-readable reports.

Protocol for one experiment: sample a training chain of n_burn + n_train
states and drop the burn-in; fit each requested method on it; sample
n_test_chains independent chains (streams 1..N of the same master seed) of
n_burn + n_test states; on every test chain compute the windowed long-run
variance of the raw functional and of each adjusted functional, their ratio
(the variance reduction factor), and the ergodic averages. Both methods are
scored on the same test chains, never resampled.

Reports are deterministic functions of the configuration: floats are written
with 17 significant digits and rows are ordered by stream index, so reruns
produce byte-identical vrf.csv files. Wall-clock data lives in a separate
run_info block that reproducibility comparisons must ignore.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import expit, ndtr

from .chains import SeedKey, Trajectory, ergodic_average, split_burn_in
from .errors import ConfigError, StageError
from .fitting import DesignSet, FitResult, RbfResponse, fit
from .samplers import SamplerConfig, sample_chain, sample_chains
from .stein import SteinFamily, feature_matrix, stein_values
from .targets import Dataset, TargetModel
from .variance import LagWindow, default_truncation, spectral_variance

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FunctionalSpec:
    """Which scalar of the state is being averaged."""

    kind: str  # coordinate | second_moment | cube | test_likelihood
    index: int = 0

    def __post_init__(self):
        if self.kind not in ("coordinate", "second_moment", "cube", "test_likelihood"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.index < 0:
            raise ValueError("coordinate index must be nonnegative")

    @property
    def name(self) -> str:
        if self.kind == "test_likelihood":
            return "test_likelihood"
        return f"{self.kind}[{self.index}]"


def make_functional(spec: FunctionalSpec, dataset: Optional[Dataset] = None,
                    regression_kind: Optional[str] = None):
    """Vectorized evaluator states (n, d) -> values (n,)."""
    if spec.kind == "coordinate":
        return lambda states: np.asarray(states)[:, spec.index].copy()
    if spec.kind == "second_moment":
        return lambda states: np.asarray(states)[:, spec.index] ** 2
    if spec.kind == "cube":
        return lambda states: np.asarray(states)[:, spec.index] ** 3
    if dataset is None or regression_kind not in ("logistic", "probit"):
        raise ConfigError("test_likelihood functional needs a dataset and a regression kind")
    signs = 2.0 * dataset.labels_test - 1.0
    feats = dataset.features_test

    def average_test_likelihood(states):
        t = np.asarray(states) @ feats.T
        per_point = expit(signs * t) if regression_kind == "logistic" else ndtr(signs * t)
        return per_point.mean(axis=1)

    return average_test_likelihood


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    target: TargetModel
    functional: FunctionalSpec
    family: SteinFamily
    sampler_kind: str
    gamma: float
    n_burn: int
    n_train: int
    n_test: int
    n_test_chains: int = 100
    b_n_train: Optional[int] = None
    b_n_test: Optional[int] = None
    methods: tuple = ("esvm", "evm")
    seed: int = 0
    x0: Optional[tuple] = None
    dataset: Optional[Dataset] = None
    regression_kind: Optional[str] = None
    ridge: Optional[float] = None
    batch_size: int = 25
    threads: int = 1

    def __post_init__(self):
        if min(self.n_train, self.n_test, self.n_test_chains) < 1 or self.n_burn < 0:
            raise ConfigError("chain sizes must be positive (burn-in may be zero)")
        methods = tuple(m for m in self.methods if m != "none")
        for m in methods:
            if m not in ("esvm", "evm"):
                raise ConfigError(f"unknown method {m!r}")
        object.__setattr__(self, "methods", methods)
        if self.train_truncation > self.n_train:
            raise ConfigError("training truncation exceeds training sample size")
        if self.test_truncation > self.n_test:
            raise ConfigError("test truncation exceeds test sample size")

    @property
    def train_truncation(self) -> int:
        return self.b_n_train if self.b_n_train is not None else default_truncation(self.n_train)

    @property
    def test_truncation(self) -> int:
        return self.b_n_test if self.b_n_test is not None else default_truncation(self.n_test)

    def start_point(self) -> np.ndarray:
        if self.x0 is None:
            return np.zeros(self.target.dim)
        return np.asarray(self.x0, dtype=np.float64)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "target": self.target.label,
            "dim": self.target.dim,
            "functional": self.functional.name,
            "family": self.family.describe(),
            "sampler": self.sampler_kind,
            "gamma": self.gamma,
            "n_burn": self.n_burn,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "n_test_chains": self.n_test_chains,
            "b_n_train": self.train_truncation,
            "b_n_test": self.test_truncation,
            "methods": list(self.methods),
            "seed": self.seed,
            "x0": [float(v) for v in self.start_point()],
            "regression_kind": self.regression_kind,
            "ridge": self.ridge,
        }


class VrfValue(NamedTuple):
    value: float
    infinite: bool


def _vrf_from_values(num: float, den: float) -> VrfValue:
    if den <= 1e-300:
        return VrfValue(num / 1e-300, True)
    return VrfValue(num / den, False)


def vrf(f_series, h_series, window: LagWindow) -> VrfValue:
    """Ratio of long-run variance estimates, raw over adjusted, on one chain.

    A vanishing (or negative, hence degenerate) denominator is clamped at
    1e-300 and flagged so aggregates can exclude it."""
    f_series = np.asarray(f_series, dtype=np.float64)
    h_series = np.asarray(h_series, dtype=np.float64)
    if f_series.shape != h_series.shape:
        raise ValueError("series length mismatch")
    num = spectral_variance(f_series, window).value
    den = spectral_variance(h_series, window).value
    return _vrf_from_values(num, den)


def acf_dump(series, max_lag: int) -> np.ndarray:
    """Normalized sample autocorrelations for lags 0..max_lag."""
    series = np.asarray(series, dtype=np.float64)
    n = series.size
    if not 0 <= max_lag < n:
        raise ValueError("max_lag must satisfy 0 <= max_lag < n")
    c = series - series.mean()
    r0 = float(c @ c) / n
    if r0 == 0.0:
        raise ValueError("degenerate series")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for s in range(1, max_lag + 1):
        out[s] = (float(c[:-s] @ c[s:]) / n) / r0
    return out


def _quartiles(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "q1": float(np.quantile(arr, 0.25)),
        "median": float(np.quantile(arr, 0.5)),
        "q3": float(np.quantile(arr, 0.75)),
    }


def _centered_quartiles(values, truth: Optional[float]) -> Optional[dict]:
    if truth is None:
        return None
    return _quartiles([v - truth for v in values])


@dataclass
class MethodReport:
    method: str
    family: dict
    fit: dict
    v_plain: list
    v_adjusted: list
    vrf: list
    infinite: list
    mean_vrf: Optional[float]
    infinite_count: int
    averages: list
    quartiles: dict
    centered_quartiles: Optional[dict]

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @staticmethod
    def from_dict(d: dict) -> "MethodReport":
        return MethodReport(**d)


@dataclass
class VRFReport:
    schema_version: int
    config: dict
    vanilla: dict
    methods: list
    acceptance: dict
    run_info: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "vanilla": self.vanilla,
            "methods": [m.to_dict() for m in self.methods],
            "acceptance": self.acceptance,
            "run_info": self.run_info,
        }

    @staticmethod
    def from_dict(d: dict) -> "VRFReport":
        return VRFReport(
            schema_version=d["schema_version"],
            config=d["config"],
            vanilla=d["vanilla"],
            methods=[MethodReport.from_dict(m) for m in d["methods"]],
            acceptance=d["acceptance"],
            run_info=d["run_info"],
        )

    def equals_modulo_run_info(self, other: "VRFReport") -> bool:
        a, b = self.to_dict(), other.to_dict()
        a.pop("run_info"), b.pop("run_info")
        return a == b


class _Stage:
    """Context manager tagging failures with the pipeline stage name."""

    def __init__(self, name: str, timings: dict):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self._start
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _train_chain(config: ExperimentConfig):
    sampler = SamplerConfig(
        kind=config.sampler_kind,
        gamma=config.gamma,
        n_steps=config.n_burn + config.n_train,
        seed=SeedKey(config.seed, 0),
    )
    traj, stats = sample_chain(sampler, config.target, config.start_point())
    return split_burn_in(traj, config.n_burn) if config.n_burn else traj, stats


def _build_design(config: ExperimentConfig, train: Trajectory, window: LagWindow) -> DesignSet:
    functional = make_functional(config.functional, config.dataset, config.regression_kind)
    f_values = functional(train.states)
    grads = config.target.gradient(train.states)
    if config.family.linear:
        psi = feature_matrix(config.family, train.states, grads)
        return DesignSet(f_values=f_values, window=window, features=psi)
    response = RbfResponse(family=config.family,
                           states=train.states[:, 0].copy(),
                           grads=grads[:, 0].copy())
    return DesignSet(f_values=f_values, window=window, response=response)


def _fit_methods(config: ExperimentConfig, design: DesignSet) -> dict:
    return {
        method: fit(design, config.family, method, ridge=config.ridge)
        for method in config.methods
    }


def _batched(streams: Sequence[int], size: int):
    for i in range(0, len(streams), size):
        yield list(streams[i : i + size])


def _evaluate_batch(config: ExperimentConfig, streams, fits: dict, window: LagWindow):
    """Sample one batch of test chains and score every method on each chain."""
    functional = make_functional(config.functional, config.dataset, config.regression_kind)
    sampler = SamplerConfig(
        kind=config.sampler_kind,
        gamma=config.gamma,
        n_steps=config.n_burn + config.n_test,
        seed=SeedKey(config.seed, 0),
    )
    rows = []
    for (traj, stats), stream in zip(
        sample_chains(sampler, config.target, streams, config.start_point()), streams
    ):
        chain = split_burn_in(traj, config.n_burn) if config.n_burn else traj
        f_values = functional(chain.states)
        v_plain = spectral_variance(f_values, window).value
        row = {
            "stream": stream,
            "v_plain": v_plain,
            "avg_vanilla": ergodic_average(f_values),
            "accept_rate": stats.rate,
            "nonfinite_log_alpha": stats.nonfinite_log_alpha,
            "methods": {},
        }
        if fits:
            grads = config.target.gradient(chain.states)
            for method, result in fits.items():
                g = stein_values(config.family, result.theta, chain.states, grads)
                h = f_values - g
                v_adjusted = spectral_variance(h, window).value
                ratio = _vrf_from_values(v_plain, v_adjusted)
                row["methods"][method] = {
                    "v_adjusted": v_adjusted,
                    "vrf": ratio.value,
                    "infinite": ratio.infinite,
                    "average": ergodic_average(h),
                }
        rows.append(row)
    return rows


def _evaluate_stage(config: ExperimentConfig, fits: dict) -> list:
    streams = list(range(1, config.n_test_chains + 1))
    window = LagWindow(config.test_truncation)
    batches = list(_batched(streams, max(1, config.batch_size)))
    if config.threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            chunks = list(pool.map(
                lambda b: _evaluate_batch(config, b, fits, window), batches
            ))
    else:
        chunks = [_evaluate_batch(config, b, fits, window) for b in batches]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: r["stream"])
    return rows


def _aggregate(config: ExperimentConfig, fits: dict, rows: list,
               train_stats, timings: dict) -> VRFReport:
    truth = config.target.exact_moments.get(config.functional.name)
    van_avgs = [r["avg_vanilla"] for r in rows]
    vanilla = {
        "averages": van_avgs,
        "v_plain": [r["v_plain"] for r in rows],
        "quartiles": _quartiles(van_avgs),
        "centered_quartiles": _centered_quartiles(van_avgs, truth),
        "exact_moment": truth,
    }
    methods = []
    for method in config.methods:
        result = fits[method]
        entries = [r["methods"][method] for r in rows]
        ratios = [e["vrf"] for e in entries]
        flags = [e["infinite"] for e in entries]
        finite = [v for v, bad in zip(ratios, flags) if not bad]
        avgs = [e["average"] for e in entries]
        methods.append(MethodReport(
            method=method,
            family=config.family.describe(result.theta),
            fit=result.to_dict(),
            v_plain=[r["v_plain"] for r in rows],
            v_adjusted=[e["v_adjusted"] for e in entries],
            vrf=ratios,
            infinite=flags,
            mean_vrf=float(np.mean(finite)) if finite else None,
            infinite_count=sum(flags),
            averages=avgs,
            quartiles=_quartiles(avgs),
            centered_quartiles=_centered_quartiles(avgs, truth),
        ))
    acceptance = {
        "train_rate": train_stats.rate,
        "train_nonfinite_log_alpha": train_stats.nonfinite_log_alpha,
        "test_rates": [r["accept_rate"] for r in rows],
        "mean_test_rate": float(np.mean([r["accept_rate"] for r in rows])),
        "test_nonfinite_log_alpha": int(sum(r["nonfinite_log_alpha"] for r in rows)),
    }
    run_info = {
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "timings": {k: round(v, 6) for k, v in timings.items()},
    }
    return VRFReport(
        schema_version=SCHEMA_VERSION,
        config=config.describe(),
        vanilla=vanilla,
        methods=methods,
        acceptance=acceptance,
        run_info=run_info,
    )


def run_experiment(config: ExperimentConfig) -> VRFReport:
    """Full pipeline; any stage failure aborts with a stage-tagged error and
    nothing is written."""
    timings: dict = {}
    with _Stage("train-sampling", timings):
        train, train_stats = _train_chain(config)
    with _Stage("fit", timings):
        design = _build_design(config, train, LagWindow(config.train_truncation))
        fits = _fit_methods(config, design)
    with _Stage("test-evaluation", timings):
        rows = _evaluate_stage(config, fits)
    with _Stage("aggregate", timings):
        return _aggregate(config, fits, rows, train_stats, timings)


def evaluate_with_parameters(config: ExperimentConfig, thetas: dict) -> VRFReport:
    """Score pre-fitted parameter vectors (method name -> theta) on fresh test
    chains, without refitting."""
    timings: dict = {}
    fits = {}
    for method, theta in thetas.items():
        theta = np.asarray(theta, dtype=np.float64)
        fits[method] = FitResult(
            theta=theta, objective_at_theta=0.0, objective_at_zero=0.0,
            method="provided", iterations=0, converged=True,
        )
    config = _with_methods(config, tuple(fits))
    with _Stage("train-sampling", timings):
        _, train_stats = _train_chain(config)
    with _Stage("test-evaluation", timings):
        rows = _evaluate_stage(config, fits)
    with _Stage("aggregate", timings):
        return _aggregate(config, fits, rows, train_stats, timings)


def _with_methods(config: ExperimentConfig, methods: tuple) -> ExperimentConfig:
    from dataclasses import replace

    return replace(config, methods=methods)


def bn_sweep(config: ExperimentConfig, bn_values: Sequence[int]) -> list:
    """Refit the spectral criterion at each training truncation and score all
    fits on one shared set of test chains (fixed test truncation). Returns
    one row per value: {b_n, mean_vrf, infinite_count}."""
    for b in bn_values:
        if not 1 <= b <= config.n_train:
            raise ConfigError(f"truncation {b} outside [1, {config.n_train}]")
    timings: dict = {}
    with _Stage("train-sampling", timings):
        train, _ = _train_chain(config)
    rows_out = []
    for b in bn_values:
        cfg_b = _with_methods(config, ("esvm",))
        with _Stage(f"fit[b_n={b}]", timings):
            design = _build_design(cfg_b, train, LagWindow(int(b)))
            fits = _fit_methods(cfg_b, design)
        with _Stage(f"evaluate[b_n={b}]", timings):
            rows = _evaluate_stage(cfg_b, fits)
        entries = [r["methods"]["esvm"] for r in rows]
        finite = [e["vrf"] for e in entries if not e["infinite"]]
        rows_out.append({
            "b_n": int(b),
            "mean_vrf": float(np.mean(finite)) if finite else None,
            "infinite_count": sum(e["infinite"] for e in entries),
        })
    return rows_out


# ---------------------------------------------------------------------------
# Serialization: deterministic text with 17-significant-digit floats.

def format_float(x) -> str:
    if x is None or not np.isfinite(x):
        return "null"
    return f"{float(x):.17g}"


def _to_json(obj) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_to_json(v) for v in obj) + "]"
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}: {_to_json(v)}" for k, v in obj.items())
        return "{" + ", ".join(items) + "}"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def report_json(report: VRFReport) -> str:
    return _to_json(report.to_dict()) + "\n"


def _vrf_csv(report: VRFReport) -> str:
    lines = ["method,stream,v_plain,v_adjusted,vrf,infinite"]
    for m in report.methods:
        for i in range(len(m.vrf)):
            lines.append(",".join([
                m.method,
                str(i + 1),
                format_float(m.v_plain[i]),
                format_float(m.v_adjusted[i]),
                format_float(m.vrf[i]),
                "1" if m.infinite[i] else "0",
            ]))
    return "\n".join(lines) + "\n"


def _boxplot_csv(report: VRFReport) -> str:
    header = "method,mean,q1,median,q3,centered_mean,centered_q1,centered_median,centered_q3"
    lines = [header]

    def _row(name, quartiles, centered):
        cells = [name] + [format_float(quartiles[k]) for k in ("mean", "q1", "median", "q3")]
        if centered is None:
            cells += ["", "", "", ""]
        else:
            cells += [format_float(centered[k]) for k in ("mean", "q1", "median", "q3")]
        lines.append(",".join(cells))

    _row("vanilla", report.vanilla["quartiles"], report.vanilla["centered_quartiles"])
    for m in report.methods:
        _row(m.method, m.quartiles, m.centered_quartiles)
    return "\n".join(lines) + "\n"


def emit_report(report: VRFReport, out_dir) -> dict:
    """Write report.json, vrf.csv and boxplot.csv; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "vrf": out / "vrf.csv",
        "boxplot": out / "boxplot.csv",
    }
    paths["report"].write_text(report_json(report))
    paths["vrf"].write_text(_vrf_csv(report))
    paths["boxplot"].write_text(_boxplot_csv(report))
    return paths


def write_acf_csv(values: np.ndarray, path) -> None:
    lines = ["lag,acf"] + [f"{s},{format_float(v)}" for s, v in enumerate(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_bn_sweep_csv(rows: list, path) -> None:
    lines = ["b_n,mean_vrf,infinite_count"]
    for r in rows:
        lines.append(f"{r['b_n']},{format_float(r['mean_vrf'])},{r['infinite_count']}")
    Path(path).write_text("\n".join(lines) + "\n")
