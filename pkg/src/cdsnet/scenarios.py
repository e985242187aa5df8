"""Scenario configuration, Monte Carlo driver, and cross-regime comparison.

Four regimes are supported: a pure loans market, the same market under a
Tobin tax, an unregulated CDS market with naked speculation, and a
regulated covered-CDS market with the systemic surcharge.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import economy
from .economy import EconomyParams, Regime, StepReport
from .stats import dip_pvalue, dip_statistic, fixed_histogram, permutation_pvalue

__all__ = [
    "ScenarioConfig",
    "RunResult",
    "ScenarioAggregate",
    "ComparisonReport",
    "run_seed",
    "run_scenario",
    "monte_carlo",
    "compare_scenarios",
]

LOSS_BINS = 50


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one simulation scenario."""

    regime: Regime = Regime.NO_CDS
    n_banks: int = 20
    n_firms: int = 100
    n_households: int = 1300
    steps: int = 500
    seed: int = 0
    params: EconomyParams = field(default_factory=EconomyParams)
    schema_version: int = 1

    def __post_init__(self):
        if min(self.n_banks, self.n_firms, self.n_households) <= 0:
            raise ValueError("agent counts must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not isinstance(self.regime, Regime):
            object.__setattr__(self, "regime", Regime(self.regime))

    def to_dict(self) -> dict:
        d = {
            "schema_version": self.schema_version,
            "regime": self.regime.value,
            "n_banks": self.n_banks,
            "n_firms": self.n_firms,
            "n_households": self.n_households,
            "steps": self.steps,
            "seed": self.seed,
        }
        for f in fields(EconomyParams):
            d[f.name] = getattr(self.params, f.name)
        return d

    def compatible_with(self, other: "ScenarioConfig") -> bool:
        """Same scale (agent counts and horizon), regime free to differ."""
        return (
            self.n_banks == other.n_banks
            and self.n_firms == other.n_firms
            and self.n_households == other.n_households
            and self.steps == other.steps
        )


def run_seed(base_seed: int, run_index: int) -> np.random.SeedSequence:
    """Derive the RNG stream of one Monte Carlo run.

    The (base_seed, run_index) pair is the entropy of a SeedSequence, so
    distinct run indices yield statistically independent, collision-free
    streams regardless of execution order.
    """
    return np.random.SeedSequence(entropy=(int(base_seed), int(run_index)))


@dataclass(frozen=True)
class RunResult:
    """Observables of a single run."""

    config: ScenarioConfig
    run_index: int
    reports: tuple[StepReport, ...]
    total_loss: float
    total_defaults: int
    debtrank_profile: np.ndarray  # per-bank mean over steps
    in_degree: np.ndarray  # per-bank mean over steps
    clustering: np.ndarray  # per-bank mean over steps
    in_degree_q75: float  # 75th pct of in-degree pooled over live-bank snapshots
    clustering_mean: float  # mean clustering pooled over live-bank snapshots
    steps_run: int

    def summary_bytes(self) -> bytes:
        """Canonical byte serialization used by determinism checks."""
        parts = [
            np.float64(self.total_loss).tobytes(),
            np.int64(self.total_defaults).tobytes(),
            np.float64(self.in_degree_q75).tobytes(),
            np.float64(self.clustering_mean).tobytes(),
            np.asarray(self.debtrank_profile).tobytes(),
            np.asarray(self.in_degree).tobytes(),
            np.asarray(self.clustering).tobytes(),
        ]
        for r in self.reports:
            parts.append(
                np.array(
                    [r.step, r.defaults, r.cascade_loss, r.interbank_volume,
                     r.cds_volume, r.fund_balance, r.mean_debtrank, r.money_total]
                ).tobytes()
            )
        return b"".join(parts)


def run_scenario(cfg: ScenarioConfig, run_index: int = 0, keep_reports: bool = True) -> RunResult:
    """Run one trajectory; stops early only when every bank has defaulted."""
    rng = np.random.default_rng(run_seed(cfg.seed, run_index))
    state = economy.init_economy(
        cfg.n_banks, cfg.n_firms, cfg.n_households, cfg.params, cfg.regime, rng
    )
    reports: list[StepReport] = []
    total_loss = 0.0
    total_defaults = 0
    n_banks = cfg.n_banks
    r_sum = np.zeros(n_banks)
    deg_sum = np.zeros(n_banks)
    clu_sum = np.zeros(n_banks)
    # network statistics sample the live banks of each step's snapshot:
    # a defaulted bank leaves the network, it is not a permanent degree-0 node
    deg_obs: list[np.ndarray] = []
    clu_obs: list[np.ndarray] = []
    steps_run = 0
    for _ in range(cfg.steps):
        state, report = economy.step(state)
        steps_run += 1
        total_loss += report.cascade_loss
        total_defaults += report.defaults
        r_sum += report.debtrank
        deg_sum += report.in_degree
        clu_sum += report.clustering
        alive = state.bank_alive
        if alive.any():
            deg_obs.append(report.in_degree[alive])
            clu_obs.append(report.clustering[alive])
        if keep_reports:
            reports.append(report)
        if state.halted:
            break
    denom = max(steps_run, 1)
    deg_pool = np.concatenate(deg_obs) if deg_obs else np.zeros(1)
    clu_pool = np.concatenate(clu_obs) if clu_obs else np.zeros(1)
    return RunResult(
        config=cfg,
        run_index=run_index,
        reports=tuple(reports),
        total_loss=total_loss,
        total_defaults=total_defaults,
        debtrank_profile=r_sum / denom,
        in_degree=deg_sum / denom,
        clustering=clu_sum / denom,
        in_degree_q75=float(np.quantile(deg_pool, 0.75)),
        clustering_mean=float(clu_pool.mean()),
        steps_run=steps_run,
    )


@dataclass(frozen=True)
class ScenarioAggregate:
    """Monte Carlo rollup of one scenario; keeps raw per-run vectors so that
    comparisons can re-bin and resample without rerunning."""

    config: ScenarioConfig
    n_runs: int
    losses: np.ndarray  # (n_runs,)
    defaults: np.ndarray  # (n_runs,)
    debtrank: np.ndarray  # (n_runs, B) per-bank mean
    in_degree: np.ndarray  # (n_runs, B)
    clustering: np.ndarray  # (n_runs, B)
    in_degree_q75: np.ndarray  # (n_runs,) live-bank snapshot quartile
    clustering_mean: np.ndarray  # (n_runs,) live-bank snapshot mean
    interbank_volume: np.ndarray  # (n_runs,) final-step volume

    @property
    def loss_histogram(self) -> tuple[np.ndarray, np.ndarray]:
        hi = max(float(self.interbank_volume.mean()), float(self.losses.max()), 1.0)
        return fixed_histogram(self.losses, 0.0, hi, LOSS_BINS)

    @property
    def cascade_histogram(self) -> tuple[np.ndarray, np.ndarray]:
        hi = self.config.n_banks * max(1, self.config.steps)
        top = int(self.defaults.max()) + 1 if self.n_runs else 1
        edges = np.arange(0, max(top, 2) + 1) - 0.5
        counts, _ = np.histogram(self.defaults, bins=edges)
        return edges, counts

    def moments(self) -> dict:
        return {
            "mean_loss": float(self.losses.mean()),
            "std_loss": float(self.losses.std()),
            "mean_defaults": float(self.defaults.mean()),
            "mean_debtrank": float(self.debtrank.mean()),
            "mean_clustering": float(self.clustering_mean.mean()),
            "q75_in_degree": float(self.in_degree_q75.mean()),
        }


def monte_carlo(cfg: ScenarioConfig, n_runs: int) -> ScenarioAggregate:
    """Independent runs with seeds split off (cfg.seed, run_index); the
    aggregate is a permutation-invariant stack of per-run observables."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    losses = np.zeros(n_runs)
    defaults = np.zeros(n_runs, dtype=int)
    debtrank = np.zeros((n_runs, cfg.n_banks))
    in_degree = np.zeros((n_runs, cfg.n_banks))
    clustering = np.zeros((n_runs, cfg.n_banks))
    in_degree_q75 = np.zeros(n_runs)
    clustering_mean = np.zeros(n_runs)
    volume = np.zeros(n_runs)
    for i in range(n_runs):
        res = run_scenario(cfg, run_index=i, keep_reports=False)
        losses[i] = res.total_loss
        defaults[i] = res.total_defaults
        debtrank[i] = res.debtrank_profile
        in_degree[i] = res.in_degree
        clustering[i] = res.clustering
        in_degree_q75[i] = res.in_degree_q75
        clustering_mean[i] = res.clustering_mean
        volume[i] = res.in_degree.sum()
    return ScenarioAggregate(
        config=cfg,
        n_runs=n_runs,
        losses=losses,
        defaults=defaults,
        debtrank=debtrank,
        in_degree=in_degree,
        clustering=clustering,
        in_degree_q75=in_degree_q75,
        clustering_mean=clustering_mean,
        interbank_volume=volume,
    )


@dataclass(frozen=True)
class ComparisonReport:
    """Cross-regime orderings with permutation p-values.

    `pvalues[(a, b, metric)]` is the one-sided p-value for
    mean(metric under a) < mean(metric under b).
    """

    regimes: tuple[str, ...]
    moments: dict[str, dict]
    pvalues: dict[tuple[str, str, str], float]
    dip: dict[str, tuple[float, float]]  # regime -> (statistic, p-value)
    loss_histograms: dict[str, tuple[np.ndarray, np.ndarray]]
    cascade_histograms: dict[str, tuple[np.ndarray, np.ndarray]]


_METRICS = {
    "loss": lambda agg: agg.losses,
    "debtrank": lambda agg: agg.debtrank.mean(axis=1),
    "clustering": lambda agg: agg.clustering_mean,
    "in_degree_q75": lambda agg: agg.in_degree_q75,
}


def compare_scenarios(
    aggregates: dict[str, ScenarioAggregate],
    n_perm: int = 2000,
    dip_boot: int = 200,
) -> ComparisonReport:
    """Pairwise ordering tests between regimes sharing the same scale."""
    names = sorted(aggregates)
    if len(names) < 2:
        raise ValueError("need at least two aggregates to compare")
    base_cfg = aggregates[names[0]].config
    for name in names[1:]:
        if not base_cfg.compatible_with(aggregates[name].config):
            raise ValueError(f"aggregate {name!r} was run at a different scale")
    pvalues: dict[tuple[str, str, str], float] = {}
    for metric, extract in _METRICS.items():
        for a in names:
            for b in names:
                if a == b:
                    continue
                pvalues[(a, b, metric)] = permutation_pvalue(
                    extract(aggregates[a]), extract(aggregates[b]), n_perm=n_perm
                )
    # common loss-histogram range for comparability
    hi = max(max(float(agg.losses.max()), float(agg.interbank_volume.mean())) for agg in aggregates.values())
    hi = max(hi, 1.0)
    loss_hists = {
        name: fixed_histogram(aggregates[name].losses, 0.0, hi, LOSS_BINS)
        for name in names
    }
    return ComparisonReport(
        regimes=tuple(names),
        moments={name: aggregates[name].moments() for name in names},
        pvalues=pvalues,
        dip={
            name: (
                dip_statistic(aggregates[name].losses),
                dip_pvalue(aggregates[name].losses, n_boot=dip_boot),
            )
            for name in names
        },
        loss_histograms=loss_hists,
        cascade_histograms={name: aggregates[name].cascade_histogram for name in names},
    )
