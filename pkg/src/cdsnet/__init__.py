"""cdsnet: a deterministic simulator of an interbank economy with a CDS
market, DebtRank-based systemic surcharges, and a scenario harness for
comparing regulatory regimes."""

from .economy import EconomyParams, EconomyState, Regime, init_economy, step
from .exposures import (
    CdsBook,
    CdsContract,
    EffectiveExposureNetwork,
    ExposureLedger,
    Loan,
    effective_exposures,
    net_loans,
    register_contract,
    weighted_clustering,
    weighted_in_degree,
)
from .risk import (
    BankCapital,
    DefaultModel,
    SurchargeQuote,
    debtrank,
    debtrank_all,
    effective_spread,
    expected_systemic_loss,
    marginal_expected_loss,
    systemic_surcharge,
)
from .scenarios import (
    ComparisonReport,
    RunResult,
    ScenarioAggregate,
    ScenarioConfig,
    compare_scenarios,
    monte_carlo,
    run_scenario,
)

__version__ = "0.1.0"
