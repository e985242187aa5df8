"""Systemic risk metrics: DebtRank, expected systemic loss, and the
regulator's surcharge on CDS contracts.

DebtRank here is the two-state variant: a distressed node propagates its
distress level exactly once through the capped relative-impact matrix
W[i, j] = min(1, L_eff[i, j] / E_j), then goes inactive.  Distress levels
keep accumulating (capped at 1) even on inactive nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exposures import CdsBook, CdsContract, EffectiveExposureNetwork, effective_exposures, register_contract

__all__ = [
    "BankCapital",
    "DefaultModel",
    "SurchargeQuote",
    "impact_matrix",
    "debtrank",
    "debtrank_all",
    "expected_systemic_loss",
    "expected_systemic_loss_batch",
    "marginal_expected_loss",
    "systemic_surcharge",
    "effective_spread",
]


@dataclass(frozen=True)
class BankCapital:
    """Equity vector plus the economic-value weights used by DebtRank.

    Weights default to interbank-asset shares of the effective exposure
    network: v_j proportional to sum_i L_eff[i, j], V the total volume.
    """

    equity: np.ndarray
    value_weights: np.ndarray
    total_value: float

    @classmethod
    def from_network(cls, net: EffectiveExposureNetwork, equity) -> "BankCapital":
        equity = np.asarray(equity, dtype=float)
        assets = net.l_eff.sum(axis=0)
        total = float(assets.sum())
        weights = assets / total if total > 0 else np.zeros_like(assets)
        return cls(equity=equity, value_weights=weights, total_value=total)

    def __post_init__(self):
        w = self.value_weights
        if np.any(w < 0):
            raise ValueError("value weights must be nonnegative")
        total_w = w.sum()
        if total_w > 0 and abs(total_w - 1.0) > 1e-12:
            raise ValueError("value weights must sum to 1")


@dataclass(frozen=True)
class DefaultModel:
    """Exogenous default probabilities with an optional discount curve.

    `p_def[h]` is bank h's per-step exogenous default probability;
    `discount[t]` weights step t in the surcharge sum (defaults to no
    discounting over `horizon` steps).
    """

    p_def: np.ndarray
    horizon: int = 1
    discount: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.p_def, dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("default probabilities must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.discount is not None:
            d = np.asarray(self.discount, dtype=float)
            if np.any((d <= 0) | (d > 1)):
                raise ValueError("discount factors must lie in (0, 1]")

    def discount_curve(self) -> np.ndarray:
        if self.discount is None:
            return np.ones(self.horizon)
        return np.asarray(self.discount, dtype=float)


def impact_matrix(net: EffectiveExposureNetwork, capital: BankCapital) -> np.ndarray:
    """W[i, j] = min(1, L_eff[i, j] / E_j); zero for failed banks (E_j <= 0)."""
    e = capital.equity
    alive = e > 0
    w = np.zeros_like(net.l_eff)
    with np.errstate(divide="ignore", invalid="ignore"):
        w[:, alive] = np.minimum(1.0, net.l_eff[:, alive] / e[alive])
    return w


def _propagate(w: np.ndarray, h0: np.ndarray, active0: np.ndarray) -> np.ndarray:
    """Run the two-state dynamics for a batch of seeds (one per row)."""
    n = w.shape[0]
    h = h0.copy()
    active = active0.copy()
    inactive = np.zeros_like(active)
    for _ in range(n + 1):
        if not active.any():
            break
        h_new = np.minimum(1.0, h + (h * active) @ w)
        inactive |= active
        active = (h_new > h) & ~inactive
        h = h_new
    return h


def debtrank(net: EffectiveExposureNetwork, capital: BankCapital, seed: int) -> float:
    """Fraction of network economic value put at risk by bank `seed`'s distress."""
    n = net.n_banks
    if not 0 <= seed < n:
        raise ValueError(f"seed bank {seed} out of range")
    _check_solvency(capital)
    w = impact_matrix(net, capital)
    h0 = np.zeros((1, n))
    h0[0, seed] = 1.0
    active = h0 > 0
    h = _propagate(w, h0, active)[0]
    r = float(h @ capital.value_weights - capital.value_weights[seed])
    return min(1.0, max(0.0, r))


def debtrank_all(net: EffectiveExposureNetwork, capital: BankCapital) -> np.ndarray:
    """DebtRank of every bank, one propagation batch (row = seed)."""
    _check_solvency(capital)
    n = net.n_banks
    w = impact_matrix(net, capital)
    h0 = np.eye(n)
    h = _propagate(w, h0, h0 > 0)
    r = h @ capital.value_weights - capital.value_weights
    return np.clip(r, 0.0, 1.0)


def _check_solvency(capital: BankCapital) -> None:
    # Equity exactly zero is ambiguous: solvent banks need E > 0 for the
    # impact denominators, failed banks must be strictly below.
    if np.any(capital.equity == 0):
        raise ValueError("bank with zero equity: mark it failed (E < 0) or recapitalize")


def expected_systemic_loss(
    net: EffectiveExposureNetwork, capital: BankCapital, model: DefaultModel
) -> float:
    """sum_h P_h_def * V * R_h over the effective exposure network."""
    if capital.total_value == 0:
        return 0.0
    r = debtrank_all(net, capital)
    return float(np.sum(np.asarray(model.p_def) * capital.total_value * r))


def expected_systemic_loss_batch(l_eff_stack: np.ndarray, equity, model: DefaultModel) -> np.ndarray:
    """Expected systemic loss of each network in a (S, B, B) stack.

    Equivalent to calling :func:`expected_systemic_loss` per slice with
    capital derived from that slice, but with one propagation across the
    whole stack; used on the hot quoting path.
    """
    stack = np.asarray(l_eff_stack, dtype=float)
    n_cand, n, _ = stack.shape
    equity = np.asarray(equity, dtype=float)
    if np.any(equity == 0):
        raise ValueError("bank with zero equity: mark it failed (E < 0) or recapitalize")
    assets = stack.sum(axis=1)  # (S, B) column sums per candidate
    totals = assets.sum(axis=1)  # (S,)
    safe = np.where(totals > 0, totals, 1.0)
    weights = assets / safe[:, None]
    weights[totals <= 0] = 0.0
    alive = equity > 0
    w = np.zeros_like(stack)
    with np.errstate(divide="ignore", invalid="ignore"):
        w[:, :, alive] = np.minimum(1.0, stack[:, :, alive] / equity[alive])
    h = np.broadcast_to(np.eye(n), stack.shape).copy()
    active = h > 0
    inactive = np.zeros_like(active)
    for _ in range(n + 1):
        if not active.any():
            break
        h_new = np.minimum(1.0, h + np.einsum("sri,sij->srj", h * active, w))
        inactive |= active
        active = (h_new > h) & ~inactive
        h = h_new
    r = np.einsum("srj,sj->sr", h, weights) - weights
    np.clip(r, 0.0, 1.0, out=r)
    p = np.asarray(model.p_def, dtype=float)
    return (r * p).sum(axis=1) * totals


def marginal_expected_loss(
    l_matrix: np.ndarray,
    book: CdsBook,
    equity: np.ndarray,
    model: DefaultModel,
    candidate: CdsContract,
) -> float:
    """Expected-systemic-loss change from adding `candidate` to the book.

    Value weights and total value are recomputed from the with-contract
    network; equities are unchanged at quote time (no cash moves at
    issuance).
    """
    base_net = effective_exposures(l_matrix, book)
    base = expected_systemic_loss(base_net, BankCapital.from_network(base_net, equity), model)
    with_book = register_contract(book, candidate)
    with_net = effective_exposures(l_matrix, with_book)
    new = expected_systemic_loss(with_net, BankCapital.from_network(with_net, equity), model)
    return new - base


def systemic_surcharge(delta_series, zeta: float, discount=None) -> float:
    """Surcharge zeta * max(0, sum_t v(t) * delta_EL(t)) over the contract's life."""
    if zeta <= 0:
        raise ValueError("zeta must be > 0")
    deltas = np.asarray(delta_series, dtype=float)
    v = np.ones_like(deltas) if discount is None else np.asarray(discount, dtype=float)
    return zeta * max(0.0, float(np.sum(v * deltas)))


def effective_spread(base_spread: float, tau: float) -> float:
    """Spread actually paid by the buyer: reference-entity spread plus surcharge."""
    if base_spread < 0 or tau < 0:
        raise ValueError("spread components must be nonnegative")
    return base_spread + tau


@dataclass(frozen=True)
class SurchargeQuote:
    """Regulator's quote for one (buyer, seller, reference loan) combination.

    `delta_el` is in money units; `tau` is the per-step surcharge as a
    fraction of the notional, zero whenever the contract does not raise
    expected systemic loss.
    """

    buyer: int
    seller: int
    reference_loan: int
    delta_el: float
    tau: float
    effective_spread: float

    def __post_init__(self):
        if self.delta_el <= 0 and self.tau != 0:
            raise ValueError("risk-reducing contracts must stay untaxed")
