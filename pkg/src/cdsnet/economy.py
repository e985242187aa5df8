"""Closed agent-based economy: households, firms, and banks interacting on
credit, interbank loan, CDS, job, and goods markets.

All randomness flows through a single per-run numpy Generator and every
market iterates in a fixed order, so identical (config, seed) pairs give
bit-identical trajectories.  Money only ever moves by transfer between
household accounts, firm liquidity, bank cash, and the guarantee fund;
defaults are book write-offs that never touch the money stock.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .exposures import (
    CdsBook,
    CdsContract,
    EffectiveExposureNetwork,
    ExposureLedger,
    Loan,
    effective_exposures,
    net_loans,
    weighted_clustering,
    weighted_in_degree,
)
from .risk import (
    BankCapital,
    DefaultModel,
    SurchargeQuote,
    debtrank_all,
    effective_spread,
    expected_systemic_loss,
    expected_systemic_loss_batch,
    systemic_surcharge,
)

__all__ = [
    "Regime",
    "EconomyParams",
    "Household",
    "Firm",
    "Bank",
    "GuaranteeFund",
    "EconomyState",
    "StepReport",
    "CascadeResult",
    "init_economy",
    "step",
    "credit_market",
    "interbank_loan_market",
    "cds_market",
    "resolve_defaults",
    "firm_bankruptcy",
]

_EPS = 1e-9


class Regime(str, Enum):
    NO_CDS = "no_cds"
    TOBIN_TAX = "tobin_tax"
    UNREGULATED_NAKED = "unregulated_naked"
    REGULATED_COVERED = "regulated_covered"


@dataclass(frozen=True)
class EconomyParams:
    """Behavioural parameters of the economy; all values configurable."""

    wage: float = 1.0
    productivity: float = 1.5
    consumption_share: float = 0.8
    goods_search: int = 2  # firms compared per household
    bank_search: int = 2  # banks approached per firm
    rate_ceiling: float = 0.06
    reduced_ask: float = 0.5  # loan fraction requested above the ceiling
    repay_fraction: float = 0.2
    firm_rate_base: float = 0.02
    interbank_rate_base: float = 0.01
    fragility_coeff: float = 0.01
    fragility_cap: float = 3.0
    specificity_scale: float = 0.01
    price_adjust: float = 0.1
    tobin_rate: float = 0.002
    p_def: float = 0.01
    zeta: float = 0.02
    base_spread: float | None = None  # defaults to p_def (actuarially fair)
    insure_prob: float = 1.0
    naked_prob: float = 1.0
    naked_tries: int = 4  # speculative purchase attempts per bank per step
    household_cash0: float = 1.0
    firm_cash0: float = 5.0
    bank_cash0: float = 100.0
    dividend_buffer: float = 1.0
    fund_cash0: float = 0.0
    min_loan: float = 1e-3
    price_floor: float = 0.01

    @property
    def spread(self) -> float:
        return self.p_def if self.base_spread is None else self.base_spread

    @property
    def cds_maturity(self) -> int:
        return max(1, math.ceil(1.0 / self.repay_fraction))


# Read-only agent views over the array-based state.


@dataclass(frozen=True)
class Household:
    id: int
    kind: str  # "worker" | "firm_owner"
    account: float
    bank: int
    employer: int | None
    wage: float
    productivity: float
    consumption_share: float
    search_breadth: int


@dataclass(frozen=True)
class Firm:
    id: int
    owner: int
    liquidity: float
    expected_demand: float
    price: float
    workforce: tuple[int, ...]
    debt: dict[int, float]  # bank -> outstanding
    bank_search: int
    rate_ceiling: float
    reduced_ask: float


@dataclass(frozen=True)
class Bank:
    id: int
    equity: float
    liquidity: float
    alive: bool
    specificity: float
    firm_loans: float
    interbank_assets: float
    interbank_liabilities: float
    cds_bought: tuple[int, ...]
    cds_sold: tuple[int, ...]


@dataclass
class GuaranteeFund:
    """Surcharge pool backstopping CDS payouts; balance may go negative
    (tracked as regulator cost) because the agency always pays."""

    balance: float = 0.0
    payouts: list[tuple[int, int, float]] = field(default_factory=list)  # (step, seller, amount)

    def copy(self) -> "GuaranteeFund":
        return GuaranteeFund(self.balance, list(self.payouts))


@dataclass(frozen=True)
class StepReport:
    step: int
    defaults: int
    cascade_loss: float
    interbank_volume: float
    cds_volume: float
    fund_balance: float
    mean_debtrank: float
    money_total: float
    debtrank: np.ndarray
    in_degree: np.ndarray
    clustering: np.ndarray

    CSV_FIELDS = (
        "step",
        "defaults",
        "cascade_loss",
        "interbank_volume",
        "cds_volume",
        "fund_balance",
        "mean_debtrank",
    )

    def csv_row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]


@dataclass(frozen=True)
class CascadeResult:
    defaulted: tuple[int, ...]
    rounds: int
    gross_writeoffs: float
    compensation: float
    naked_payouts: float = 0.0

    @property
    def loss(self) -> float:
        """Aggregate loss to the interbank system.

        Covered compensation only shifts a write-off from the creditor to
        the protection seller, so gross write-offs measure insured and
        uninsured cascades alike; naked payouts are additional losses
        inflicted on sellers beyond any loan book.
        """
        return self.gross_writeoffs + self.naked_payouts


@dataclass
class EconomyState:
    """Complete mutable world state; use .copy() before mutating a snapshot."""

    params: EconomyParams
    regime: Regime
    n_banks: int
    n_firms: int
    n_households: int
    step_index: int
    rng: np.random.Generator

    # households
    hh_account: np.ndarray
    hh_bank: np.ndarray
    hh_employer: np.ndarray  # -1 = unemployed; owners never employed
    hh_is_owner: np.ndarray

    # firms
    firm_owner: np.ndarray
    firm_liquidity: np.ndarray
    firm_price: np.ndarray
    firm_demand_exp: np.ndarray  # units
    firm_debt: np.ndarray  # (F, B) outstanding
    firm_debt_rate: np.ndarray  # (F, B) blended per-step rate
    firm_last_demand: np.ndarray  # units asked on the goods market
    firm_last_supply: np.ndarray  # units produced
    firm_last_workers: np.ndarray  # realized workforce

    # banks
    bank_cash: np.ndarray
    bank_alive: np.ndarray
    bank_specificity: np.ndarray
    bank_pending: np.ndarray  # unpaid CDS obligations (owed to the fund)

    # interbank books
    ib_loans: dict[int, Loan]
    ib_tax_rate: dict[int, float]
    cds: dict[int, CdsContract]
    cds_issue_step: dict[int, int]
    fund: GuaranteeFund

    ib_issue_step: dict[int, int] = field(default_factory=dict)
    next_loan_id: int = 0
    next_contract_id: int = 0
    halted: bool = False

    # transient per-step scratch
    _wage_bill: np.ndarray | None = None
    _wages_paid: np.ndarray | None = None
    _sales: np.ndarray | None = None
    _debt_service: np.ndarray | None = None
    _new_ib_loans: list[int] = field(default_factory=list)
    _pending_requests: list[tuple[int, int, float, float]] = field(default_factory=list)
    _bankrupt_firms: list[int] = field(default_factory=list)

    # ---- bookkeeping -------------------------------------------------

    def copy(self) -> "EconomyState":
        new = copy.copy(self)
        for name in (
            "hh_account",
            "hh_bank",
            "hh_employer",
            "hh_is_owner",
            "firm_owner",
            "firm_liquidity",
            "firm_price",
            "firm_demand_exp",
            "firm_debt",
            "firm_debt_rate",
            "firm_last_demand",
            "firm_last_supply",
            "firm_last_workers",
            "bank_cash",
            "bank_alive",
            "bank_specificity",
            "bank_pending",
        ):
            setattr(new, name, getattr(self, name).copy())
        new.ib_loans = dict(self.ib_loans)
        new.ib_tax_rate = dict(self.ib_tax_rate)
        new.ib_issue_step = dict(self.ib_issue_step)
        new.cds = dict(self.cds)
        new.cds_issue_step = dict(self.cds_issue_step)
        new.fund = self.fund.copy()
        new.rng = copy.deepcopy(self.rng)
        new._new_ib_loans = list(self._new_ib_loans)
        new._pending_requests = list(self._pending_requests)
        new._bankrupt_firms = list(self._bankrupt_firms)
        new._wage_bill = None if self._wage_bill is None else self._wage_bill.copy()
        return new

    def ib_assets(self) -> np.ndarray:
        a = np.zeros(self.n_banks)
        for ln in self.ib_loans.values():
            a[ln.lender] += ln.outstanding
        return a

    def ib_liabilities(self) -> np.ndarray:
        l = np.zeros(self.n_banks)
        for ln in self.ib_loans.values():
            l[ln.borrower] += ln.outstanding
        return l

    def bank_equity(self) -> np.ndarray:
        return (
            self.bank_cash
            + self.firm_debt.sum(axis=0)
            + self.ib_assets()
            - self.ib_liabilities()
            - self.bank_pending
        )

    def money_total(self) -> float:
        return float(
            self.hh_account.sum()
            + self.firm_liquidity.sum()
            + self.bank_cash.sum()
            + self.fund.balance
        )

    def exposure_ledger(self) -> ExposureLedger:
        return ExposureLedger(
            n_banks=self.n_banks,
            loans=tuple(self.ib_loans[i] for i in sorted(self.ib_loans)),
        )

    def cds_book(self) -> CdsBook:
        return CdsBook(
            n_banks=self.n_banks,
            contracts=tuple(self.cds[i] for i in sorted(self.cds)),
        )

    def effective_network(self) -> EffectiveExposureNetwork:
        return effective_exposures(net_loans(self.exposure_ledger()), self.cds_book())

    def metric_equity(self) -> np.ndarray:
        """Equity vector for risk metrics: dead banks flagged strictly negative."""
        e = self.bank_equity()
        e[~self.bank_alive] = -1.0
        return e

    def default_model(self) -> DefaultModel:
        p = np.where(self.bank_alive, self.params.p_def, 0.0)
        return DefaultModel(p_def=p, horizon=self.params.cds_maturity)

    # agent views

    def household(self, j: int) -> Household:
        emp = int(self.hh_employer[j])
        return Household(
            id=j,
            kind="firm_owner" if self.hh_is_owner[j] else "worker",
            account=float(self.hh_account[j]),
            bank=int(self.hh_bank[j]),
            employer=None if emp < 0 else emp,
            wage=self.params.wage,
            productivity=self.params.productivity,
            consumption_share=self.params.consumption_share,
            search_breadth=self.params.goods_search,
        )

    def firm(self, f: int) -> Firm:
        debt = {b: float(x) for b, x in enumerate(self.firm_debt[f]) if x > 0}
        return Firm(
            id=f,
            owner=int(self.firm_owner[f]),
            liquidity=float(self.firm_liquidity[f]),
            expected_demand=float(self.firm_demand_exp[f]),
            price=float(self.firm_price[f]),
            workforce=tuple(np.flatnonzero(self.hh_employer == f)),
            debt=debt,
            bank_search=self.params.bank_search,
            rate_ceiling=self.params.rate_ceiling,
            reduced_ask=self.params.reduced_ask,
        )

    def bank(self, b: int) -> Bank:
        return Bank(
            id=b,
            equity=float(self.bank_equity()[b]),
            liquidity=float(self.bank_cash[b]),
            alive=bool(self.bank_alive[b]),
            specificity=float(self.bank_specificity[b]),
            firm_loans=float(self.firm_debt[:, b].sum()),
            interbank_assets=float(self.ib_assets()[b]),
            interbank_liabilities=float(self.ib_liabilities()[b]),
            cds_bought=tuple(i for i, c in sorted(self.cds.items()) if c.buyer == b),
            cds_sold=tuple(i for i, c in sorted(self.cds.items()) if c.seller == b),
        )


def init_economy(
    n_banks: int,
    n_firms: int,
    n_households: int,
    params: EconomyParams,
    regime: Regime,
    rng: np.random.Generator,
) -> EconomyState:
    """Build the initial world: the first F households own the F firms."""
    if n_households <= n_firms:
        raise ValueError("need more households than firms (owners plus workers)")
    d0 = n_households * params.consumption_share * params.household_cash0 / n_firms
    hh_is_owner = np.zeros(n_households, dtype=bool)
    hh_is_owner[:n_firms] = True
    state = EconomyState(
        params=params,
        regime=regime,
        n_banks=n_banks,
        n_firms=n_firms,
        n_households=n_households,
        step_index=0,
        rng=rng,
        hh_account=np.full(n_households, params.household_cash0),
        hh_bank=rng.integers(0, n_banks, size=n_households),
        hh_employer=np.full(n_households, -1, dtype=int),
        hh_is_owner=hh_is_owner,
        firm_owner=np.arange(n_firms),
        firm_liquidity=np.full(n_firms, params.firm_cash0),
        firm_price=np.full(n_firms, 1.0),
        firm_demand_exp=np.full(n_firms, d0),
        firm_debt=np.zeros((n_firms, n_banks)),
        firm_debt_rate=np.zeros((n_firms, n_banks)),
        firm_last_demand=np.full(n_firms, d0),
        firm_last_supply=np.full(n_firms, d0),
        firm_last_workers=np.ceil(np.full(n_firms, d0 / params.productivity)),
        bank_cash=np.full(n_banks, params.bank_cash0),
        bank_alive=np.ones(n_banks, dtype=bool),
        bank_specificity=rng.uniform(0.0, params.specificity_scale, size=n_banks),
        bank_pending=np.zeros(n_banks),
        ib_loans={},
        ib_tax_rate={},
        cds={},
        cds_issue_step={},
        fund=GuaranteeFund(balance=params.fund_cash0),
    )
    return state


# ---- step phases (mutate in place) ----------------------------------


def _firm_planning(s: EconomyState) -> None:
    p = s.params
    p_bar = float(s.firm_price.mean())
    u = s.rng.uniform(0.0, p.price_adjust, size=s.n_firms)
    sold_out = s.firm_last_demand >= s.firm_last_supply - _EPS
    below = s.firm_price < p_bar
    # sold out & cheap -> raise price; sold out & pricey -> plan more output
    # excess supply & pricey -> cut price; excess supply & cheap -> plan less
    s.firm_price = np.where(
        sold_out & below, s.firm_price * (1 + u),
        np.where(~sold_out & ~below, s.firm_price * (1 - u), s.firm_price),
    )
    # expansion plans only make sense for firms that actually met their last
    # hiring target; otherwise borrowed wages would chase phantom workers
    met_plan = s.firm_last_workers >= np.ceil(s.firm_demand_exp / p.productivity) - _EPS
    s.firm_demand_exp = np.where(
        sold_out & ~below & met_plan, s.firm_demand_exp * (1 + u),
        np.where(~sold_out & below, s.firm_demand_exp * (1 - u), s.firm_demand_exp),
    )
    np.maximum(s.firm_price, p.price_floor, out=s.firm_price)
    np.maximum(s.firm_demand_exp, p.productivity, out=s.firm_demand_exp)
    workers_needed = np.ceil(s.firm_demand_exp / p.productivity)
    s._wage_bill = workers_needed * p.wage


def _firm_loan_rate(s: EconomyState, f: int, b: int) -> float:
    p = s.params
    fragility = float(s.firm_debt[f].sum() / (s.firm_liquidity[f] + 1.0))
    premium = p.fragility_coeff * min(fragility, p.fragility_cap)
    return p.firm_rate_base + float(s.bank_specificity[b]) + premium


def _grant_firm_loan(s: EconomyState, f: int, b: int, amount: float, rate: float) -> None:
    s.bank_cash[b] -= amount
    s.firm_liquidity[f] += amount
    old = s.firm_debt[f, b]
    s.firm_debt_rate[f, b] = (old * s.firm_debt_rate[f, b] + amount * rate) / (old + amount)
    s.firm_debt[f, b] = old + amount


def credit_market(s: EconomyState) -> None:
    """Firms with wage bills above liquidity shop `bank_search` banks for credit.

    Requests a bank cannot fund from cash are deferred to the interbank
    phase (the bank will try to raise the shortfall there).
    """
    p = s.params
    s._pending_requests = []
    alive = np.flatnonzero(s.bank_alive)
    if alive.size == 0:
        return
    for f in range(s.n_firms):
        need = float(s._wage_bill[f] - s.firm_liquidity[f])
        if need < p.min_loan:
            continue
        k = min(p.bank_search, alive.size)
        candidates = s.rng.choice(alive, size=k, replace=False)
        rates = [_firm_loan_rate(s, f, int(b)) for b in candidates]
        best = int(np.argmin(rates))
        b, rate = int(candidates[best]), float(rates[best])
        amount = need if rate <= p.rate_ceiling else p.reduced_ask * need
        if amount < p.min_loan:
            continue
        if s.bank_cash[b] >= amount:
            _grant_firm_loan(s, f, b, amount, rate)
        else:
            s._pending_requests.append((f, b, amount, rate))


def _ib_rate(
    s: EconomyState, lender: int, borrower: int, equity: np.ndarray, liabilities: np.ndarray
) -> float:
    p = s.params
    lev = float(liabilities[borrower] / (max(equity[borrower], 0.0) + 1.0))
    premium = p.fragility_coeff * min(lev, p.fragility_cap)
    rate = p.interbank_rate_base + float(s.bank_specificity[lender]) + premium
    return rate


def interbank_loan_market(s: EconomyState) -> None:
    """Banks short of cash for granted firm loans borrow from banks with excess
    liquidity at the most favorable rate; the Tobin regime adds a flat tax to
    every offered rate."""
    p = s.params
    s._new_ib_loans = []
    tax = p.tobin_rate if s.regime is Regime.TOBIN_TAX else 0.0
    for f, b, amount, rate in s._pending_requests:
        shortfall = amount - float(s.bank_cash[b])
        if shortfall > 0:
            liabilities = s.ib_liabilities()
            equity = s.bank_equity()
            lenders = [
                l for l in np.flatnonzero(s.bank_alive) if l != b and s.bank_cash[l] > p.min_loan
            ]
            offers = sorted(
                ((_ib_rate(s, int(l), b, equity, liabilities) + tax, int(l)) for l in lenders)
            )
            for offer_rate, l in offers:
                take = min(shortfall, float(s.bank_cash[l]))
                if take < p.min_loan:
                    continue
                loan = Loan(
                    id=s.next_loan_id,
                    borrower=b,
                    lender=l,
                    face_value=take,
                    rate=offer_rate - tax,
                    outstanding=take,
                )
                s.ib_loans[loan.id] = loan
                s.ib_tax_rate[loan.id] = tax
                s.ib_issue_step[loan.id] = s.step_index
                s._new_ib_loans.append(loan.id)
                s.next_loan_id += 1
                s.bank_cash[l] -= take
                s.bank_cash[b] += take
                shortfall -= take
                if shortfall <= p.min_loan:
                    break
        if s.bank_cash[b] >= amount:
            _grant_firm_loan(s, f, b, amount, rate)
        # else: the bank could not raise the full amount and does not pay out.
    s._pending_requests = []


def _eligible_sellers(
    s: EconomyState, buyer: int, reference: int, min_cash: float = 0.0
) -> list[int]:
    """Banks allowed to sell protection: alive non-parties, and (regulated
    market) only those holding enough cash to honor the promised payment."""
    return [
        int(b)
        for b in np.flatnonzero(s.bank_alive)
        if b != buyer and b != reference and s.bank_cash[b] >= min_cash
    ]


def quote_sellers(s: EconomyState, buyer: int, loan: Loan) -> list[SurchargeQuote]:
    """Regulator quotes for insuring `loan`: one per eligible seller.

    Base and candidate expected systemic losses share the same loan layer;
    only the reference entity's CDS layer differs per candidate.
    """
    p = s.params
    m = loan.borrower
    notional = loan.outstanding
    l_matrix = net_loans(s.exposure_ledger())
    book = s.cds_book()
    equity = s.metric_equity()
    model = s.default_model()
    tilde_m = np.zeros((s.n_banks, s.n_banks))
    for c in book.contracts:
        if c.reference_entity == m:
            tilde_m[c.buyer, c.seller] += c.notional
            tilde_m[c.seller, c.buyer] -= c.notional
    base_net = effective_exposures(l_matrix, book)
    base_el = expected_systemic_loss(
        base_net, BankCapital.from_network(base_net, equity), model
    )
    # the regulator admits only capitalized dealers: cash covering the
    # promised payout, so protection cannot be written by banks that would
    # fail on it
    sellers = _eligible_sellers(s, buyer, m, min_cash=notional)
    if not sellers:
        return []
    stack = np.empty((len(sellers), s.n_banks, s.n_banks))
    for idx, seller in enumerate(sellers):
        t = tilde_m.copy()
        t[buyer, seller] += notional
        t[seller, buyer] -= notional
        layer = np.maximum(0.0, t)
        l_eff = base_net.l_eff.copy()
        l_eff[m, :] = np.maximum(0.0, l_matrix[m, :] + layer.sum(axis=0) - layer.sum(axis=1))
        l_eff[m, m] = 0.0
        stack[idx] = l_eff
    cand_els = expected_systemic_loss_batch(stack, equity, model)
    quotes = []
    for seller, cand_el in zip(sellers, cand_els):
        delta = float(cand_el) - base_el
        tau_money = systemic_surcharge([delta], p.zeta)
        tau = tau_money / notional
        quotes.append(
            SurchargeQuote(
                buyer=buyer,
                seller=seller,
                reference_loan=loan.id,
                delta_el=delta,
                tau=tau,
                effective_spread=effective_spread(p.spread, tau),
            )
        )
    return quotes


def _add_contract(s: EconomyState, contract: CdsContract) -> None:
    s.cds[contract.id] = contract
    s.cds_issue_step[contract.id] = s.step_index
    s.next_contract_id += 1


def cds_market(s: EconomyState) -> None:
    """Insure this step's new interbank loans according to the regime.

    Unregulated: lenders insure at the bare spread with a uniformly random
    seller, and banks with spare cash speculate with naked CDSs.
    Regulated: lenders buy from the argmin-effective-spread seller and the
    surcharge accrues to the guarantee fund each step the contract lives.
    """
    p = s.params
    if s.regime in (Regime.NO_CDS, Regime.TOBIN_TAX):
        s._new_ib_loans = []
        return
    for loan_id in s._new_ib_loans:
        loan = s.ib_loans.get(loan_id)
        if loan is None or loan.outstanding <= 0:
            continue
        buyer, m = loan.lender, loan.borrower
        if s.rng.random() >= p.insure_prob:
            continue
        eligible = _eligible_sellers(s, buyer, m)
        if not eligible:
            continue
        if s.regime is Regime.REGULATED_COVERED:
            quotes = quote_sellers(s, buyer, loan)
            if not quotes:  # no seller with the capacity to honor the payout
                continue
            # argmin effective spread; ties (e.g. several zero surcharges)
            # go first to an incumbent creditor of the reference entity —
            # insuring with a creditor rewires along an existing edge
            # instead of wiring a previously unexposed bank into the
            # creditor set — then to the seller whose quote raised
            # expected systemic loss least, then to the lowest index
            lm = net_loans(s.exposure_ledger())
            best = min(
                range(len(quotes)),
                key=lambda i: (
                    quotes[i].effective_spread,
                    0 if lm[m, quotes[i].seller] > 0 else 1,
                    quotes[i].delta_el,
                    quotes[i].seller,
                ),
            )
            q = quotes[best]
            if lm[m, q.seller] <= 0:
                # even the best quote would wire a previously unexposed
                # bank into the reference entity's creditor set; the
                # regulator declines and the loan stays uninsured
                continue
            contract = CdsContract(
                id=s.next_contract_id,
                buyer=buyer,
                seller=q.seller,
                reference_entity=m,
                reference_loan=loan.id,
                notional=loan.outstanding,
                spread=p.spread,
                surcharge=q.tau,
                maturity=p.cds_maturity,
                covered=True,
            )
        else:
            seller = int(s.rng.choice(eligible))
            contract = CdsContract(
                id=s.next_contract_id,
                buyer=buyer,
                seller=seller,
                reference_entity=m,
                reference_loan=loan.id,
                notional=loan.outstanding,
                spread=p.spread,
                surcharge=0.0,
                maturity=p.cds_maturity,
                covered=True,
            )
        _add_contract(s, contract)
    s._new_ib_loans = []
    if s.regime is Regime.UNREGULATED_NAKED:
        _naked_demand(s)


def _naked_demand(s: EconomyState) -> None:
    """Speculative naked-CDS purchases: each cash-rich bank buys, with fixed
    probability, protection on a random live loan it is not party to."""
    p = s.params
    live = [s.ib_loans[i] for i in sorted(s.ib_loans) if s.ib_loans[i].outstanding > 0]
    if not live:
        return
    for b in np.flatnonzero(s.bank_alive):
        b = int(b)
        for _ in range(p.naked_tries):
            if s.bank_cash[b] <= 0 or s.rng.random() >= p.naked_prob:
                continue
            options = [ln for ln in live if ln.lender != b and ln.borrower != b]
            if not options:
                continue
            loan = options[int(s.rng.integers(len(options)))]
            sellers = [z for z in _eligible_sellers(s, b, loan.borrower) if z != b]
            if not sellers:
                continue
            seller = int(sellers[int(s.rng.integers(len(sellers)))])
            _add_contract(
                s,
                CdsContract(
                    id=s.next_contract_id,
                    buyer=b,
                    seller=seller,
                    reference_entity=loan.borrower,
                    reference_loan=loan.id,
                    notional=loan.outstanding,
                    spread=p.spread,
                    surcharge=0.0,
                    maturity=p.cds_maturity,
                    covered=False,
                ),
            )


def _job_market(s: EconomyState) -> None:
    """Hire/fire towards the affordable target workforce, then pay wages."""
    p = s.params
    counts = np.bincount(s.hh_employer[s.hh_employer >= 0], minlength=s.n_firms)
    desired = np.ceil(s.firm_demand_exp / p.productivity).astype(int)
    affordable = np.floor(s.firm_liquidity / p.wage).astype(int)
    target = np.minimum(desired, np.maximum(affordable, 0))
    # fire
    for f in np.flatnonzero(counts > target):
        workers = np.flatnonzero(s.hh_employer == f)
        k = int(counts[f] - target[f])
        fired = s.rng.choice(workers, size=k, replace=False)
        s.hh_employer[fired] = -1
    # hire
    pool = np.flatnonzero((s.hh_employer < 0) & ~s.hh_is_owner)
    pool = s.rng.permutation(pool)
    cursor = 0
    for f in s.rng.permutation(np.flatnonzero(counts < target)):
        k = int(target[f] - counts[f])
        hired = pool[cursor : cursor + k]
        s.hh_employer[hired] = f
        cursor += len(hired)
        if cursor >= len(pool):
            break
    # wages
    employed = s.hh_employer >= 0
    counts = np.bincount(s.hh_employer[employed], minlength=s.n_firms)
    s.firm_liquidity -= counts * p.wage
    s.hh_account[employed] += p.wage
    s.firm_last_workers = counts.astype(float)
    s._wages_paid = counts * p.wage


def _goods_market(s: EconomyState) -> None:
    """Households buy from the cheapest of `goods_search` sampled firms; firms
    sell up to current production, rationing buyers proportionally."""
    p = s.params
    counts = np.bincount(
        s.hh_employer[s.hh_employer >= 0], minlength=s.n_firms
    )
    supply_units = counts * p.productivity
    budgets = p.consumption_share * s.hh_account
    picks = s.rng.integers(0, s.n_firms, size=(s.n_households, p.goods_search))
    chosen = picks[np.arange(s.n_households), np.argmin(s.firm_price[picks], axis=1)]
    demand_money = np.bincount(chosen, weights=budgets, minlength=s.n_firms)
    supply_money = supply_units * s.firm_price
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(demand_money > 0, np.minimum(1.0, supply_money / demand_money), 0.0)
    spent = budgets * scale[chosen]
    s.hh_account -= spent
    sales = np.bincount(chosen, weights=spent, minlength=s.n_firms)
    s.firm_liquidity += sales
    s._sales = sales
    s.firm_last_demand = demand_money / np.maximum(s.firm_price, _EPS)
    s.firm_last_supply = supply_units.astype(float)


def _repayments(s: EconomyState) -> None:
    """Debt service, CDS premium/surcharge flows, and dividends.

    Firms or banks short of cash pay pro rata; a firm that cannot meet its
    full installment is flagged bankrupt.
    """
    p = s.params
    rho = p.repay_fraction
    s._bankrupt_firms = []
    # firm debt service
    due_principal = rho * s.firm_debt
    interest = s.firm_debt_rate * s.firm_debt
    total_due = due_principal.sum(axis=1) + interest.sum(axis=1)
    s._debt_service = np.zeros(s.n_firms)
    for f in np.flatnonzero(total_due > _EPS):
        f = int(f)
        pay = min(float(s.firm_liquidity[f]), float(total_due[f]))
        s._debt_service[f] = pay
        factor = pay / float(total_due[f])
        per_bank = factor * (due_principal[f] + interest[f])
        s.bank_cash += per_bank
        s.firm_liquidity[f] -= pay
        s.firm_debt[f] -= factor * due_principal[f]
        s.firm_debt[f][s.firm_debt[f] < p.min_loan] = 0.0
        if factor < 1.0 - 1e-12:
            s._bankrupt_firms.append(f)
    # CDS premiums, surcharges, and maturity/retirement
    for cid in sorted(s.cds):
        c = s.cds[cid]
        age = s.step_index - s.cds_issue_step[cid]
        ref_loan = s.ib_loans.get(c.reference_loan)
        if ref_loan is None or ref_loan.outstanding <= 0 or age >= c.maturity:
            _kill_contract(s, cid)
            continue
        premium = min(c.spread * c.notional, float(s.bank_cash[c.buyer]))
        s.bank_cash[c.buyer] -= premium
        s.bank_cash[c.seller] += premium
        if c.surcharge > 0:
            charge = min(c.surcharge * c.notional, float(s.bank_cash[c.buyer]))
            s.bank_cash[c.buyer] -= charge
            s.fund.balance += charge
    # interbank debt service: bullet loans — interest (and tax) every step,
    # principal due in full at maturity, so a covered CDS notional matches
    # the loan outstanding for the contract's whole life
    for lid in sorted(s.ib_loans):
        ln = s.ib_loans[lid]
        age = s.step_index - s.ib_issue_step.get(lid, s.step_index)
        due_p = ln.outstanding if age + 1 >= p.cds_maturity else 0.0
        due_i = ln.rate * ln.outstanding
        due_t = s.ib_tax_rate[lid] * ln.outstanding
        due = due_p + due_i + due_t
        if due <= _EPS:
            continue
        pay = min(float(s.bank_cash[ln.borrower]), due)
        factor = pay / due
        s.bank_cash[ln.borrower] -= pay
        s.bank_cash[ln.lender] += factor * (due_p + due_i)
        s.fund.balance += factor * due_t
        remaining = ln.outstanding - factor * due_p
        if remaining < p.min_loan:
            # settle the tail so the loan retires
            tail = min(remaining, float(s.bank_cash[ln.borrower]))
            s.bank_cash[ln.borrower] -= tail
            s.bank_cash[ln.lender] += tail
            remaining -= tail
        if remaining < p.min_loan:
            _retire_loan(s, lid)
        else:
            s.ib_loans[lid] = replace(ln, outstanding=remaining)
    # dividends: realized profit only, and never out of the operating buffer
    # (next wage bill plus a cushion on the coming installment)
    counts = np.bincount(s.hh_employer[s.hh_employer >= 0], minlength=s.n_firms)
    installment = ((rho + s.firm_debt_rate) * s.firm_debt).sum(axis=1)
    buffer = counts * p.wage + p.dividend_buffer * installment
    profit = s._sales - s._wages_paid - s._debt_service
    payout = np.minimum(np.maximum(0.0, profit), np.maximum(0.0, s.firm_liquidity - buffer))
    for f in np.flatnonzero(payout > _EPS):
        s.hh_account[s.firm_owner[f]] += payout[f]
    s.firm_liquidity -= payout


def _kill_contract(s: EconomyState, cid: int) -> None:
    s.cds.pop(cid, None)
    s.cds_issue_step.pop(cid, None)


def _retire_loan(s: EconomyState, lid: int) -> None:
    s.ib_loans.pop(lid, None)
    s.ib_tax_rate.pop(lid, None)
    s.ib_issue_step.pop(lid, None)
    for cid in [i for i, c in s.cds.items() if c.reference_loan == lid]:
        _kill_contract(s, cid)


def firm_bankruptcy(s: EconomyState, f: int) -> None:
    """Resolve one firm failure: creditors absorb losses pro rata, the owner's
    account is seized pro rata, and the owner restarts at population means."""
    owed = s.firm_debt[f].copy()
    total = float(owed.sum())
    if total > 0:
        seize = min(float(s.hh_account[s.firm_owner[f]]), total)
        share = owed / total
        s.hh_account[s.firm_owner[f]] -= seize
        s.bank_cash += share * seize
        # the remainder is written off (bank equity falls with the book)
        s.firm_debt[f] = 0.0
        s.firm_debt_rate[f] = 0.0
    workers = np.flatnonzero(s.hh_employer == f)
    s.hh_employer[workers] = -1
    s.firm_price[f] = float(s.firm_price.mean())
    s.firm_demand_exp[f] = float(s.firm_demand_exp.mean())
    s.firm_last_demand[f] = s.firm_demand_exp[f]
    s.firm_last_supply[f] = s.firm_demand_exp[f]


def resolve_defaults(s: EconomyState, triggers: list[int]) -> CascadeResult:
    """Iterative intra-step default cascade, processed in synchronous rounds.

    Per round: CDS contracts referencing failed banks pay out (seller cash
    first, guarantee fund covers any shortfall), creditors write off loans
    to failed banks with no recovery, failed banks' books are cancelled,
    then any solvent bank pushed to non-positive equity joins the next round.
    """
    batch = sorted(set(t for t in triggers if s.bank_alive[t]))
    backstopped = s.regime is Regime.REGULATED_COVERED
    defaulted: list[int] = []
    gross = 0.0
    compensation = 0.0
    naked_paid = 0.0
    rounds = 0
    while batch:
        rounds += 1
        if rounds > s.n_banks + 1:
            raise RuntimeError("default cascade failed to terminate")
        for b in batch:
            s.bank_alive[b] = False
        for b in batch:
            defaulted.append(b)
            # CDS payouts triggered by b's default (covered and naked alike)
            for cid in sorted(s.cds):
                c = s.cds.get(cid)
                if c is None or c.reference_entity != b:
                    continue
                paid_by_seller = min(max(float(s.bank_cash[c.seller]), 0.0), c.notional)
                shortfall = c.notional - paid_by_seller
                s.bank_cash[c.seller] -= paid_by_seller
                if backstopped and shortfall > 0:
                    # the agency always pays: buyer is made whole, the fund
                    # advances the shortfall and holds a claim on the seller
                    s.bank_cash[c.buyer] += c.notional
                    s.fund.balance -= shortfall
                    s.bank_pending[c.seller] += shortfall
                    s.fund.payouts.append((s.step_index, c.seller, shortfall))
                    received = c.notional
                else:
                    s.bank_cash[c.buyer] += paid_by_seller
                    received = paid_by_seller
                if c.covered:
                    compensation += received
                else:
                    naked_paid += received
                _kill_contract(s, cid)
            # creditors write off loans to b; b's own claims are cancelled
            for lid in sorted(s.ib_loans):
                ln = s.ib_loans.get(lid)
                if ln is None:
                    continue
                if ln.borrower == b:
                    gross += ln.outstanding
                    _retire_loan(s, lid)
                elif ln.lender == b:
                    _retire_loan(s, lid)
            s.firm_debt[:, b] = 0.0
            s.firm_debt_rate[:, b] = 0.0
            for cid in [i for i, c in s.cds.items() if b in (c.buyer, c.seller)]:
                _kill_contract(s, cid)
        equity = s.bank_equity()
        batch = sorted(
            int(b) for b in np.flatnonzero(s.bank_alive & (equity <= _EPS))
        )
    if not s.bank_alive.any():
        s.halted = True
    return CascadeResult(
        defaulted=tuple(defaulted),
        rounds=rounds,
        gross_writeoffs=gross,
        compensation=compensation,
        naked_payouts=naked_paid,
    )


def _step_report(s: EconomyState, defaults: int, loss: float) -> StepReport:
    net = s.effective_network()
    equity = s.metric_equity()
    capital = BankCapital.from_network(net, equity)
    r = debtrank_all(net, capital)
    alive = s.bank_alive
    mean_r = float(r[alive].mean()) if alive.any() else 0.0
    return StepReport(
        step=s.step_index,
        defaults=defaults,
        cascade_loss=loss,
        interbank_volume=float(sum(ln.outstanding for ln in s.ib_loans.values())),
        cds_volume=float(sum(c.notional for c in s.cds.values())),
        fund_balance=s.fund.balance,
        mean_debtrank=mean_r,
        money_total=s.money_total(),
        debtrank=r,
        in_degree=weighted_in_degree(net),
        clustering=weighted_clustering(net),
    )


def step(state: EconomyState) -> tuple[EconomyState, StepReport]:
    """Advance the economy one step through the fixed market schedule."""
    s = state.copy()
    if s.halted:
        return s, _step_report(s, 0, 0.0)
    s.step_index += 1
    _firm_planning(s)
    credit_market(s)
    interbank_loan_market(s)
    cds_market(s)
    _job_market(s)
    _goods_market(s)
    _repayments(s)
    for f in s._bankrupt_firms:
        firm_bankruptcy(s, f)
    s._bankrupt_firms = []
    equity = s.bank_equity()
    triggers = [int(b) for b in np.flatnonzero(s.bank_alive & (equity <= _EPS))]
    defaults = 0
    loss = 0.0
    if triggers:
        cascade = resolve_defaults(s, triggers)
        defaults = len(cascade.defaulted)
        loss = cascade.loss
    return s, _step_report(s, defaults, loss)
