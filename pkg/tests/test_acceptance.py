"""End-to-end acceptance gate for the simulator.

One test per criterion, named ``test_c<N>_...`` so a verbose pytest run
prints exactly one pass/fail line each:

1. covered/naked CDS rewiring of the effective network, bit-exact
2. DebtRank equals an independent brute-force oracle on every small
   integer network (exhaustive enumeration)
3. surcharge sign law over 10^4 randomized cases and in-vivo argmin
   counterparty selection
4. mean cascade loss and mean DebtRank orderings across regimes at full
   scale (regulated < no CDS < unregulated naked, p < 0.01)
5. transaction-tax null result: its mean DebtRank is not significantly
   below the no-CDS baseline
6. network-statistics direction at full scale: clustering and upper
   quartile in-degree move down under regulation and up with naked
   speculation (p < 0.05)
7. closed-economy conservation, run determinism, and bounded cascades
8. weighted clustering unit values against direct formula evaluation

Criteria 4-6 share one Monte Carlo fixture (4 regimes x 200 runs x 500
steps at the default 20-bank scale) and take tens of minutes; everything
else runs in seconds.
"""

import itertools
import time

import numpy as np
import pytest

from cdsnet import economy
from cdsnet.economy import EconomyParams, Regime, init_economy, resolve_defaults, step
from cdsnet.exposures import (
    CdsBook,
    CdsContract,
    EffectiveExposureNetwork,
    ExposureLedger,
    Loan,
    NakedReceivable,
    effective_exposures,
    net_loans,
    weighted_clustering,
)
from cdsnet.risk import BankCapital, debtrank_all, effective_spread, systemic_surcharge
from cdsnet.scenarios import ScenarioConfig, compare_scenarios, monte_carlo, run_scenario

from test_risk import reference_debtrank


# ---- criterion 1: effective-network rewiring, bit-exact ---------------


def test_c1_covered_and_naked_rewiring_bit_exact():
    l21 = 7.25  # exactly representable, but equality below is bitwise anyway
    # four banks; bank 1 (index 0 unused borrower naming kept numeric):
    # borrower 1, lender 0 -> covered CDS bought by 0 from seller 2
    ledger = ExposureLedger(
        n_banks=4,
        loans=(Loan(id=0, borrower=1, lender=0, face_value=l21, rate=0.01,
                    outstanding=l21),),
    )
    l_matrix = net_loans(ledger)
    assert l_matrix[1, 0] == l21
    covered = CdsContract(id=0, buyer=0, seller=2, reference_entity=1,
                          reference_loan=0, notional=l21, spread=0.01,
                          covered=True)
    net = effective_exposures(l_matrix, CdsBook(4, (covered,)))
    assert net.l_eff[1, 0] == 0.0  # the buyer's exposure is fully transferred
    assert net.l_eff[1, 2] == l21  # ... onto the protection seller
    assert net.naked_receivables == ()
    untouched = np.ones((4, 4), dtype=bool)
    untouched[1, 0] = untouched[1, 2] = False
    assert np.all(net.l_eff[untouched] == l_matrix[untouched])

    # naked case: loan from lender 3 to borrower 2; bank 0 buys protection
    # from seller 1 without holding the loan
    l34 = 3.5
    ledger = ExposureLedger(
        n_banks=4,
        loans=(Loan(id=0, borrower=2, lender=3, face_value=l34, rate=0.01,
                    outstanding=l34),),
    )
    l_matrix = net_loans(ledger)
    naked = CdsContract(id=0, buyer=0, seller=1, reference_entity=2,
                        reference_loan=0, notional=l34, spread=0.01,
                        covered=False)
    net = effective_exposures(l_matrix, CdsBook(4, (naked,)))
    assert net.l_eff[2, 3] == l34  # original exposure unchanged
    assert net.l_eff[2, 1] == l34  # new seller edge
    assert net.naked_receivables == (NakedReceivable(0, 2, l34),)


# ---- criterion 2: exhaustive DebtRank oracle equivalence --------------


def _enumerate_netted_matrices(n):
    """All netted exposure matrices with entries in {0, 1, 2}: per bank
    pair one of 5 states (none, i->j weight 1 or 2, j->i weight 1 or 2)."""
    pairs = list(itertools.combinations(range(n), 2))
    for states in itertools.product(range(5), repeat=len(pairs)):
        m = np.zeros((n, n))
        for (i, j), state in zip(pairs, states):
            if state == 1:
                m[i, j] = 1.0
            elif state == 2:
                m[i, j] = 2.0
            elif state == 3:
                m[j, i] = 1.0
            elif state == 4:
                m[j, i] = 2.0
        yield m


def test_c2_debtrank_matches_oracle_exhaustively():
    start = time.time()
    checked = 0
    worst = 0.0
    for n in (2, 3, 4):
        equities = [np.array(e, dtype=float)
                    for e in itertools.product((1.0, 2.0), repeat=n)]
        for m in _enumerate_netted_matrices(n):
            net = EffectiveExposureNetwork(l_eff=m)
            assets = m.sum(axis=0)
            total = float(assets.sum())
            weights = assets / total if total > 0 else np.zeros(n)
            for equity in equities:
                cap = BankCapital(equity=equity, value_weights=weights,
                                  total_value=total)
                got = debtrank_all(net, cap)
                for seed in range(n):
                    want = reference_debtrank(m, equity, weights, seed)
                    diff = abs(got[seed] - want)
                    worst = max(worst, diff)
                    assert diff <= 1e-12, (m, equity, seed, got[seed], want)
                checked += n
    elapsed = time.time() - start
    assert checked == 5 * 4 * 2 + 5 ** 3 * 8 * 3 + 5 ** 6 * 16 * 4
    assert worst <= 1e-12
    assert elapsed < 60.0, f"exhaustive sweep took {elapsed:.1f}s"


# ---- criterion 3: surcharge sign law and argmin counterparty ----------


def test_c3_surcharge_sign_law_and_argmin_counterparty(monkeypatch):
    start = time.time()
    rng = np.random.default_rng(2024)
    for case in range(10_000):
        k = int(rng.integers(1, 9))
        deltas = rng.uniform(-5.0, 5.0, size=k)
        if case % 5 == 0:
            deltas[rng.integers(k)] = 0.0
        if case % 7 == 0:
            deltas = np.abs(deltas) * (-1.0 if case % 2 else 1.0)
        discount = rng.uniform(0.1, 1.0, size=k)
        zeta = float(rng.uniform(0.001, 1.0))
        tau = systemic_surcharge(deltas, zeta, discount=discount)
        weighted = float(np.dot(discount, deltas))
        assert tau >= 0.0
        assert (tau == 0.0) == (weighted <= 0.0)
        if tau > 0.0:
            assert tau == pytest.approx(zeta * weighted, rel=1e-9)
            # seller-independent bare spread: argmin of the effective
            # spread is exactly the argmin of the surcharge
            assert effective_spread(0.01, tau) == 0.01 + tau

    # in-vivo: every regulated contract is formed with an argmin-spread
    # seller among the quotes actually issued for that loan
    recorded = {}
    original = economy.quote_sellers

    def recording(s, buyer, loan):
        quotes = original(s, buyer, loan)
        recorded[(s.step_index, buyer, loan.id)] = quotes
        return quotes

    monkeypatch.setattr(economy, "quote_sellers", recording)
    rng = np.random.default_rng(5)
    s = init_economy(10, 40, 400, EconomyParams(), Regime.REGULATED_COVERED, rng)
    seen = set()
    formed = 0
    for _ in range(200):
        s, _report = step(s)
        for cid in sorted(set(s.cds) - seen):
            c = s.cds[cid]
            quotes = recorded[(s.step_index, c.buyer, c.reference_loan)]
            best = min(q.effective_spread for q in quotes)
            assert c.spread + c.surcharge == pytest.approx(best, abs=1e-15)
            for q in quotes:
                assert q.tau >= 0.0
                assert (q.tau == 0.0) == (q.delta_el <= 0.0)
            formed += 1
        seen = set(s.cds)
        if s.halted:
            break
    assert formed >= 20, f"only {formed} regulated contracts formed"
    assert time.time() - start < 60.0


# ---- criteria 4-6: full-scale regime orderings ------------------------

FULL_SCALE = dict(n_banks=20, n_firms=100, n_households=1300, steps=500)
N_RUNS = 200


@pytest.fixture(scope="module")
def paper_comparison():
    aggregates = {}
    for regime in Regime:
        cfg = ScenarioConfig(regime=regime, seed=11, params=EconomyParams(),
                             **FULL_SCALE)
        aggregates[regime.value] = monte_carlo(cfg, N_RUNS)
    return compare_scenarios(aggregates, n_perm=4999)


def test_c4_loss_and_debtrank_orderings(paper_comparison):
    p = paper_comparison.pvalues
    moments = paper_comparison.moments
    for metric in ("loss", "debtrank"):
        mean = {r: moments[r][f"mean_{metric}"] for r in moments}
        assert mean["regulated_covered"] < mean["no_cds"] < mean["unregulated_naked"]
        assert p[("regulated_covered", "no_cds", metric)] < 0.01
        assert p[("no_cds", "unregulated_naked", metric)] < 0.01


def test_c5_transaction_tax_null_on_debtrank(paper_comparison):
    # one-sided test of "taxed mean DebtRank below the baseline" must fail
    assert paper_comparison.pvalues[("tobin_tax", "no_cds", "debtrank")] > 0.05


def test_c6_network_statistics_directions(paper_comparison):
    p = paper_comparison.pvalues
    for metric in ("clustering", "in_degree_q75"):
        assert p[("regulated_covered", "no_cds", metric)] < 0.05
        assert p[("no_cds", "unregulated_naked", metric)] < 0.05


# ---- criterion 7: conservation, determinism, bounded cascades ---------


def test_c7_conservation_determinism_and_cascade_bounds():
    start = time.time()
    # (a) closed-economy money conservation each step, all regimes
    for regime in Regime:
        cfg = ScenarioConfig(regime=regime, n_banks=6, n_firms=20,
                             n_households=120, steps=50, seed=3,
                             params=EconomyParams(firm_cash0=2.0, bank_cash0=20.0))
        rng = np.random.default_rng(0)
        s = init_economy(cfg.n_banks, cfg.n_firms, cfg.n_households,
                         cfg.params, regime, rng)
        total0 = s.money_total()
        for _ in range(cfg.steps):
            s, report = step(s)
            assert report.money_total == pytest.approx(total0, rel=1e-9)
            if s.halted:
                break
    # (b) identical (config, seed) -> byte-identical results
    cfg = ScenarioConfig(regime=Regime.UNREGULATED_NAKED, n_banks=6, n_firms=20,
                         n_households=120, steps=50, seed=9,
                         params=EconomyParams(firm_cash0=2.0, bank_cash0=20.0))
    assert run_scenario(cfg).summary_bytes() == run_scenario(cfg).summary_bytes()
    # (c) cascades terminate within B synchronous rounds
    rng = np.random.default_rng(1)
    for _trial in range(25):
        n = 10
        s = init_economy(n, 4, 20, EconomyParams(bank_cash0=3.0),
                         Regime.NO_CDS, np.random.default_rng(0))
        for _ in range(18):
            b, l = int(rng.integers(n)), int(rng.integers(n))
            if b == l:
                continue
            amount = float(rng.uniform(1.0, 8.0))
            loan = Loan(id=s.next_loan_id, borrower=b, lender=l,
                        face_value=amount, rate=0.01, outstanding=amount)
            s.ib_loans[loan.id] = loan
            s.ib_tax_rate[loan.id] = 0.0
            s.next_loan_id += 1
            s.bank_cash[l] -= amount
            s.bank_cash[b] += amount
        trigger = int(rng.integers(n))
        s.bank_cash[trigger] -= 100.0
        result = resolve_defaults(s, [trigger])
        assert result.rounds <= n
    assert time.time() - start < 60.0


# ---- criterion 8: weighted clustering unit values ---------------------


def _barrat_direct(w):
    """Direct evaluation of the weighted clustering formula, written
    independently of the library (plain loops over the definition)."""
    n = w.shape[0]
    a = (w > 0).astype(float)
    out = np.zeros(n)
    for i in range(n):
        k = int(a[i].sum())
        s = float(w[i].sum())
        if k < 2 or s == 0:
            continue
        acc = 0.0
        for j in range(n):
            for h in range(n):
                if j == i or h == i or j == h:
                    continue
                acc += (w[i, j] + w[i, h]) / 2.0 * a[i, j] * a[i, h] * a[j, h]
        out[i] = acc / (s * (k - 1))
    return out


def test_c8_barrat_clustering_unit_values():
    # complete equal-weight triangle: all coefficients exactly 1
    triangle = np.zeros((3, 3))
    triangle[0, 1] = triangle[1, 2] = triangle[2, 0] = 2.0
    c = weighted_clustering(EffectiveExposureNetwork(l_eff=triangle))
    assert np.all(c == 1.0)

    # star: no closed triangle anywhere
    star = np.zeros((5, 5))
    star[0, 1:] = 3.0
    c = weighted_clustering(EffectiveExposureNetwork(l_eff=star))
    assert np.all(c == 0.0)

    # 4-node hand case, checked against direct formula evaluation
    l_eff = np.zeros((4, 4))
    l_eff[0, 1] = 2.0
    l_eff[0, 2] = 1.0
    l_eff[1, 2] = 3.0
    l_eff[2, 3] = 1.0
    net = EffectiveExposureNetwork(l_eff=l_eff)
    w = l_eff + l_eff.T
    got = weighted_clustering(net)
    want = _barrat_direct(w)
    assert np.all(np.abs(got - want) <= 1e-12)
    assert got[3] == 0.0 and got[0] == pytest.approx(1.0, abs=1e-12)
