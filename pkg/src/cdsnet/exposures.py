"""Two-layer exposure algebra for an interbank system.

Layer 1 is the net loan exposure matrix L (L[i, j] = net exposure of
lender j to borrower i).  Layer 2 is a multiplex of per-reference-entity
net CDS matrices C^m.  The two layers map to a single effective exposure
matrix, plus an off-network list of naked-CDS receivables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "Loan",
    "ExposureLedger",
    "CdsContract",
    "CdsBook",
    "NakedReceivable",
    "EffectiveExposureNetwork",
    "net_loans",
    "register_contract",
    "effective_exposures",
    "weighted_in_degree",
    "weighted_clustering",
    "write_matrix_csv",
    "read_matrix_csv",
]


@dataclass(frozen=True)
class Loan:
    """A single directed interbank loan: `lender` lent `face_value` to `borrower`."""

    id: int
    borrower: int
    lender: int
    face_value: float
    rate: float
    outstanding: float

    def __post_init__(self):
        if self.face_value <= 0:
            raise ValueError(f"loan {self.id}: face_value must be > 0")
        if self.outstanding < 0:
            raise ValueError(f"loan {self.id}: outstanding must be >= 0")
        if self.borrower == self.lender:
            raise ValueError(f"loan {self.id}: borrower == lender == {self.borrower}")


@dataclass(frozen=True)
class ExposureLedger:
    """Immutable collection of gross interbank loans for a universe of banks."""

    n_banks: int
    loans: tuple[Loan, ...] = ()

    def __post_init__(self):
        ids = [ln.id for ln in self.loans]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate loan ids in ledger")
        for ln in self.loans:
            if not (0 <= ln.borrower < self.n_banks and 0 <= ln.lender < self.n_banks):
                raise ValueError(f"loan {ln.id}: bank id out of range")

    def loan(self, loan_id: int) -> Loan:
        for ln in self.loans:
            if ln.id == loan_id:
                return ln
        raise KeyError(f"unknown loan id {loan_id}")

    def with_loan(self, loan: Loan) -> "ExposureLedger":
        return replace(self, loans=self.loans + (loan,))


def net_loans(ledger: ExposureLedger) -> np.ndarray:
    """Bilaterally net all loans into the nonnegative matrix L.

    L[i, j] = max(0, sum of loans j extended to i minus loans i extended
    to j).  At most one of (L[i, j], L[j, i]) is nonzero.
    """
    tilde = np.zeros((ledger.n_banks, ledger.n_banks))
    for ln in ledger.loans:
        tilde[ln.borrower, ln.lender] += ln.outstanding
        tilde[ln.lender, ln.borrower] -= ln.outstanding
    return np.maximum(0.0, tilde)


@dataclass(frozen=True)
class CdsContract:
    """A CDS sold by `seller` to `buyer` referencing `reference_loan` of bank `reference_entity`.

    `notional` is the promised default payment, frozen at issuance.
    `spread` and `surcharge` are per-step fractions of the notional.
    """

    id: int
    buyer: int
    seller: int
    reference_entity: int
    reference_loan: int
    notional: float
    spread: float
    surcharge: float = 0.0
    maturity: int = 1
    covered: bool = True

    def __post_init__(self):
        if self.notional <= 0:
            raise ValueError(f"contract {self.id}: notional must be > 0")
        if self.buyer == self.seller:
            raise ValueError(f"contract {self.id}: buyer == seller")
        if self.reference_entity in (self.buyer, self.seller):
            raise ValueError(
                f"contract {self.id}: reference entity cannot be a counter-party"
            )


@dataclass(frozen=True)
class CdsBook:
    """All live CDS contracts plus the derived per-reference-entity net layers."""

    n_banks: int
    contracts: tuple[CdsContract, ...] = ()

    def net_layers(self) -> dict[int, np.ndarray]:
        """Net layer C^m per reference entity: C^m[i, j] = net payment j owes i on m's default."""
        tildes: dict[int, np.ndarray] = {}
        for c in self.contracts:
            t = tildes.get(c.reference_entity)
            if t is None:
                t = np.zeros((self.n_banks, self.n_banks))
                tildes[c.reference_entity] = t
            t[c.buyer, c.seller] += c.notional
            t[c.seller, c.buyer] -= c.notional
        return {m: np.maximum(0.0, t) for m, t in tildes.items()}


def register_contract(
    book: CdsBook,
    contract: CdsContract,
    ledger: ExposureLedger | None = None,
    *,
    covered_only: bool = False,
) -> CdsBook:
    """Add a contract to the book; the net layers absorb offsetting positions.

    When a ledger is given the reference loan must exist and the covered
    flag must agree with the loan's lender.  `covered_only` (the
    regulated regime) rejects naked contracts.
    """
    if covered_only and not contract.covered:
        raise ValueError(f"contract {contract.id}: naked CDS rejected in regulated regime")
    if ledger is not None:
        loan = ledger.loan(contract.reference_loan)  # KeyError if unknown
        if loan.borrower != contract.reference_entity:
            raise ValueError(
                f"contract {contract.id}: reference loan {loan.id} is not a "
                f"liability of bank {contract.reference_entity}"
            )
        if contract.covered != (loan.lender == contract.buyer):
            raise ValueError(
                f"contract {contract.id}: covered flag inconsistent with loan lender"
            )
    return replace(book, contracts=book.contracts + (contract,))


@dataclass(frozen=True)
class NakedReceivable:
    """Off-network payout claim: `beneficiary` collects `amount` if `reference_entity` fails."""

    beneficiary: int
    reference_entity: int
    amount: float


@dataclass(frozen=True)
class EffectiveExposureNetwork:
    """Single-layer effective exposure matrix plus off-network naked receivables."""

    l_eff: np.ndarray
    naked_receivables: tuple[NakedReceivable, ...] = ()

    @property
    def n_banks(self) -> int:
        return self.l_eff.shape[0]


def effective_exposures(l_matrix: np.ndarray, book: CdsBook) -> EffectiveExposureNetwork:
    """Collapse loan layer and CDS layers into the effective exposure network.

    Row i (borrower i) is adjusted by the layer referencing i: protection
    bought by lender j reduces its exposure, protection sold increases it.
    Uncovered contracts additionally yield off-network receivables for
    their buyers.
    """
    l_eff = np.array(l_matrix, dtype=float, copy=True)
    for m, layer in book.net_layers().items():
        l_eff[m, :] += layer.sum(axis=0) - layer.sum(axis=1)
    np.maximum(l_eff, 0.0, out=l_eff)
    np.fill_diagonal(l_eff, 0.0)
    naked = tuple(
        NakedReceivable(c.buyer, c.reference_entity, c.notional)
        for c in book.contracts
        if not c.covered
    )
    return EffectiveExposureNetwork(l_eff=l_eff, naked_receivables=naked)


def weighted_in_degree(net: EffectiveExposureNetwork) -> np.ndarray:
    """Total exposure weight flowing into each bank as a creditor (column sums)."""
    return net.l_eff.sum(axis=0)


def weighted_clustering(net: EffectiveExposureNetwork) -> np.ndarray:
    """Barrat weighted clustering coefficient on the symmetrized network.

    c_i = 1 / (s_i (k_i - 1)) * sum_{j,h} (w_ij + w_ih) / 2 * a_ij a_ih a_jh
    with node strength s_i and degree k_i; c_i = 0 for k_i < 2.
    """
    w = net.l_eff + net.l_eff.T
    a = (w > 0).astype(float)
    k = a.sum(axis=1)
    s = w.sum(axis=1)
    # sum_{j,h} ((w_ij + w_ih)/2) a_ij a_ih a_jh  ==  sum_j w_ij a_ij (A^2)_ij
    triangles = ((w * a) * (a @ a)).sum(axis=1)
    denom = s * np.maximum(k - 1.0, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(denom > 0, triangles / denom, 0.0)
    return c


def write_matrix_csv(matrix: np.ndarray, path, bank_ids: Iterable[int] | None = None) -> None:
    """Write a B x B exposure matrix as CSV (rows = borrowers, columns = lenders)."""
    n = matrix.shape[0]
    ids = list(bank_ids) if bank_ids is not None else list(range(n))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["borrower"] + [str(j) for j in ids])
        for i, row in zip(ids, matrix):
            writer.writerow([str(i)] + [repr(float(x)) for x in row])


def read_matrix_csv(path) -> tuple[np.ndarray, list[int]]:
    """Read a matrix written by :func:`write_matrix_csv`; returns (matrix, bank ids)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    ids = [int(x) for x in rows[0][1:]]
    matrix = np.array([[float(x) for x in row[1:]] for row in rows[1:]])
    return matrix, ids
