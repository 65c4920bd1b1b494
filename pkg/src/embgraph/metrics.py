"""Clustering agreement scores between found communities and ground-truth labels.

Normalized mutual information (arithmetic-mean normalization, natural log) and
adjusted mutual information under the standard fixed-marginal permutation
model. The expected-MI correction uses a precomputed log-factorial table for
numerical stability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import LengthMismatchError, UnknownImageError


@dataclass
class ContingencyTable:
    """Cross-tabulation of predicted communities (rows) against true classes (columns)."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2:
            raise ValueError("contingency counts must be a matrix")
        if (self.counts < 0).any():
            raise ValueError("contingency counts must be non-negative")

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def transpose(self) -> "ContingencyTable":
        return ContingencyTable(self.counts.T)


def build_contingency(predicted, truth) -> ContingencyTable:
    """Cross-tabulate two labelings.

    Accepts two equal-length sequences (paired by position) or two mappings
    keyed by image id (paired by key; key sets must match).
    """
    if isinstance(predicted, Mapping) or isinstance(truth, Mapping):
        if not (isinstance(predicted, Mapping) and isinstance(truth, Mapping)):
            raise UnknownImageError("predicted and truth must both be mappings or both sequences")
        missing = set(predicted) ^ set(truth)
        if missing:
            raise UnknownImageError(f"labelings disagree on images: {sorted(missing)[:5]}")
        keys = sorted(predicted)
        predicted = [predicted[k] for k in keys]
        truth = [truth[k] for k in keys]
    predicted = list(predicted)
    truth = list(truth)
    if len(predicted) != len(truth):
        raise LengthMismatchError(
            f"{len(predicted)} predicted labels vs {len(truth)} true labels"
        )
    if not predicted:
        raise LengthMismatchError("cannot score an empty labeling")
    _, rows = np.unique(np.asarray(predicted), return_inverse=True)
    _, cols = np.unique(np.asarray(truth), return_inverse=True)
    counts = np.zeros((rows.max() + 1, cols.max() + 1), dtype=np.int64)
    np.add.at(counts, (rows, cols), 1)
    return ContingencyTable(counts)


def entropy(sums: np.ndarray, total: int) -> float:
    """Shannon entropy (natural log) of a cluster-size vector."""
    if total <= 0:
        raise ValueError("total must be positive")
    sums = np.asarray(sums, dtype=np.float64)
    p = sums[sums > 0] / total
    return float(-(p * np.log(p)).sum())


def mutual_information(table: ContingencyTable) -> float:
    """MI (natural log) between the two labelings of a contingency table."""
    n = table.total
    counts = table.counts
    rows, cols = np.nonzero(counts)
    nij = counts[rows, cols].astype(np.float64)
    a = table.row_sums[rows].astype(np.float64)
    b = table.col_sums[cols].astype(np.float64)
    terms = (nij / n) * (np.log(n * nij) - np.log(a * b))
    return float(terms.sum())


def nmi(table: ContingencyTable) -> float:
    """Normalized MI: 2*I / (H_rows + H_cols).

    Both labelings trivial (single cluster each) scores 1.0; exactly one
    trivial side scores 0.0.
    """
    n = table.total
    h_rows = entropy(table.row_sums, n)
    h_cols = entropy(table.col_sums, n)
    if h_rows == 0.0 and h_cols == 0.0:
        return 1.0
    if h_rows == 0.0 or h_cols == 0.0:
        return 0.0
    return 2.0 * mutual_information(table) / (h_rows + h_cols)


def expected_mutual_information(table: ContingencyTable) -> float:
    """E[MI] over all contingency tables with these marginals (hypergeometric model)."""
    n = table.total
    a = table.row_sums
    b = table.col_sums
    log_fact = gammaln(np.arange(n + 1, dtype=np.float64) + 1.0)
    log_n_fact = log_fact[n]
    emi = 0.0
    for a_i in a:
        for b_j in b:
            lo = max(1, a_i + b_j - n)
            hi = min(a_i, b_j)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.int64)
            log_term = (nij / n) * (np.log(n) + np.log(nij) - np.log(a_i) - np.log(b_j))
            log_weight = (
                log_fact[a_i]
                + log_fact[b_j]
                + log_fact[n - a_i]
                + log_fact[n - b_j]
                - log_n_fact
                - log_fact[nij]
                - log_fact[a_i - nij]
                - log_fact[b_j - nij]
                - log_fact[n - a_i - b_j + nij]
            )
            emi += float((log_term * np.exp(log_weight)).sum())
    return emi


def ami(table: ContingencyTable) -> float:
    """Adjusted MI: (I - E[MI]) / (mean(H_rows, H_cols) - E[MI]).

    A zero denominator with I equal to E[MI] (e.g. two trivial labelings)
    scores 1.0.
    """
    n = table.total
    h_rows = entropy(table.row_sums, n)
    h_cols = entropy(table.col_sums, n)
    emi = expected_mutual_information(table)
    numerator = mutual_information(table) - emi
    denominator = 0.5 * (h_rows + h_cols) - emi
    if denominator == 0.0:
        return 1.0 if numerator == 0.0 else 0.0
    return numerator / denominator


def nmi_score(predicted, truth) -> float:
    return nmi(build_contingency(predicted, truth))


def ami_score(predicted, truth) -> float:
    return ami(build_contingency(predicted, truth))


def score_report(
    predicted: Mapping, truth: Mapping, n_communities: int, seed: int
) -> dict:
    """Metrics report for the image projection of a clustering run."""
    table = build_contingency(predicted, truth)
    return {
        "nmi": nmi(table),
        "ami": ami(table),
        "n_images": table.total,
        "n_communities": n_communities,
        "n_classes": int(len(table.col_sums)),
        "seed": seed,
    }
