"""Inter-rater agreement statistics and sample planning.

Covers the three-rater consensus rule, per-category positive percent
agreement (PPA), Cohen's and Fleiss' kappa, and finite-population sample
sizing for drawing a representative validation sample.
"""

from __future__ import annotations

import enum
import math
import random
from collections import Counter
from collections.abc import Hashable, Sequence
from dataclasses import dataclass, field
from statistics import NormalDist


class Vote(str, enum.Enum):
    YES = "Yes"
    NO = "No"
    DOUBT = "Doubt"
    NOT_AVAILABLE = "NotAvailable"

    @classmethod
    def parse(cls, value: str) -> "Vote":
        key = value.strip().lower().replace(" ", "").replace("_", "").replace("/", "")
        try:
            return _VOTE_ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown vote {value!r}") from None


_VOTE_ALIASES = {
    "yes": Vote.YES,
    "y": Vote.YES,
    "include": Vote.YES,
    "included": Vote.YES,
    "no": Vote.NO,
    "n": Vote.NO,
    "not": Vote.NO,
    "doubt": Vote.DOUBT,
    "d": Vote.DOUBT,
    "notavailable": Vote.NOT_AVAILABLE,
    "na": Vote.NOT_AVAILABLE,
}


class Consensus(str, enum.Enum):
    INCLUDE = "Include"
    DOUBT = "Doubt"
    NO = "No"


class _NoReferenceCases(enum.Enum):
    """Sentinel returned by :func:`ppa` when the reference has no items of the category."""

    TOKEN = "no-reference-cases"

    def __repr__(self) -> str:
        return "NO_REFERENCE_CASES"

    def __str__(self) -> str:
        return self.value


NO_REFERENCE_CASES = _NoReferenceCases.TOKEN


def aggregate_votes(votes: Sequence[Vote | str]) -> Consensus:
    """Collapse exactly three researcher votes into one consensus category.

    Include when all three are Yes or two are Yes and one is Doubt; Doubt when
    at least two are Doubt; No for every other combination.
    """
    if len(votes) != 3:
        raise ValueError(f"expected exactly 3 votes, got {len(votes)}")
    parsed = [v if isinstance(v, Vote) else Vote.parse(v) for v in votes]
    if Vote.NOT_AVAILABLE in parsed:
        raise ValueError("NotAvailable votes must be resolved before aggregation")
    counts = Counter(parsed)
    if counts[Vote.YES] == 3 or (counts[Vote.YES] == 2 and counts[Vote.DOUBT] == 1):
        return Consensus.INCLUDE
    if counts[Vote.DOUBT] >= 2:
        return Consensus.DOUBT
    return Consensus.NO


def _check_aligned(a: Sequence, b: Sequence) -> None:
    if len(a) != len(b):
        raise ValueError(f"sequences differ in length: {len(a)} != {len(b)}")


def ppa(reference: Sequence[Hashable], test: Sequence[Hashable], category: Hashable):
    """Positive percent agreement of ``test`` against ``reference`` for one category.

    The direction matters: the denominator counts reference items labelled
    ``category``. Returns :data:`NO_REFERENCE_CASES` when that count is zero.
    """
    _check_aligned(reference, test)
    denominator = sum(1 for r in reference if r == category)
    if denominator == 0:
        return NO_REFERENCE_CASES
    hits = sum(1 for r, t in zip(reference, test) if r == category and t == category)
    return hits / denominator


def pooled_agreement(reference: Sequence[Hashable], test: Sequence[Hashable]) -> float | None:
    """Fraction of aligned items on which both sides agree, over all categories."""
    _check_aligned(reference, test)
    if not reference:
        return None
    return sum(1 for r, t in zip(reference, test) if r == t) / len(reference)


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    _check_aligned(a, b)
    n = len(a)
    if n == 0:
        raise ValueError("cohen_kappa needs at least one item")
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    count_a, count_b = Counter(a), Counter(b)
    p_e = sum(count_a[c] * count_b[c] for c in set(count_a) | set(count_b)) / (n * n)
    if p_e == 1.0:
        # Both raters used one identical category throughout.
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def fleiss_kappa(matrix: Sequence[Sequence[int]], raters_per_item: int) -> float:
    """Fleiss' kappa over an items x categories matrix of rating counts."""
    if raters_per_item < 2:
        raise ValueError("fleiss_kappa needs at least 2 raters per item")
    if not matrix:
        raise ValueError("fleiss_kappa needs at least one item")
    n = raters_per_item
    width = len(matrix[0])
    for i, row in enumerate(matrix):
        if len(row) != width:
            raise ValueError(f"row {i} has {len(row)} categories, expected {width}")
        if any(c < 0 for c in row) or sum(row) != n:
            raise ValueError(f"row {i} does not sum to {n} raters: {list(row)}")

    n_items = len(matrix)
    p_bar = sum((sum(c * c for c in row) - n) / (n * (n - 1)) for row in matrix) / n_items
    totals = [sum(row[j] for row in matrix) for j in range(width)]
    p_e = sum((t / (n_items * n)) ** 2 for t in totals)
    if p_e == 1.0:
        return 1.0
    return (p_bar - p_e) / (1.0 - p_e)


def fleiss_matrix(
    ratings: Sequence[Sequence[Hashable]], categories: Sequence[Hashable] | None = None
) -> tuple[list[list[int]], list[Hashable]]:
    """Turn per-item rating lists into a count matrix, returning it with its column labels."""
    if categories is None:
        seen: dict[Hashable, None] = {}
        for item in ratings:
            for r in item:
                seen.setdefault(r, None)
        categories = list(seen)
    index = {c: j for j, c in enumerate(categories)}
    matrix = []
    for item in ratings:
        row = [0] * len(categories)
        for r in item:
            row[index[r]] += 1
        matrix.append(row)
    return matrix, list(categories)


def z_score(confidence: float) -> float:
    """Two-sided standard normal critical value for a confidence level."""
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    return NormalDist().inv_cdf(1.0 - (1.0 - confidence) / 2.0)


@dataclass(frozen=True)
class SamplePlan:
    population_n: int
    confidence: float = 0.95
    margin_e: float = 0.05
    proportion_p: float = 0.5
    seed: int = 0
    z: float = field(init=False)
    required_n: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "z", z_score(self.confidence))
        object.__setattr__(
            self,
            "required_n",
            sample_size(self.population_n, self.confidence, self.margin_e, self.proportion_p),
        )

    def describe(self) -> dict[str, object]:
        return {
            "population_N": self.population_n,
            "confidence": self.confidence,
            "margin_e": self.margin_e,
            "proportion_p": self.proportion_p,
            "z": round(self.z, 6),
            "required_n": self.required_n,
            "seed": self.seed,
        }


def sample_size(
    population: int, confidence: float = 0.95, margin: float = 0.05, p: float = 0.5
) -> int:
    """Cochran sample size with finite-population correction, rounded up.

    >>> sample_size(8482, 0.95, 0.05, 0.5)
    368
    """
    if isinstance(population, bool) or not isinstance(population, int) or population < 1:
        raise ValueError(f"population must be a positive integer, got {population!r}")
    if not 0.0 < margin < 1.0:
        raise ValueError(f"margin must lie in (0, 1), got {margin}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"proportion must lie in (0, 1), got {p}")
    z = z_score(confidence)
    n0 = z * z * p * (1.0 - p) / (margin * margin)
    n = math.ceil(n0 / (1.0 + (n0 - 1.0) / population))
    return min(n, population)


def draw_sample(items: Sequence[Hashable], n: int, seed: int) -> list:
    """Uniform sample without replacement; the same seed always yields the same list."""
    if n < 0 or n > len(items):
        raise ValueError(f"cannot draw {n} items from a population of {len(items)}")
    return random.Random(seed).sample(list(items), n)
