"""Answer-balance measurement for question groups.

A group's answer distribution is scored by Shannon entropy in bits and by
normalized entropy, the ratio of the entropy to that of a uniform
distribution over the same number of answer classes. Normalized entropy
lies in [0, 1] and is independent of the logarithm base; groups scoring
below a threshold (default 0.9) are treated as imbalanced.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping


@dataclass(frozen=True)
class AnswerDistribution:
    """Answer-class counts for one question group."""

    counts: Mapping[str, int]

    def __post_init__(self):
        for label, count in self.counts.items():
            if not isinstance(count, int) or count < 0:
                raise ValueError(
                    f"count for {label!r} must be a non-negative integer, got {count!r}"
                )

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "AnswerDistribution":
        return cls(counts=dict(Counter(labels)))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def num_classes(self) -> int:
        """Number of answer classes with nonzero count."""
        return sum(1 for c in self.counts.values() if c > 0)

    def probabilities(self) -> dict[str, float]:
        t = self.total
        return {a: c / t for a, c in self.counts.items() if c > 0}


def entropy(dist: AnswerDistribution) -> float:
    """Shannon entropy of the answer distribution, in bits.

    Computed as log2(T) - sum(c * log2(c)) / T over nonzero counts, which
    is algebraically -sum(p * log2(p)) but exact for uniform unit counts.
    Zero-count classes contribute nothing. Raises ValueError on an empty
    distribution.
    """
    t = dist.total
    if t == 0:
        raise ValueError("entropy of an empty distribution is undefined")
    if dist.num_classes == 1:
        return 0.0
    weighted = math.fsum(c * math.log2(c) for c in dist.counts.values() if c > 0)
    return math.log2(t) - weighted / t


def normalized_entropy(dist: AnswerDistribution) -> float:
    """Entropy divided by log2 of the class count, in [0, 1].

    A single-class distribution is maximally concentrated, so the
    degenerate N=1 case (where log2 N = 0) is defined as 0.
    """
    n = dist.num_classes
    if n == 0:
        raise ValueError("normalized entropy of an empty distribution is undefined")
    if n == 1:
        return 0.0
    return entropy(dist) / math.log2(n)


def is_imbalanced(dist: AnswerDistribution, threshold: float = 0.9) -> bool:
    """True iff the group's normalized entropy falls below the threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return normalized_entropy(dist) < threshold
