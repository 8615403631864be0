"""Head/tail partitioning of answer classes per question group.

Two rules are provided:

* coverage-constrained ("conformal") rule: choose the smallest head set,
  formed by the h most frequent answer classes, such that the head covers
  at least a 1 - h/N fraction of the group's samples (h out of N classes,
  k = h/N). Small k means a compact head with a strong coverage demand;
  the minimal feasible h balances compactness against coverage.
* legacy fixed-multiplier rule: a class is tail iff its count is at most
  multiplier * mean class count (default 1.2x). On near-uniform groups
  every count sits below the threshold and the head degenerates to empty,
  which is the pathology the coverage-constrained rule removes.

Ties between equal counts are broken by ascending answer label so that
identical inputs always yield identical splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .balance import AnswerDistribution, normalized_entropy
from .records import DatasetManifest, GroupKey

MODES = ("conformal", "legacy")


@dataclass(frozen=True)
class GroupCounts:
    """Answer-class counts for one group, with derived size statistics."""

    key: GroupKey
    counts: Mapping[str, int]

    @property
    def num_classes(self) -> int:
        return sum(1 for c in self.counts.values() if c > 0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def mean_count(self) -> float:
        """Mean sample count per answer class."""
        return self.total / self.num_classes

    def nonzero_counts(self) -> dict[str, int]:
        return {a: c for a, c in self.counts.items() if c > 0}


@dataclass
class SplitSolution:
    key: GroupKey
    mode: str
    k: float
    head_size: int
    head_answers: tuple[str, ...]
    tail_answers: tuple[str, ...]
    coverage: float
    normalized_entropy: float
    balanced: bool

    def to_dict(self) -> dict:
        return {
            "task": self.key.task,
            "question_type": self.key.question_type,
            "mode": self.mode,
            "k": self.k,
            "head_size": self.head_size,
            "coverage": self.coverage,
            "normalized_entropy": self.normalized_entropy,
            "balanced": self.balanced,
            "head_answers": list(self.head_answers),
            "tail_answers": list(self.tail_answers),
        }


@dataclass
class SplitConfig:
    mode: str = "conformal"
    legacy_multiplier: float = 1.2
    entropy_threshold: float = 0.9


@dataclass
class SplitAssignment:
    """Record-level head/tail labels plus the per-group solutions."""

    labels: dict[str, str] = field(default_factory=dict)
    solutions: list[SplitSolution] = field(default_factory=list)

    def solution_for(self, key: GroupKey) -> SplitSolution:
        for sol in self.solutions:
            if sol.key == key:
                return sol
        raise KeyError(f"no solution for group {key}")

    def to_dict(self) -> dict:
        return {
            "groups": [sol.to_dict() for sol in self.solutions],
            "assignments": dict(self.labels),
        }


def ranked_labels(counts: Mapping[str, int]) -> list[str]:
    """Labels sorted by count descending, ties by ascending label."""
    return sorted((a for a, c in counts.items() if c > 0), key=lambda a: (-counts[a], a))


def _group_normalized_entropy(counts: Mapping[str, int]) -> float:
    return normalized_entropy(AnswerDistribution(counts=dict(counts)))


def conformal_split(group: GroupCounts, entropy_threshold: float = 0.9) -> SplitSolution:
    """Minimal head set meeting the coverage constraint.

    Scans h = 1..N over the ranked labels and returns the first h whose
    cumulative count covers at least 1 - h/N of the group. The feasibility
    test uses exact integer arithmetic (cum * N >= total * (N - h)) so
    boundary cases such as 4/6 vs 1 - 1/3 resolve exactly. h = N always
    satisfies the constraint, so a solution exists for any non-empty group.
    """
    counts = group.nonzero_counts()
    total = group.total
    if total == 0:
        raise ValueError(f"group {group.key} is empty")
    ranked = ranked_labels(counts)
    n = len(ranked)
    cum = 0
    head_size = n
    for h, label in enumerate(ranked, start=1):
        cum += counts[label]
        if cum * n >= total * (n - h):
            head_size = h
            break
    head = tuple(ranked[:head_size])
    tail = tuple(ranked[head_size:])
    covered = sum(counts[a] for a in head)
    h_norm = _group_normalized_entropy(counts)
    return SplitSolution(
        key=group.key,
        mode="conformal",
        k=head_size / n,
        head_size=head_size,
        head_answers=head,
        tail_answers=tail,
        coverage=covered / total,
        normalized_entropy=h_norm,
        balanced=h_norm >= entropy_threshold,
    )


def legacy_split(
    group: GroupCounts,
    multiplier: float = 1.2,
    entropy_threshold: float = 0.9,
) -> SplitSolution:
    """Fixed-multiplier rule: tail iff count <= multiplier * mean count.

    Coverage is reported but not constrained; on equal-count groups the
    head comes out empty.
    """
    counts = group.nonzero_counts()
    total = group.total
    if total == 0:
        raise ValueError(f"group {group.key} is empty")
    ranked = ranked_labels(counts)
    threshold = multiplier * group.mean_count
    head = tuple(a for a in ranked if counts[a] > threshold)
    tail = tuple(a for a in ranked if counts[a] <= threshold)
    covered = sum(counts[a] for a in head)
    h_norm = _group_normalized_entropy(counts)
    return SplitSolution(
        key=group.key,
        mode="legacy",
        k=len(head) / len(ranked),
        head_size=len(head),
        head_answers=head,
        tail_answers=tail,
        coverage=covered / total,
        normalized_entropy=h_norm,
        balanced=h_norm >= entropy_threshold,
    )


def group_counts_from_manifest(manifest: DatasetManifest) -> list[GroupCounts]:
    """One GroupCounts per manifest group, in sorted group-key order."""
    out = []
    for key in sorted(manifest.groups):
        dist = AnswerDistribution.from_labels(
            manifest.record_by_id(rid).answer for rid in manifest.groups[key]
        )
        out.append(GroupCounts(key=key, counts=dist.counts))
    return out


def build_assignment(manifest: DatasetManifest, config: SplitConfig) -> SplitAssignment:
    """Split every group with the configured mode and label each record.

    Balanced groups (normalized entropy at or above the threshold) are
    split like any other but carry balanced=True in their solution. A
    record is head iff its answer is in its group's head set.
    """
    if config.mode not in MODES:
        raise ValueError(f"unknown split mode {config.mode!r}; expected one of {MODES}")
    solutions = []
    head_sets: dict[GroupKey, set[str]] = {}
    for group in group_counts_from_manifest(manifest):
        if config.mode == "conformal":
            sol = conformal_split(group, entropy_threshold=config.entropy_threshold)
        else:
            sol = legacy_split(
                group,
                multiplier=config.legacy_multiplier,
                entropy_threshold=config.entropy_threshold,
            )
        solutions.append(sol)
        head_sets[group.key] = set(sol.head_answers)
    labels = {
        rec.id: "head" if rec.answer in head_sets[rec.group] else "tail"
        for rec in manifest.records
    }
    return SplitAssignment(labels=labels, solutions=solutions)


def total_variation(p: Mapping[str, float], q: Mapping[str, float]) -> float:
    """Total-variation distance between two answer-frequency vectors."""
    support = set(p) | set(q)
    return 0.5 * sum(abs(p.get(a, 0.0) - q.get(a, 0.0)) for a in support)


def _frequencies(labels: list[str]) -> dict[str, float]:
    if not labels:
        return {}
    dist = AnswerDistribution.from_labels(labels)
    return dist.probabilities()


def distribution_report(
    manifest: DatasetManifest,
    assignment: SplitAssignment,
    reference: DatasetManifest,
) -> dict:
    """Compare per-group head/tail answer frequencies against a reference.

    For each split group, reports the answer-frequency vectors of the
    reference (e.g. a training split), the head records, and the tail
    records, plus total-variation distances TV(reference, head) and
    TV(reference, tail). Groups missing from the reference are flagged
    rather than fatal; an empty tail yields a null TV.
    """
    groups = []
    for sol in assignment.solutions:
        key = sol.key
        member_ids = manifest.groups.get(key, [])
        head_answers = [
            manifest.record_by_id(rid).answer
            for rid in member_ids
            if assignment.labels.get(rid) == "head"
        ]
        tail_answers = [
            manifest.record_by_id(rid).answer
            for rid in member_ids
            if assignment.labels.get(rid) == "tail"
        ]
        in_reference = key in reference.groups
        ref_answers = (
            [reference.record_by_id(rid).answer for rid in reference.groups[key]]
            if in_reference
            else []
        )
        ref_freq = _frequencies(ref_answers)
        head_freq = _frequencies(head_answers)
        tail_freq = _frequencies(tail_answers)
        groups.append(
            {
                "task": key.task,
                "question_type": key.question_type,
                "missing_in_reference": not in_reference,
                "reference_total": len(ref_answers),
                "head_total": len(head_answers),
                "tail_total": len(tail_answers),
                "reference_freq": dict(sorted(ref_freq.items())),
                "head_freq": dict(sorted(head_freq.items())),
                "tail_freq": dict(sorted(tail_freq.items())),
                "tv_reference_head": (
                    total_variation(ref_freq, head_freq)
                    if in_reference and head_freq
                    else None
                ),
                "tv_reference_tail": (
                    total_variation(ref_freq, tail_freq)
                    if in_reference and tail_freq
                    else None
                ),
            }
        )
    return {"groups": groups}


def write_split(assignment: SplitAssignment, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(assignment.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def load_split(path: str | Path) -> SplitAssignment:
    """Read a split file written by write_split."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    solutions = [
        SplitSolution(
            key=GroupKey(g["task"], g["question_type"]),
            mode=g["mode"],
            k=g["k"],
            head_size=g["head_size"],
            head_answers=tuple(g["head_answers"]),
            tail_answers=tuple(g["tail_answers"]),
            coverage=g["coverage"],
            normalized_entropy=g["normalized_entropy"],
            balanced=g["balanced"],
        )
        for g in doc["groups"]
    ]
    labels = dict(doc["assignments"])
    for rid, label in labels.items():
        if label not in ("head", "tail"):
            raise ValueError(f"assignment for {rid!r} must be 'head' or 'tail'")
    return SplitAssignment(labels=labels, solutions=solutions)
