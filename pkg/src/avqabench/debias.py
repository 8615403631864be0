"""KL-divergence debiasing losses over four prediction heads.

A training sample yields four pre-softmax score vectors over the answer
classes: one from the fused multimodal path and one per single modality
(question, video, audio). Three terms form the training objective:

* answer loss: cross entropy of the fusion scores against the gold class.
* discrepancy loss: alpha * sum over modalities of
  1 / (KL(fusion || modality) + eps). Driving this term down enlarges the
  divergence between the fused prediction and every single-modality
  prediction, so the fusion head cannot collapse onto a one-modality
  shortcut. eps sits inside each reciprocal to keep it finite.
* cycle loss: beta * (KL(q||a) + KL(a||v) + KL(v||q)), a cyclic constraint
  keeping the three single-modality predictions mutually consistent.

All KL divergences are taken in nats between softmax outputs; the second
argument's probabilities are floored before the log so that finite-
precision underflow cannot produce infinities. Gradients with respect to
all four logit vectors are available in closed form and are checked
against central finite differences by `finite_diff_check`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MODALITIES = ("question", "video", "audio")
# cycle direction: question -> audio -> video -> question
CYCLE_PAIRS = (("question", "audio"), ("audio", "video"), ("video", "question"))


@dataclass
class DebiasConfig:
    """Weights and numerical guards for the loss terms."""

    alpha: float = 1e-3
    beta: float = 5e-3
    epsilon: float = 1e-5
    prob_floor: float = 1e-12

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.prob_floor <= 0:
            raise ValueError("prob_floor must be positive")


@dataclass
class LogitBundle:
    """Fusion plus three single-modality score vectors for one sample."""

    fusion: np.ndarray
    question: np.ndarray
    video: np.ndarray
    audio: np.ndarray

    def __post_init__(self):
        self.fusion = np.asarray(self.fusion, dtype=np.float64)
        self.question = np.asarray(self.question, dtype=np.float64)
        self.video = np.asarray(self.video, dtype=np.float64)
        self.audio = np.asarray(self.audio, dtype=np.float64)
        shape = self.fusion.shape
        if self.fusion.ndim != 1 or shape[0] < 2:
            raise ValueError("logit vectors must be 1-D with at least 2 classes")
        for name in ("question", "video", "audio"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} logits must have shape {shape}")
        for name in ("fusion", "question", "video", "audio"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} logits must be finite")

    @property
    def num_classes(self) -> int:
        return self.fusion.shape[0]

    def head(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def replace_entry(self, head: str, index: int, value: float) -> "LogitBundle":
        vectors = {n: self.head(n).copy() for n in ("fusion",) + MODALITIES}
        vectors[head][index] = value
        return LogitBundle(**vectors)


@dataclass
class LossBreakdown:
    answer: float
    discrepancy: float
    cycle: float
    total: float = field(init=False)

    def __post_init__(self):
        # bookkeeping identity: total is the float sum of the parts
        self.total = self.answer + self.discrepancy + self.cycle

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "discrepancy": self.discrepancy,
            "cycle": self.cycle,
            "total": self.total,
        }


@dataclass
class GradientBundle:
    """d(total loss)/d(logits) for each of the four heads."""

    fusion: np.ndarray
    question: np.ndarray
    video: np.ndarray
    audio: np.ndarray

    def head(self, name: str) -> np.ndarray:
        return getattr(self, name)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax; entries positive, summing to 1 along axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of an empty vector is undefined")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax requires finite entries")
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _kl(p: np.ndarray, q: np.ndarray, prob_floor: float) -> np.ndarray:
    """KL(p || q) in nats along the last axis; zero p-entries contribute 0."""
    q_floored = np.maximum(q, prob_floor)
    ratio = np.where(p > 0, p / q_floored, 1.0)
    terms = np.where(p > 0, p * np.log(ratio), 0.0)
    return terms.sum(axis=-1)


def kl_divergence(p, q, prob_floor: float = 1e-12) -> float:
    """KL(p || q) in nats between two probability vectors.

    q is floored at prob_floor before the log; terms where p is zero
    contribute 0. Raises on length mismatch or vectors that do not sum
    to 1.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    for name, vec in (("p", p), ("q", q)):
        if not math.isclose(float(vec.sum()), 1.0, abs_tol=1e-6):
            raise ValueError(f"{name} must sum to 1, got {float(vec.sum())!r}")
    return float(_kl(p, q, prob_floor))


def answer_loss(fusion_logits: np.ndarray, label: int) -> float:
    """Cross entropy -log softmax(fusion)[label], computed in log space."""
    z = np.asarray(fusion_logits, dtype=np.float64)
    if not 0 <= label < z.shape[-1]:
        raise ValueError(f"label {label} out of range for {z.shape[-1]} classes")
    return float(-log_softmax(z)[..., label])


def discrepancy_loss(bundle: LogitBundle, cfg: DebiasConfig) -> float:
    """alpha * sum_k 1/(KL(fusion || modality_k) + eps) on softmaxed heads."""
    p = softmax(bundle.fusion)
    total = 0.0
    for name in MODALITIES:
        d = _kl(p, softmax(bundle.head(name)), cfg.prob_floor)
        total += 1.0 / (float(d) + cfg.epsilon)
    return cfg.alpha * total


def cycle_loss(bundle: LogitBundle, cfg: DebiasConfig) -> float:
    """beta * sum of KL over the cyclic modality pairs, on softmaxed heads."""
    probs = {name: softmax(bundle.head(name)) for name in MODALITIES}
    total = 0.0
    for j, k in CYCLE_PAIRS:
        total += float(_kl(probs[j], probs[k], cfg.prob_floor))
    return cfg.beta * total


def total_loss(bundle: LogitBundle, label: int, cfg: DebiasConfig) -> LossBreakdown:
    return LossBreakdown(
        answer=answer_loss(bundle.fusion, label),
        discrepancy=discrepancy_loss(bundle, cfg),
        cycle=cycle_loss(bundle, cfg),
    )


def _safe_log_ratio(p: np.ndarray, q: np.ndarray, prob_floor: float) -> np.ndarray:
    q_floored = np.maximum(q, prob_floor)
    return np.log(np.where(p > 0, p / q_floored, 1.0))


def loss_gradients(bundle: LogitBundle, label: int, cfg: DebiasConfig) -> GradientBundle:
    """Closed-form d(total)/d(logits) for all four heads.

    For a scalar F of a softmax output s = softmax(z) with elementwise
    sensitivities g = dF/ds, the chain rule through the softmax Jacobian
    gives dF/dz = s * (g - sum(s * g)). Applied to d = KL(p || u):

        dd/d(z_p) = p * (log(p/u) - d)
        dd/d(z_u) = u - p

    The discrepancy term alpha/(d + eps) then scales both by
    -alpha/(d + eps)^2, and each cycle term contributes the same pair of
    expressions for its ordered (j, k) operands.
    """
    p = softmax(bundle.fusion)
    u = {name: softmax(bundle.head(name)) for name in MODALITIES}
    if not 0 <= label < bundle.num_classes:
        raise ValueError(f"label {label} out of range for {bundle.num_classes} classes")

    grad_fusion = p.copy()
    grad_fusion[label] -= 1.0
    grad = {name: np.zeros_like(p) for name in MODALITIES}

    for name in MODALITIES:
        d = float(_kl(p, u[name], cfg.prob_floor))
        weight = -cfg.alpha / (d + cfg.epsilon) ** 2
        log_ratio = _safe_log_ratio(p, u[name], cfg.prob_floor)
        grad_fusion += weight * np.where(p > 0, p * (log_ratio - d), 0.0)
        grad[name] += weight * (u[name] - p)

    for j, k in CYCLE_PAIRS:
        d = float(_kl(u[j], u[k], cfg.prob_floor))
        log_ratio = _safe_log_ratio(u[j], u[k], cfg.prob_floor)
        grad[j] += cfg.beta * np.where(u[j] > 0, u[j] * (log_ratio - d), 0.0)
        grad[k] += cfg.beta * (u[k] - u[j])

    return GradientBundle(
        fusion=grad_fusion,
        question=grad["question"],
        video=grad["video"],
        audio=grad["audio"],
    )


def finite_diff_check(
    bundle: LogitBundle, label: int, cfg: DebiasConfig, step: float = 1e-5
) -> float:
    """Worst relative error of the analytic gradient vs central differences.

    Perturbs every logit entry of every head by +/-step and compares
    (L(+) - L(-)) / (2 step) against the closed form, with denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = loss_gradients(bundle, label, cfg)
    worst = 0.0
    for head in ("fusion",) + MODALITIES:
        vec = bundle.head(head)
        for i in range(vec.shape[0]):
            plus = bundle.replace_entry(head, i, vec[i] + step)
            minus = bundle.replace_entry(head, i, vec[i] - step)
            numeric = (
                total_loss(plus, label, cfg).total
                - total_loss(minus, label, cfg).total
            ) / (2.0 * step)
            a = analytic.head(head)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
