"""Desk-scale biased-data experiment for the debiasing losses.

Synthetic task: C answer classes, three feature modalities per sample.
The video pattern encodes a coarse latent factor and the audio pattern a
fine latent factor; the label is the combination of the two, so neither
modality alone pins it down. The question pattern carries a cue token
that equals the label with probability `bias_rate` in the training and
head-test sets but only at chance (1/C) in the tail-test set. A model
that shortcuts through the question cue therefore looks strong on the
head split and collapses on the tail split, reproducing the in- vs
out-of-distribution gap the head/tail benchmark is built to measure.

Model: one affine encoder per modality into a shared hidden space, a
per-path learned bias vector standing in for path-specific instructions,
and a single classifier head whose parameters are shared by all four
prediction paths (question / video / audio / fusion, where fusion is the
mean of the three unimodal embeddings). Training is plain mini-batch SGD
(optionally with momentum) on answer + discrepancy + cycle losses, with
gradients propagated through the affine maps in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from statistics import median

import numpy as np

from .debias import (
    CYCLE_PAIRS,
    MODALITIES,
    DebiasConfig,
    LogitBundle,
    LossBreakdown,
    _kl,
    _safe_log_ratio,
    log_softmax,
    softmax,
)

PATHS = MODALITIES + ("fusion",)


@dataclass
class SyntheticSpec:
    num_classes: int = 8
    feature_dim: int = 16
    bias_rate: float = 0.9
    train_size: int = 2048
    head_test_size: int = 512
    tail_test_size: int = 512
    noise_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.feature_dim < self.num_classes:
            raise ValueError("feature_dim must be at least num_classes")
        if not 0.0 <= self.bias_rate <= 1.0:
            raise ValueError("bias_rate must lie in [0, 1]")
        for name in ("train_size", "head_test_size", "tail_test_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass
class ToyDataset:
    question: np.ndarray  # (n, d)
    video: np.ndarray  # (n, d)
    audio: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    cues: np.ndarray  # (n,) cue token carried by the question features

    def __len__(self) -> int:
        return self.labels.shape[0]


def factor_sizes(num_classes: int) -> tuple[int, int]:
    """(video, audio) latent factor counts whose product covers the classes."""
    audio = math.isqrt(num_classes - 1) + 1
    video = -(-num_classes // audio)
    return video, audio


def modality_codebooks(spec: SyntheticSpec) -> dict[str, np.ndarray]:
    """Orthonormal pattern rows per modality, derived from the data seed."""
    rng = np.random.default_rng(spec.seed)
    n_video, n_audio = factor_sizes(spec.num_classes)
    sizes = {"question": spec.num_classes, "video": n_video, "audio": n_audio}
    books = {}
    for name in MODALITIES:
        gauss = rng.normal(size=(spec.feature_dim, spec.feature_dim))
        q, _ = np.linalg.qr(gauss)
        books[name] = q[: sizes[name]]
    return books


def _draw_cues(rng, labels, num_classes, match_rate):
    """Cue equals the label with probability match_rate, else another class."""
    n = labels.shape[0]
    cues = labels.copy()
    miss = rng.random(n) >= match_rate
    offsets = rng.integers(1, num_classes, size=n)
    cues[miss] = (labels[miss] + offsets[miss]) % num_classes
    return cues


def _materialize(rng, spec, books, labels, cue_rate):
    _, n_audio = factor_sizes(spec.num_classes)
    video_factor = labels // n_audio
    audio_factor = labels % n_audio
    cues = _draw_cues(rng, labels, spec.num_classes, cue_rate)
    features = {}
    for name, factor in (
        ("question", cues),
        ("video", video_factor),
        ("audio", audio_factor),
    ):
        clean = books[name][factor]
        noise = rng.normal(scale=spec.noise_std, size=clean.shape)
        features[name] = clean + noise
    return ToyDataset(
        question=features["question"],
        video=features["video"],
        audio=features["audio"],
        labels=labels,
        cues=cues,
    )


def generate_synthetic(spec: SyntheticSpec) -> tuple[ToyDataset, ToyDataset, ToyDataset]:
    """(train, head_test, tail_test), deterministic given spec.seed.

    Train and head-test share the cue-matching rate; the tail-test cue is
    drawn at the chance rate 1/C, which makes the tail cue distribution
    uniform over all classes.
    """
    books = modality_codebooks(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    chance = 1.0 / spec.num_classes
    train_labels = rng.integers(0, spec.num_classes, size=spec.train_size)
    train = _materialize(rng, spec, books, train_labels, spec.bias_rate)
    head_labels = rng.integers(0, spec.num_classes, size=spec.head_test_size)
    head = _materialize(rng, spec, books, head_labels, spec.bias_rate)
    tail_labels = rng.integers(0, spec.num_classes, size=spec.tail_test_size)
    tail = _materialize(rng, spec, books, tail_labels, chance)
    return train, head, tail


@dataclass
class ToyModelParams:
    """Three encoders plus one classifier head shared by all four paths."""

    enc_weight: dict[str, np.ndarray]  # modality -> (h, d)
    enc_bias: dict[str, np.ndarray]  # modality -> (h,)
    head_weight: np.ndarray  # (C, h), stored once
    head_bias: np.ndarray  # (C,)
    path_bias: dict[str, np.ndarray]  # path -> (h,), instruction analog

    def parameter_count(self) -> int:
        """Counts the shared head exactly once."""
        n = self.head_weight.size + self.head_bias.size
        for name in MODALITIES:
            n += self.enc_weight[name].size + self.enc_bias[name].size
        for name in PATHS:
            n += self.path_bias[name].size
        return n

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(
            enc_weight={k: v.copy() for k, v in self.enc_weight.items()},
            enc_bias={k: v.copy() for k, v in self.enc_bias.items()},
            head_weight=self.head_weight.copy(),
            head_bias=self.head_bias.copy(),
            path_bias={k: v.copy() for k, v in self.path_bias.items()},
        )


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 50
    batch_size: int = 32
    optimizer: str = "sgd"  # or "sgd_momentum" (momentum 0.9)
    debias: DebiasConfig = field(default_factory=DebiasConfig)
    seed: int = 0
    hidden_dim: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise ValueError("optimizer must be 'sgd' or 'sgd_momentum'")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be at least 1")


def init_params(spec: SyntheticSpec, tcfg: TrainConfig) -> ToyModelParams:
    """Symmetric uniform init scaled by 1/sqrt(fan_in); path biases zero."""
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 2]))
    d, h, c = spec.feature_dim, tcfg.hidden_dim, spec.num_classes

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ToyModelParams(
        enc_weight={name: uniform((h, d), d) for name in MODALITIES},
        enc_bias={name: uniform((h,), d) for name in MODALITIES},
        head_weight=uniform((c, h), h),
        head_bias=uniform((c,), h),
        path_bias={name: np.zeros(h) for name in PATHS},
    )


# fusion = _FUSION_SCALE * (sum of unimodal embeddings); 1.0 keeps each
# modality at the same magnitude in the fused path as in its own path
_FUSION_SCALE = 1.0


def _forward_batch(params, question, video, audio):
    """Embeddings and the four logit blocks for a feature batch."""
    feats = {"question": question, "video": video, "audio": audio}
    emb = {
        name: feats[name] @ params.enc_weight[name].T + params.enc_bias[name]
        for name in MODALITIES
    }
    emb["fusion"] = _FUSION_SCALE * (emb["question"] + emb["video"] + emb["audio"])
    logits = {
        name: (emb[name] + params.path_bias[name]) @ params.head_weight.T
        + params.head_bias
        for name in PATHS
    }
    return emb, logits


def forward(params: ToyModelParams, question, video, audio) -> LogitBundle:
    """Four logit vectors for one sample; unimodal paths see one modality."""
    q = np.atleast_2d(np.asarray(question, dtype=np.float64))
    v = np.atleast_2d(np.asarray(video, dtype=np.float64))
    a = np.atleast_2d(np.asarray(audio, dtype=np.float64))
    d = params.enc_weight["question"].shape[1]
    for name, x in (("question", q), ("video", v), ("audio", a)):
        if x.shape != (1, d):
            raise ValueError(f"{name} features must have dimension {d}")
    _, logits = _forward_batch(params, q, v, a)
    return LogitBundle(
        fusion=logits["fusion"][0],
        question=logits["question"][0],
        video=logits["video"][0],
        audio=logits["audio"][0],
    )


def _batch_losses_and_logit_grads(logits, labels, cfg):
    """Per-sample loss parts and mean-reduced d(loss)/d(logits) per path.

    Vectorized restatement of the single-sample closed forms: softmax all
    four heads, cross entropy on fusion, reciprocal-KL discrepancy into
    fusion and each modality, cyclic KL between modality pairs.
    """
    n = labels.shape[0]
    probs = {name: softmax(logits[name], axis=-1) for name in PATHS}
    logp = {name: log_softmax(logits[name], axis=-1) for name in PATHS}
    rows = np.arange(n)

    l_answer = -logp["fusion"][rows, labels]
    grads = {name: np.zeros_like(probs[name]) for name in PATHS}
    g_fusion = probs["fusion"].copy()
    g_fusion[rows, labels] -= 1.0
    grads["fusion"] = g_fusion

    p = probs["fusion"]
    l_disc = np.zeros(n)
    for name in MODALITIES:
        d = _kl(p, probs[name], cfg.prob_floor)
        l_disc += 1.0 / (d + cfg.epsilon)
        weight = (-cfg.alpha / (d + cfg.epsilon) ** 2)[:, None]
        log_ratio = _safe_log_ratio(p, probs[name], cfg.prob_floor)
        grads["fusion"] += weight * np.where(p > 0, p * (log_ratio - d[:, None]), 0.0)
        grads[name] += weight * (probs[name] - p)
    l_disc *= cfg.alpha

    l_cycle = np.zeros(n)
    for j, k in CYCLE_PAIRS:
        d = _kl(probs[j], probs[k], cfg.prob_floor)
        l_cycle += d
        log_ratio = _safe_log_ratio(probs[j], probs[k], cfg.prob_floor)
        grads[j] += cfg.beta * np.where(
            probs[j] > 0, probs[j] * (log_ratio - d[:, None]), 0.0
        )
        grads[k] += cfg.beta * (probs[k] - probs[j])
    l_cycle *= cfg.beta

    for name in PATHS:
        grads[name] /= n
    return l_answer, l_disc, l_cycle, grads


def _backward_batch(params, feats, emb, grads):
    """Parameter gradients; all four paths accumulate into the shared head."""
    h_w = params.head_weight
    p_grads = {
        "head_weight": np.zeros_like(params.head_weight),
        "head_bias": np.zeros_like(params.head_bias),
        "enc_weight": {m: np.zeros_like(params.enc_weight[m]) for m in MODALITIES},
        "enc_bias": {m: np.zeros_like(params.enc_bias[m]) for m in MODALITIES},
        "path_bias": {},
    }
    d_emb = {}
    for name in PATHS:
        g = grads[name]
        pre = emb[name] + params.path_bias[name]
        p_grads["head_weight"] += g.T @ pre
        p_grads["head_bias"] += g.sum(axis=0)
        back = g @ h_w  # (n, h)
        p_grads["path_bias"][name] = back.sum(axis=0)
        d_emb[name] = back
    for name in MODALITIES:
        total = d_emb[name] + _FUSION_SCALE * d_emb["fusion"]
        p_grads["enc_weight"][name] = total.T @ feats[name]
        p_grads["enc_bias"][name] = total.sum(axis=0)
    return p_grads


class _SGD:
    def __init__(self, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, key, param, grad):
        if self.momentum > 0.0:
            vel = self.velocity.get(key)
            vel = grad if vel is None else self.momentum * vel + grad
            self.velocity[key] = vel
            param -= self.lr * vel
        else:
            param -= self.lr * grad


def train(
    spec: SyntheticSpec, tcfg: TrainConfig
) -> tuple[ToyModelParams, list[LossBreakdown]]:
    """Mini-batch SGD on the joint objective; returns the per-epoch trace.

    Deterministic given (spec.seed, tcfg.seed). Raises RuntimeError naming
    the epoch if the loss stops being finite.
    """
    train_set, _, _ = generate_synthetic(spec)
    params = init_params(spec, tcfg)
    momentum = 0.9 if tcfg.optimizer == "sgd_momentum" else 0.0
    opt = _SGD(tcfg.learning_rate, momentum)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 3]))
    n = len(train_set)
    feats_all = {
        "question": train_set.question,
        "video": train_set.video,
        "audio": train_set.audio,
    }
    trace: list[LossBreakdown] = []
    for epoch in range(tcfg.epochs):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            feats = {name: feats_all[name][idx] for name in MODALITIES}
            labels = train_set.labels[idx]
            emb, logits = _forward_batch(params, feats["question"], feats["video"], feats["audio"])
            l_a, l_d, l_c, logit_grads = _batch_losses_and_logit_grads(
                logits, labels, tcfg.debias
            )
            sums += (l_a.sum(), l_d.sum(), l_c.sum())
            p_grads = _backward_batch(params, feats, emb, logit_grads)
            opt.step("head_weight", params.head_weight, p_grads["head_weight"])
            opt.step("head_bias", params.head_bias, p_grads["head_bias"])
            for name in MODALITIES:
                opt.step(f"enc_weight.{name}", params.enc_weight[name], p_grads["enc_weight"][name])
                opt.step(f"enc_bias.{name}", params.enc_bias[name], p_grads["enc_bias"][name])
            for name in PATHS:
                opt.step(f"path_bias.{name}", params.path_bias[name], p_grads["path_bias"][name])
        epoch_loss = LossBreakdown(
            answer=sums[0] / n, discrepancy=sums[1] / n, cycle=sums[2] / n
        )
        if not math.isfinite(epoch_loss.total):
            raise RuntimeError(f"training diverged at epoch {epoch}")
        trace.append(epoch_loss)
    return params, trace


@dataclass
class ToyEvalResult:
    head_acc: float | None
    tail_acc: float | None
    overall_acc: float | None

    def to_dict(self) -> dict:
        return {
            "head_acc": self.head_acc,
            "tail_acc": self.tail_acc,
            "overall_acc": self.overall_acc,
        }


def _fusion_accuracy(params, dataset) -> tuple[int, int]:
    _, logits = _forward_batch(params, dataset.question, dataset.video, dataset.audio)
    predicted = logits["fusion"].argmax(axis=-1)
    return int((predicted == dataset.labels).sum()), len(dataset)


def evaluate_toy(
    params: ToyModelParams,
    head_test: ToyDataset | None,
    tail_test: ToyDataset | None,
) -> ToyEvalResult:
    """Fusion-argmax accuracy on head, tail, and both pooled."""
    correct = {"head": None, "tail": None}
    counts = {"head": 0, "tail": 0}
    for name, dataset in (("head", head_test), ("tail", tail_test)):
        if dataset is not None and len(dataset) > 0:
            correct[name], counts[name] = _fusion_accuracy(params, dataset)
    total = counts["head"] + counts["tail"]
    pooled = (
        ((correct["head"] or 0) + (correct["tail"] or 0)) / total if total else None
    )
    return ToyEvalResult(
        head_acc=correct["head"] / counts["head"] if counts["head"] else None,
        tail_acc=correct["tail"] / counts["tail"] if counts["tail"] else None,
        overall_acc=pooled,
    )


def run_experiment(spec: SyntheticSpec, tcfg: TrainConfig) -> dict:
    """One training run plus its head/tail evaluation."""
    params, trace = train(spec, tcfg)
    _, head_test, tail_test = generate_synthetic(spec)
    result = evaluate_toy(params, head_test, tail_test)
    return {
        "seed": tcfg.seed,
        "alpha": tcfg.debias.alpha,
        "beta": tcfg.debias.beta,
        **result.to_dict(),
        "final_loss": trace[-1].to_dict(),
    }


def run_paired_experiment(
    spec: SyntheticSpec, tcfg: TrainConfig, seeds: list[int]
) -> dict:
    """Debias-on vs answer-loss-only runs over paired seeds.

    Each seed fixes data, initialization, and batch order for both arms;
    only the loss weights differ. The summary reports the median head and
    tail accuracies per arm and the median-over-seeds paired differences.
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    baseline_cfg = replace(tcfg, debias=DebiasConfig(alpha=0.0, beta=0.0))
    runs = []
    for seed in seeds:
        seeded_spec = replace(spec, seed=seed)
        for arm, cfg in (("debias", tcfg), ("baseline", baseline_cfg)):
            run = run_experiment(seeded_spec, replace(cfg, seed=seed))
            run["arm"] = arm
            runs.append(run)
    by_arm = {
        arm: [r for r in runs if r["arm"] == arm] for arm in ("debias", "baseline")
    }
    tail_gains = [
        d["tail_acc"] - b["tail_acc"]
        for d, b in zip(by_arm["debias"], by_arm["baseline"])
    ]
    head_shifts = [
        d["head_acc"] - b["head_acc"]
        for d, b in zip(by_arm["debias"], by_arm["baseline"])
    ]
    summary = {
        "seeds": list(seeds),
        "median_tail_debias": median(r["tail_acc"] for r in by_arm["debias"]),
        "median_tail_baseline": median(r["tail_acc"] for r in by_arm["baseline"]),
        "median_head_debias": median(r["head_acc"] for r in by_arm["debias"]),
        "median_head_baseline": median(r["head_acc"] for r in by_arm["baseline"]),
        "median_tail_gain": median(tail_gains),
        "median_head_shift": median(head_shifts),
    }
    return {"runs": runs, "summary": summary}
