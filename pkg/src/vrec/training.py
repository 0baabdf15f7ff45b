"""Three-stage training: backbone pre-training, verifier dataset collection
and pre-training, then joint verifiable fine-tuning."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import Backbone
from .datasets import Sample
from .labeling import GroupLabeling
from .numerics import Rng, Tensor, element, entropy, log, log_softmax, relu
from .reasoning import ReasoningTrace, greedy_recommend, run_reasoning
from .verifiers import VerifierBank, predict, route

__all__ = [
    "Adam",
    "TrainHyper",
    "VerifierSample",
    "collect_verifier_dataset",
    "finetune",
    "monotonicity_loss",
    "pretrain_backbone",
    "pretrain_verifiers",
    "recommendation_loss",
    "verifier_loss",
]


@dataclass
class TrainHyper:
    lr: float = 1e-3
    epochs: int = 3
    batch: int = 32
    alpha: float = 1.0  # negative-sample entropy weight
    beta: float = 0.5  # verifier-loss weight
    gamma: float = 0.5  # monotonicity weight
    seed: int = 0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("alpha, beta, gamma must be non-negative")


@dataclass
class VerifierSample:
    """One collected trace: adjusted step vectors plus labels (None = negative)."""

    r_steps: np.ndarray  # (m, d_m)
    labels: np.ndarray | None  # per-dimension target classes, or None


class Adam:
    """Adam over a named parameter dict. lr=0 leaves parameters bit-identical."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            if p.grad is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * p.grad
            self.v[k] = b2 * self.v[k] + (1 - b2) * p.grad**2
            mhat = self.m[k] / (1 - b1**self.t)
            vhat = self.v[k] / (1 - b2**self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class TrainLog:
    """Per-epoch CSV: epoch, L_r, L_v, L_m, total, val_recall@5, wall_seconds."""

    COLUMNS = ["epoch", "L_r", "L_v", "L_m", "total", "val_recall@5", "wall_seconds"]

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.rows: list[dict] = []
        if self.path:
            with self.path.open("w", encoding="utf-8", newline="") as fh:
                csv.writer(fh).writerow(self.COLUMNS)

    def append(self, **row) -> None:
        self.rows.append(row)
        if self.path:
            with self.path.open("a", encoding="utf-8", newline="") as fh:
                csv.writer(fh).writerow([row.get(c, "") for c in self.COLUMNS])


def recommendation_loss(backbone: Backbone, final_hidden: Tensor, target: int) -> Tensor:
    """Negative log-probability of the target item at the final position."""
    scores = backbone.next_item_scores(final_hidden, final_hidden.data.shape[0] - 1)
    return -element(log_softmax(scores), target)


def _mean(losses: list[Tensor]) -> Tensor:
    acc = losses[0]
    for l in losses[1:]:
        acc = acc + l
    return acc * (1.0 / len(losses))


def _batches(n: int, batch: int, rng: Rng):
    order = rng.permutation(n)
    for start in range(0, n, batch):
        yield order[start:start + batch]


def _check_finite(value: float, stage: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise FloatingPointError(f"{stage}: loss became {value} at epoch {epoch}")


def pretrain_backbone(backbone: Backbone, samples: list[Sample], hyper: TrainHyper,
                      log_path: str | Path | None = None) -> list[float]:
    """Stage 0: reason-then-recommend training with the recommendation loss only."""
    opt = Adam(backbone.params(), lr=hyper.lr)
    rng = Rng(hyper.seed, 30)
    tlog = TrainLog(log_path)
    epoch_losses: list[float] = []
    m = backbone.cfg.m
    for epoch in range(hyper.epochs):
        t0 = time.monotonic()
        total = 0.0
        count = 0
        for idx in _batches(len(samples), hyper.batch, rng):
            losses = []
            for j in idx:
                s = samples[j]
                _, hidden = run_reasoning(backbone, None, s.history, m)
                losses.append(recommendation_loss(backbone, hidden, s.target))
            loss = _mean(losses)
            _check_finite(loss.item(), "pretrain_backbone", epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        mean_loss = total / count
        epoch_losses.append(mean_loss)
        tlog.append(epoch=epoch, L_r=mean_loss, L_v=0.0, L_m=0.0, total=mean_loss,
                   wall_seconds=round(time.monotonic() - t0, 3))
    return epoch_losses


def collect_verifier_dataset(backbone: Backbone, samples: list[Sample],
                             labelings: list[GroupLabeling], m: int) -> list[VerifierSample]:
    """Stage 1 data: greedy-decode each sample; hits become positives labeled
    with the target's class in every dimension, misses become negatives."""
    out: list[VerifierSample] = []
    for s in samples:
        trace, hidden = run_reasoning(backbone, None, s.history, m)
        y_hat = greedy_recommend(backbone, hidden)
        r_steps = np.stack([r.data for r in trace.adjusted()]) if trace.steps else \
            np.zeros((0, backbone.cfg.d_m))
        if y_hat == s.target:
            labels = np.zeros(len(labelings), dtype=np.int64)
            for i, lab in enumerate(labelings):
                if s.target >= len(lab.labels):
                    raise ValueError(f"item {s.target} missing from labeling {lab.dimension!r}")
                labels[i] = lab.labels[s.target]
            out.append(VerifierSample(r_steps=r_steps, labels=labels))
        else:
            out.append(VerifierSample(r_steps=r_steps, labels=None))
    return out


def _step_vectors(trace) -> list[Tensor]:
    if isinstance(trace, ReasoningTrace):
        return trace.adjusted()
    return [r if isinstance(r, Tensor) else Tensor(r) for r in trace]


def verifier_loss(bank: VerifierBank, trace, labels: np.ndarray | None,
                  alpha: float = 1.0) -> Tensor:
    """Mean per-step, per-dimension loss: -log p[label] on positives,
    -alpha * H(p) on negatives (minimizing pushes negative entropy up)."""
    vectors = _step_vectors(trace)
    if not vectors:
        raise ValueError("verifier_loss requires a non-empty trace")
    terms: list[Tensor] = []
    for r in vectors:
        w = route(bank, r)
        for i, verifier in enumerate(bank.verifiers):
            p = predict(verifier, element(w, i) * r)
            if labels is None:
                terms.append(-alpha * entropy(p))
            else:
                cls = int(labels[i])
                if not 0 <= cls < verifier.d_i:
                    raise ValueError(f"label {cls} out of range for dimension "
                                     f"{verifier.dimension!r} (d_i={verifier.d_i})")
                terms.append(-element(log(p), cls))
    return _mean(terms)


def verifier_stats(bank: VerifierBank, dataset: list[VerifierSample]) -> tuple[float, float]:
    """(positive class accuracy, negative mean entropy) over a collected dataset."""
    hits = total = 0
    neg_entropies: list[float] = []
    for sample in dataset:
        for r_vec in sample.r_steps:
            r = Tensor(r_vec)
            w = route(bank, r)
            for i, verifier in enumerate(bank.verifiers):
                p = predict(verifier, element(w, i) * r)
                if sample.labels is None:
                    neg_entropies.append(entropy(p).item())
                else:
                    hits += int(np.argmax(p.data)) == int(sample.labels[i])
                    total += 1
    acc = hits / total if total else float("nan")
    neg_h = float(np.mean(neg_entropies)) if neg_entropies else float("nan")
    return acc, neg_h


def pretrain_verifiers(bank: VerifierBank, dataset: list[VerifierSample],
                       hyper: TrainHyper, log_path: str | Path | None = None
                       ) -> list[tuple[float, float]]:
    """Stage 1 training: fit the bank on collected traces, backbone frozen.

    Returns per-epoch (positive accuracy, negative mean entropy).
    """
    if not dataset:
        raise ValueError("verifier dataset is empty")
    usable = [s for s in dataset if len(s.r_steps)]
    opt = Adam(bank.params(), lr=hyper.lr)
    rng = Rng(hyper.seed, 31)
    tlog = TrainLog(log_path)
    history: list[tuple[float, float]] = []
    for epoch in range(hyper.epochs):
        t0 = time.monotonic()
        total = 0.0
        count = 0
        for idx in _batches(len(usable), hyper.batch, rng):
            losses = [verifier_loss(bank, usable[j].r_steps, usable[j].labels, hyper.alpha)
                      for j in idx]
            loss = _mean(losses)
            _check_finite(loss.item(), "pretrain_verifiers", epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        acc, neg_h = verifier_stats(bank, usable)
        history.append((acc, neg_h))
        tlog.append(epoch=epoch, L_v=total / count, total=total / count,
                   wall_seconds=round(time.monotonic() - t0, 3))
    return history


def monotonicity_loss(trace) -> Tensor:
    """Hinge on entropy increases between consecutive steps, averaged over
    dimensions and step pairs; zero when fewer than two steps."""
    if isinstance(trace, ReasoningTrace):
        f_rows = [v.f for _, _, v in trace.steps if v is not None]
    else:
        arr = np.asarray(trace, dtype=np.float64)
        f_rows = [[Tensor(x) for x in step] for step in arr]
    if len(f_rows) < 2:
        return Tensor(0.0)
    terms: list[Tensor] = []
    for prev, curr in zip(f_rows, f_rows[1:]):
        for f_prev, f_curr in zip(prev, curr):
            terms.append(relu(f_curr - f_prev))
    return _mean(terms)


def finetune(backbone: Backbone, bank: VerifierBank, samples: list[Sample],
             labelings: list[GroupLabeling], hyper: TrainHyper,
             valid_samples: list[Sample] | None = None,
             log_path: str | Path | None = None) -> list[dict]:
    """Stage 2: joint optimization of L_r + beta L_v + gamma L_m through the
    full reason-verify loop, every sample supervised with its target's labels."""
    from .evaluation import evaluate

    params = {f"backbone.{k}": v for k, v in backbone.params().items()}
    params.update({f"bank.{k}": v for k, v in bank.params().items()})
    opt = Adam(params, lr=hyper.lr)
    rng = Rng(hyper.seed, 32)
    tlog = TrainLog(log_path)
    m = backbone.cfg.m
    target_labels = np.stack([lab.labels for lab in labelings], axis=1)  # item -> per-dim classes
    history: list[dict] = []
    for epoch in range(hyper.epochs):
        t0 = time.monotonic()
        sums = {"L_r": 0.0, "L_v": 0.0, "L_m": 0.0, "total": 0.0}
        count = 0
        for idx in _batches(len(samples), hyper.batch, rng):
            l_r_parts, l_v_parts, l_m_parts = [], [], []
            for j in idx:
                s = samples[j]
                trace, hidden = run_reasoning(backbone, bank, s.history, m)
                l_r_parts.append(recommendation_loss(backbone, hidden, s.target))
                if m > 0:
                    l_v_parts.append(verifier_loss(bank, trace, target_labels[s.target],
                                                   hyper.alpha))
                    l_m_parts.append(monotonicity_loss(trace))
            l_r = _mean(l_r_parts)
            l_v = _mean(l_v_parts) if l_v_parts else Tensor(0.0)
            l_m = _mean(l_m_parts) if l_m_parts else Tensor(0.0)
            total = l_r + hyper.beta * l_v + hyper.gamma * l_m
            _check_finite(total.item(), "finetune", epoch)
            opt.zero_grad()
            total.backward()
            opt.step()
            for key, val in (("L_r", l_r), ("L_v", l_v), ("L_m", l_m), ("total", total)):
                sums[key] += val.item() * len(idx)
            count += len(idx)
        row = {k: v / count for k, v in sums.items()}
        if valid_samples:
            report = evaluate(backbone, bank, valid_samples, m=m, ks=(5,))
            row["val_recall@5"] = report.recall[5]
        row["epoch"] = epoch
        row["wall_seconds"] = round(time.monotonic() - t0, 3)
        history.append(row)
        tlog.append(**row)
    return history
