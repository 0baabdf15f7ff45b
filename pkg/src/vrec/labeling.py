"""Group-level preference labels per verification dimension.

Three labeling dimensions: category passthrough, k-means over hashed
title-trigram embeddings, and k-means over collaborative-filtering item
embeddings. The title embedder is a dependency-free stand-in for a text
encoder; hashed character trigrams are plenty to cluster toy corpora.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Rng

__all__ = [
    "CfModel",
    "GroupLabeling",
    "build_labeling",
    "embed_titles",
    "kmeans",
    "kmeans_objective",
    "label_by_category",
    "load_labeling",
    "save_labeling",
    "train_cf",
]

DEFAULT_CLASS_COUNT = 20
CLASS_COUNT_CHOICES = (15, 20, 25)


@dataclass
class GroupLabeling:
    """Item -> class map for one verification dimension."""

    dimension: str
    d_i: int
    labels: np.ndarray  # int64, one class per item

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.d_i):
            raise ValueError(f"labels out of range for d_i={self.d_i}")


@dataclass
class CfModel:
    item_emb: np.ndarray  # |I| x d_cf
    user_emb: np.ndarray  # |U| x d_cf


def label_by_category(items) -> GroupLabeling:
    """Distinct category strings become classes, indexed in first-appearance order."""
    classes: dict[str, int] = {}
    labels = np.zeros(len(items), dtype=np.int64)
    for i, item in enumerate(items):
        if item.category is None:
            raise ValueError(f"item {item.id} has no category")
        labels[i] = classes.setdefault(item.category, len(classes))
    return GroupLabeling(dimension="category", d_i=len(classes), labels=labels)


def embed_titles(items, dim: int = 64) -> np.ndarray:
    """Hashed character-trigram counts per title, L2-normalized.

    Empty or missing titles produce zero rows.
    """
    out = np.zeros((len(items), dim), dtype=np.float64)
    for i, item in enumerate(items):
        title = item.title or ""
        text = title.lower()
        for j in range(len(text) - 2):
            tri = text[j:j + 3]
            out[i, zlib.crc32(tri.encode("utf-8")) % dim] += 1.0
        norm = np.linalg.norm(out[i])
        if norm > 0:
            out[i] /= norm
    return out


def train_cf(samples, n_items: int, n_users: int, d_cf: int = 16,
             epochs: int = 10, lr: float = 0.05, seed: int = 0) -> CfModel:
    """Matrix factorization with a pairwise ranking loss.

    For each training sample the observed target is scored against one
    sampled negative item via a logistic loss on the score difference;
    user and item embeddings descend the gradient.
    """
    rng = Rng(seed, 1)
    user_emb = rng.normal((n_users, d_cf), std=0.1)
    item_emb = rng.normal((n_items, d_cf), std=0.1)
    for _ in range(epochs):
        for s in samples:
            u = user_emb[s.user]
            pos = item_emb[s.target]
            neg_id = int(rng.integers(0, n_items))
            if neg_id == s.target:
                neg_id = (neg_id + 1) % n_items
            neg = item_emb[neg_id]
            x = float(u @ (pos - neg))
            # d/dx of -log(sigmoid(x)) is sigmoid(x) - 1
            g = 1.0 / (1.0 + np.exp(-x)) - 1.0
            grad_u = g * (pos - neg)
            grad_pos = g * u
            grad_neg = -g * u
            user_emb[s.user] -= lr * grad_u
            item_emb[s.target] -= lr * grad_pos
            item_emb[neg_id] -= lr * grad_neg
    return CfModel(item_emb=item_emb, user_emb=user_emb)


def cf_pair_loss(model: CfModel, samples, seed: int = 0) -> float:
    """Mean logistic pairwise loss over samples with one sampled negative each."""
    rng = Rng(seed, 2)
    n_items = model.item_emb.shape[0]
    total = 0.0
    for s in samples:
        neg_id = int(rng.integers(0, n_items))
        if neg_id == s.target:
            neg_id = (neg_id + 1) % n_items
        x = float(model.user_emb[s.user] @ (model.item_emb[s.target] - model.item_emb[neg_id]))
        total += float(np.log1p(np.exp(-x)))
    return total / max(len(samples), 1)


def _nearest_center(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # squared distances; ties go to the lowest center index via argmin
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def kmeans_objective(points: np.ndarray, assign: np.ndarray, centers: np.ndarray) -> float:
    return float(((points - centers[assign]) ** 2).sum())


def _kmeans_once(points: np.ndarray, k: int, rng: Rng, max_iters: int,
                 trace: list | None) -> tuple[np.ndarray, np.ndarray]:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[int(rng.integers(0, n))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        if d2.sum() <= 0.0:
            centers[j] = points[int(rng.integers(0, n))]
        else:
            centers[j] = points[rng.choice_weighted(d2)]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))

    assign = _nearest_center(points, centers)
    if trace is not None:
        trace.append(kmeans_objective(points, assign, centers))
    for _ in range(max_iters):
        for j in range(k):
            members = points[assign == j]
            if len(members) == 0:
                far = int(((points - centers[assign]) ** 2).sum(axis=1).argmax())
                centers[j] = points[far]
            else:
                centers[j] = members.mean(axis=0)
        new_assign = _nearest_center(points, centers)
        if trace is not None:
            trace.append(kmeans_objective(points, new_assign, centers))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign, centers


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iters: int = 100,
           n_init: int = 4, objective_trace: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ initialization plus Lloyd iterations, best of ``n_init`` restarts.

    Each restart runs until assignments stabilize or ``max_iters``; the run
    with the lowest final objective wins (ties to the earliest restart). An
    empty cluster is re-seeded to the point farthest from its assigned
    center. Nearest-center ties resolve to the lowest center index. Pass a
    list as ``objective_trace`` to collect one per-iteration objective list
    per restart.
    """
    n = points.shape[0]
    if k > n:
        raise ValueError(f"kmeans: k={k} exceeds point count {n}")
    best: tuple[np.ndarray, np.ndarray] | None = None
    best_obj = np.inf
    for r in range(n_init):
        trace: list | None = [] if objective_trace is not None else None
        assign, centers = _kmeans_once(points, k, Rng(seed, 3 + r), max_iters, trace)
        if objective_trace is not None:
            objective_trace.append(trace)
        obj = kmeans_objective(points, assign, centers)
        if obj < best_obj:
            best_obj = obj
            best = (assign, centers)
    return best


def build_labeling(dimension: str, items, samples=None, n_users: int = 0,
                   d_i: int | None = None, seed: int = 0,
                   cf_epochs: int = 10) -> GroupLabeling:
    """Compose a labeling for one dimension: category, title, or cf."""
    if dimension == "category":
        return label_by_category(items)
    k = DEFAULT_CLASS_COUNT if d_i is None else d_i
    if dimension == "title":
        emb = embed_titles(items)
    elif dimension == "cf":
        if samples is None:
            raise ValueError("cf labeling requires train samples")
        model = train_cf(samples, n_items=len(items), n_users=n_users,
                         epochs=cf_epochs, seed=seed)
        emb = model.item_emb
    else:
        raise ValueError(f"unknown labeling dimension {dimension!r}")
    assign, _ = kmeans(emb, k, seed=seed)
    return GroupLabeling(dimension=dimension, d_i=k, labels=assign)


def save_labeling(labeling: GroupLabeling, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"dimension": labeling.dimension, "d_i": labeling.d_i}) + "\n")
        for item_id, cls in enumerate(labeling.labels):
            fh.write(json.dumps({"item": int(item_id), "class": int(cls)}) + "\n")


def load_labeling(path: str | Path) -> GroupLabeling:
    with Path(path).open(encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        pairs = [json.loads(line) for line in fh if line.strip()]
    labels = np.zeros(len(pairs), dtype=np.int64)
    for p in pairs:
        labels[int(p["item"])] = int(p["class"])
    return GroupLabeling(dimension=header["dimension"], d_i=int(header["d_i"]), labels=labels)
