"""Causal-transformer sequence model over item tokens.

Items are single tokens; the model encodes an interaction history, accepts
latent reasoning vectors injected at reserved trailing positions, and ranks
the item vocabulary from any position's hidden state. The output projection
is weight-tied to the token embedding table, restricted to item rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    Rng,
    Tensor,
    add_rowvec,
    cols,
    concat,
    embedding_lookup,
    gelu,
    layer_norm,
    matmul,
    row,
    rows,
    softmax,
)

__all__ = ["Backbone", "ModelConfig"]

N_SPECIAL_TOKENS = 1  # one reserved non-item token keeps item-row restriction honest
MASK_VALUE = -1e30


@dataclass
class ModelConfig:
    d_m: int = 32
    layers: int = 2
    heads: int = 2
    n_items: int = 40
    max_positions: int = 32
    m: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.d_m % self.heads != 0:
            raise ValueError(f"d_m ({self.d_m}) not divisible by heads ({self.heads})")
        if self.m < 0:
            raise ValueError(f"m must be non-negative, got {self.m}")

    @property
    def vocab(self) -> int:
        return self.n_items + N_SPECIAL_TOKENS


class Backbone:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = Rng(cfg.seed, 10)
        d = cfg.d_m

        def w(shape):
            return Tensor(rng.normal(shape, std=0.02), requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        def ones(shape):
            return Tensor(np.ones(shape), requires_grad=True)

        p: dict[str, Tensor] = {}
        p["tok_emb"] = w((cfg.vocab, d))
        p["pos_emb"] = w((cfg.max_positions, d))
        for i in range(cfg.layers):
            pre = f"blocks.{i}."
            p[pre + "ln1.gain"] = ones(d)
            p[pre + "ln1.bias"] = zeros(d)
            for name in ("wq", "wk", "wv", "wo"):
                p[pre + "attn." + name] = w((d, d))
                p[pre + "attn.b" + name[1]] = zeros(d)
            p[pre + "ln2.gain"] = ones(d)
            p[pre + "ln2.bias"] = zeros(d)
            p[pre + "mlp.w1"] = w((d, 4 * d))
            p[pre + "mlp.b1"] = zeros(4 * d)
            p[pre + "mlp.w2"] = w((4 * d, d))
            p[pre + "mlp.b2"] = zeros(d)
        p["ln_f.gain"] = ones(d)
        p["ln_f.bias"] = zeros(d)
        self._params = p

    def params(self) -> dict[str, Tensor]:
        return self._params

    def param_count(self) -> int:
        return sum(t.size for t in self._params.values())

    def _attend(self, x: Tensor, i: int, mask: Tensor) -> Tensor:
        p = self._params
        pre = f"blocks.{i}.attn."
        d, heads = self.cfg.d_m, self.cfg.heads
        dh = d // heads
        q = add_rowvec(matmul(x, p[pre + "wq"]), p[pre + "bq"])
        k = add_rowvec(matmul(x, p[pre + "wk"]), p[pre + "bk"])
        v = add_rowvec(matmul(x, p[pre + "wv"]), p[pre + "bv"])
        outs = []
        scale = 1.0 / math.sqrt(dh)
        for h in range(heads):
            qh = cols(q, h * dh, (h + 1) * dh)
            kh = cols(k, h * dh, (h + 1) * dh)
            vh = cols(v, h * dh, (h + 1) * dh)
            att = softmax(matmul(qh, kh.transpose()) * scale + mask)
            outs.append(matmul(att, vh))
        joined = concat(outs, axis=1)
        return add_rowvec(matmul(joined, p[pre + "wo"]), p[pre + "bo"])

    def encode(self, history: list[int], injected: list[tuple[int, Tensor]] | None = None) -> Tensor:
        """Hidden states for history tokens plus injected latent vectors.

        Injected latents occupy the positions immediately after the history,
        in order; each replaces the token lookup at its position (positional
        embedding still added). Returns the last layer's (T, d_m) states.
        """
        L = len(history)
        injected = injected or []
        T = L + len(injected)
        if T > self.cfg.max_positions:
            raise ValueError(f"sequence length {T} exceeds max_positions {self.cfg.max_positions}")
        if L == 0:
            raise ValueError("encode requires a non-empty history")
        for offset, (pos, vec) in enumerate(injected):
            if pos != L + offset:
                raise ValueError(f"injected latent at position {pos}, expected {L + offset}")
            if vec.data.shape != (self.cfg.d_m,):
                raise ValueError(f"latent vector shape {vec.data.shape}, expected ({self.cfg.d_m},)")

        p = self._params
        parts = [embedding_lookup(p["tok_emb"], history)]
        parts.extend(vec.reshape(1, self.cfg.d_m) for _, vec in injected)
        x = concat(parts, axis=0) if len(parts) > 1 else parts[0]
        x = x + rows(p["pos_emb"], 0, T)

        mask = Tensor(np.triu(np.full((T, T), MASK_VALUE), k=1))
        for i in range(self.cfg.layers):
            pre = f"blocks.{i}."
            normed = layer_norm(x, p[pre + "ln1.gain"], p[pre + "ln1.bias"])
            x = x + self._attend(normed, i, mask)
            normed = layer_norm(x, p[pre + "ln2.gain"], p[pre + "ln2.bias"])
            h = gelu(add_rowvec(matmul(normed, p[pre + "mlp.w1"]), p[pre + "mlp.b1"]))
            x = x + add_rowvec(matmul(h, p[pre + "mlp.w2"]), p[pre + "mlp.b2"])
        return layer_norm(x, p["ln_f.gain"], p["ln_f.bias"])

    def next_item_scores(self, hidden: Tensor, position: int) -> Tensor:
        """Logits over item tokens from one position, tied to the embedding table."""
        if position >= hidden.data.shape[0]:
            raise ValueError(f"position {position} out of range for {hidden.data.shape[0]} states")
        item_rows = rows(self._params["tok_emb"], 0, self.cfg.n_items)
        return matmul(item_rows, row(hidden, position))

    def rank_items(self, hidden: Tensor, position: int, k: int | None = None) -> np.ndarray:
        """Top-k item ids by descending score; ties go to the lower id."""
        scores = self.next_item_scores(hidden, position).data
        k = self.cfg.n_items if k is None else k
        order = np.lexsort((np.arange(len(scores)), -scores))
        return order[:k]

    def greedy(self, hidden: Tensor, position: int) -> int:
        return int(self.rank_items(hidden, position, 1)[0])
