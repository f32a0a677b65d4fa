"""ConvE-style scoring, direction-gated scoring and the training objective."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import ACTIVATIONS, conicity, distance_constraint, xavier
from .errors import ContractError


@dataclass(frozen=True)
class DecoderConfig:
    reshape_h: int = 10
    reshape_w: int = 20
    n_filters: int = 32
    kernel_h: int = 3
    kernel_w: int = 3
    padding: int = 0
    input_drop: float = 0.2
    feature_drop: float = 0.2
    hidden_drop: float = 0.3
    activation: str = "relu"

    @property
    def dim(self):
        return self.reshape_h * self.reshape_w

    @property
    def conv_out(self):
        ho = 2 * self.reshape_h + 2 * self.padding - self.kernel_h + 1
        wo = self.reshape_w + 2 * self.padding - self.kernel_w + 1
        if ho < 1 or wo < 1:
            raise ContractError("decoder: kernel larger than the stacked image")
        return ho, wo

    @property
    def flat_dim(self):
        ho, wo = self.conv_out
        return self.n_filters * ho * wo


@dataclass(frozen=True)
class LossConfig:
    label_smoothing: float = 0.2
    k: float = 0.2
    lambda1: float = 0.01
    lambda2: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ContractError(f"label_smoothing must be in [0,1), got {self.label_smoothing}")
        if not 0.0 <= self.k <= 1.0:
            raise ContractError(f"k must be in [0,1], got {self.k}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ContractError("lambda1 and lambda2 must be non-negative")


def init_decoder_params(rng, n_entities, cfg):
    fan = cfg.kernel_h * cfg.kernel_w
    bound = np.sqrt(6.0 / (fan + cfg.n_filters * fan))
    return {
        "conv": T.parameter(
            rng.uniform(-bound, bound, size=(cfg.n_filters, 1, cfg.kernel_h, cfg.kernel_w)), "conv"
        ),
        "fc": T.parameter(xavier(rng, (cfg.flat_dim, cfg.dim)), "fc"),
        "ent_bias": T.parameter(np.zeros(n_entities), "ent_bias"),
    }


def conve_hidden(e_s, e_r, params, cfg, rng=None):
    """The query vector ``g(vec(g([e_s; e_r] * w)) W)`` for a batch, shape (B, d)."""
    e_s, e_r = T.as_tensor(e_s), T.as_tensor(e_r)
    if e_s.shape != e_r.shape or e_s.shape[-1] != cfg.dim:
        raise ContractError(
            f"conve: subject {e_s.shape} and relation {e_r.shape} must both be (B, {cfg.dim})"
        )
    g = ACTIVATIONS[cfg.activation]
    B = e_s.shape[0]
    img = T.concat(
        [
            T.reshape(e_s, (B, 1, cfg.reshape_h, cfg.reshape_w)),
            T.reshape(e_r, (B, 1, cfg.reshape_h, cfg.reshape_w)),
        ],
        axis=2,
    )
    img = T.dropout(img, cfg.input_drop, rng)
    x = g(T.conv2d(img, params["conv"], cfg.padding))
    x = T.dropout(x, cfg.feature_drop, rng)
    x = T.matmul(T.reshape(x, (B, cfg.flat_dim)), params["fc"])
    x = T.dropout(x, cfg.hidden_drop, rng)
    return g(x)


def conve_score(e_s, e_r, candidates, params, cfg, rng=None):
    """Raw scores ``(B, n_candidates)``: hidden vector dotted with each candidate row, plus bias."""
    candidates = T.as_tensor(candidates)
    hidden = conve_hidden(e_s, e_r, params, cfg, rng)
    if candidates.shape[-1] != hidden.shape[-1]:
        raise ContractError(f"conve: candidate width {candidates.shape[-1]} != {hidden.shape[-1]}")
    scores = T.matmul(hidden, T.transpose(candidates))
    return T.add(scores, params["ent_bias"])


def directional_raw_scores(subjects, rels, forward, task_emb, rel_table, params, cfg, rng=None):
    """Raw scores per query, each against the table of its own sub-task.

    ``forward`` is the boolean direction flag (alpha).  Forward queries use
    the forward-task table for both subject and candidates, backward queries
    the backward-task table, so neither branch reads the other table.
    """
    subjects = np.asarray(subjects, dtype=np.int64)
    rels = np.asarray(rels, dtype=np.int64)
    forward = np.asarray(forward, dtype=bool)
    n = task_emb.forward.shape[0]
    if subjects.size and (subjects.min() < 0 or subjects.max() >= n):
        raise ContractError("directional_score: subject id out of range")
    if rels.size and (rels.min() < 0 or rels.max() >= rel_table.shape[0]):
        raise ContractError("directional_score: relation id out of range")
    parts, order = [], []
    for flag, table in ((True, task_emb.forward), (False, task_emb.backward)):
        sel = np.flatnonzero(forward == flag)
        if sel.size == 0:
            continue
        e_s = T.gather_rows(table, subjects[sel])
        e_r = T.gather_rows(rel_table, rels[sel])
        parts.append(conve_score(e_s, e_r, table, params, cfg, rng))
        order.append(sel)
    order = np.concatenate(order)
    raw = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)
    if np.array_equal(order, np.arange(len(order))):
        return raw
    return T.gather_rows(raw, np.argsort(order))


def directional_score(subjects, rels, forward, task_emb, rel_table, params, cfg):
    """Probabilities in (0, 1) for every candidate tail (evaluation mode)."""
    raw = directional_raw_scores(subjects, rels, forward, task_emb, rel_table, params, cfg)
    return T.sigmoid(raw)


def smoothed_targets(labels, u, cfg, n_entities):
    """Per-element soft targets: 1 - l + u^k/|E| for positives, u^k/|E| for negatives."""
    labels = np.asarray(labels, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if (u < 1).any():
        raise ContractError("tu_loss: uncertainty counts must be >= 1")
    w = (u ** cfg.k / n_entities)[:, None]
    pos = np.clip(1.0 - cfg.label_smoothing + w, 0.0, 1.0)
    neg = np.clip(w, 0.0, 1.0)
    return labels * pos + (1.0 - labels) * neg


def tu_loss(scores, labels, u, cfg):
    """Uncertainty-aware smoothed BCE over raw scores, averaged over all elements.

    Written as ``softplus(s) - y * s`` which equals both branches of the
    per-element loss and has gradient ``sigmoid(s) - y``.
    """
    scores = T.as_tensor(scores)
    y = smoothed_targets(labels, u, cfg, scores.shape[1])
    return T.mean(T.sub(T.softplus(scores), T.mul(scores, y)))


def gc_loss(ef, eb, cfg):
    """``lambda1 * dis(ef, eb) + lambda2 * (con(ef) + con(eb))``."""
    total = T.Tensor(0.0)
    if cfg.lambda1:
        total = T.add(total, T.mul(distance_constraint(ef, eb), cfg.lambda1))
    elif T.as_tensor(ef).shape != T.as_tensor(eb).shape:
        raise ContractError("gc_loss: shape mismatch")
    if cfg.lambda2:
        total = T.add(total, T.mul(T.add(conicity(ef), conicity(eb)), cfg.lambda2))
    return total


def total_loss(tu, gc):
    return T.add(tu, gc)
