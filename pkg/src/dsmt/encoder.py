"""Direction-specific composition message passing and geometric constraints."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError

COMPOSE_MODES = ("mult", "corr")
ACTIVATIONS = {"tanh": T.tanh, "identity": T.identity, "relu": T.relu}


def xavier(rng, shape):
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def compose(mode, v_r, v_t):
    """Merge relation and entity features: Hadamard (``mult``) or circular correlation (``corr``)."""
    v_r, v_t = T.as_tensor(v_r), T.as_tensor(v_t)
    if v_r.shape != v_t.shape:
        raise ContractError(f"compose: shapes {v_r.shape} and {v_t.shape} differ")
    mode = mode.lower()
    if mode == "mult":
        return T.mul(v_r, v_t)
    if mode == "corr":
        return T.circular_correlation(v_r, v_t)
    raise ContractError(f"compose: unknown mode {mode!r}")


def init_encoder_params(rng, n_entities, n_aug_relations, d_in, d, layers=1):
    """Parameter tensors keyed by name. Layer ``l`` weights are suffixed ``.l``."""
    p = {
        "ent": T.parameter(xavier(rng, (n_entities, d_in)), "ent"),
        "rel": T.parameter(xavier(rng, (n_aug_relations, d_in)), "rel"),
    }
    width = d_in
    for layer in range(layers):
        for w in ("W_F", "W_B", "W_L", "W_rel"):
            name = f"{w}.{layer}"
            p[name] = T.parameter(xavier(rng, (width, d)), name)
        width = d
    return p


@dataclass
class DirectionalEmbeddings:
    forward: T.Tensor
    loop: T.Tensor
    backward: T.Tensor
    relations: T.Tensor


def _aggregate(edges, ent, rel, W, mode, n, mean_agg):
    if len(edges) == 0:
        return T.Tensor(np.zeros((n, W.shape[1])))
    phi = compose(mode, T.gather_rows(rel, edges[:, 1]), T.gather_rows(ent, edges[:, 2]))
    # W(sum phi) == sum(W phi); summing first keeps the matmul at |E| rows
    agg = T.segment_sum(phi, edges[:, 0], n)
    if mean_agg:
        deg = np.bincount(edges[:, 0], minlength=n).astype(np.float64)
        agg = T.mul(agg, (1.0 / np.maximum(deg, 1.0))[:, None])
    return T.matmul(agg, W)


def message_pass(graph, index, params, mode="corr", activation="tanh", mean_aggregation=False):
    """Forward, self-loop and backward aggregates for every entity.

    With more than one layer, each intermediate layer feeds the next with the
    mean of its three directional outputs and its transformed relation table.
    """
    act = ACTIVATIONS[activation]
    n = graph.n_entities
    loops = np.arange(n)
    ent, rel = params["ent"], params["rel"]
    layers = sum(1 for k in params if k.startswith("W_F."))
    for layer in range(layers):
        W = {k: params[f"{k}.{layer}"] for k in ("W_F", "W_B", "W_L", "W_rel")}
        ef = act(_aggregate(index.forward, ent, rel, W["W_F"], mode, n, mean_aggregation))
        eb = act(_aggregate(index.backward, ent, rel, W["W_B"], mode, n, mean_aggregation))
        self_rel = T.gather_rows(rel, np.full(n, graph.self_loop))
        el = act(T.matmul(compose(mode, self_rel, T.gather_rows(ent, loops)), W["W_L"]))
        rel = T.matmul(rel, W["W_rel"])
        if layer < layers - 1:
            ent = T.mul(T.add(T.add(ef, el), eb), 1.0 / 3.0)
    return DirectionalEmbeddings(ef, el, eb, rel)


def distance_constraint(ef, eb):
    """Mean Euclidean distance between paired rows."""
    ef, eb = T.as_tensor(ef), T.as_tensor(eb)
    if ef.shape != eb.shape:
        raise ContractError(f"distance_constraint: shapes {ef.shape} and {eb.shape} differ")
    return T.mean(T.row_norm(T.sub(ef, eb), axis=1))


def conicity(E):
    """Mean cosine of each row with the mean row (0 against a near-zero mean)."""
    E = T.as_tensor(E)
    if E.ndim != 2 or E.shape[0] == 0:
        raise ContractError(f"conicity: need a non-empty matrix, got shape {E.shape}")
    m = T.mean(E, axis=0, keepdims=True)
    mnorm = T.row_norm(m, axis=1)
    if mnorm.data[0] < 1e-12:
        return T.Tensor(0.0)
    dots = T.sum(T.mul(E, m), axis=1)
    norms = T.mul(T.row_norm(E, axis=1), mnorm)
    return T.mean(T.safe_div(dots, norms))


def cosine_to_mean(E):
    """Per-row cosine with the mean row, as a numpy array."""
    E = np.asarray(E, dtype=np.float64)
    m = E.mean(axis=0)
    mn = np.linalg.norm(m)
    if mn < 1e-12:
        return np.zeros(E.shape[0])
    rn = np.linalg.norm(E, axis=1) * mn
    return np.where(rn >= 1e-12, E @ m / np.where(rn >= 1e-12, rn, 1.0), 0.0)
