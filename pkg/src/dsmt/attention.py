"""Entity-level fusion of the (forward, self, backward) stack per sub-task.

Stack order is always ``[e_f; e_l; e_b]``, so weight columns read as
(forward, self, backward).  Modes:

* ``mhsa``    - multi-head scaled dot-product self-attention, softmax rows
                column-averaged, heads averaged.
* ``mhaa``    - a learnable 3-vector per head, softmaxed.
* ``mhpa``    - a linear map from the flattened stack to 3 logits per head.
* ``uniform`` - fixed (1/3, 1/3, 1/3); the no-attention ablation.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import xavier
from .errors import ContractError

MODES = ("mhsa", "mhaa", "mhpa", "uniform")
TASKS = ("F", "B")


def init_attention_params(rng, d, mode="mhsa", n_heads=2, d_a=100):
    if mode not in MODES:
        raise ContractError(f"unknown attention mode {mode!r}")
    if n_heads < 1 or d_a < 1:
        raise ContractError("attention needs n_heads >= 1 and d_a >= 1")
    p = {}
    for task in TASKS:
        for i in range(n_heads):
            pre = f"att.{task}.{i}"
            if mode == "mhsa":
                p[f"{pre}.Q"] = T.parameter(xavier(rng, (d, d_a)), f"{pre}.Q")
                p[f"{pre}.K"] = T.parameter(xavier(rng, (d, d_a)), f"{pre}.K")
            elif mode == "mhaa":
                p[f"{pre}.vec"] = T.parameter(rng.normal(0.0, 1.0, size=3), f"{pre}.vec")
            elif mode == "mhpa":
                p[f"{pre}.lin"] = T.parameter(xavier(rng, (3 * d, 3)), f"{pre}.lin")
    return p


def _heads(params, task):
    heads = sorted({int(k.split(".")[2]) for k in params if k.startswith(f"att.{task}.")})
    return heads


def attention_weights_batch(X, params, task, mode="mhsa"):
    """Weights ``(n, 3)`` for a stack tensor ``X`` of shape ``(n, 3, d)``."""
    X = T.as_tensor(X)
    if X.ndim != 3 or X.shape[1] != 3:
        raise ContractError(f"attention: stack must have shape (n, 3, d), got {X.shape}")
    n = X.shape[0]
    if mode == "uniform":
        return T.Tensor(np.full((n, 3), 1.0 / 3.0))
    heads = _heads(params, task)
    if not heads:
        raise ContractError(f"attention: no {mode} parameters for task {task}")
    per_head = []
    for i in heads:
        pre = f"att.{task}.{i}"
        if mode == "mhsa":
            q = T.matmul(X, params[f"{pre}.Q"])
            k = T.matmul(X, params[f"{pre}.K"])
            probs = T.softmax(T.scaled_dot_product(q, k), axis=-1)
            per_head.append(T.mean(probs, axis=1))
        elif mode == "mhaa":
            w = T.softmax(params[f"{pre}.vec"])
            per_head.append(T.mul(T.reshape(w, (1, 3)), np.ones((n, 1))))
        elif mode == "mhpa":
            flat = T.reshape(X, (n, 3 * X.shape[2]))
            per_head.append(T.softmax(T.matmul(flat, params[f"{pre}.lin"]), axis=-1))
        else:
            raise ContractError(f"unknown attention mode {mode!r}")
    if len(per_head) == 1:
        return per_head[0]
    return T.mean(T.stack(per_head, axis=0), axis=0)


def attention_weights(E_h, params, task, mode="mhsa"):
    """Weights for one entity's ``3 x d`` stack."""
    E_h = T.as_tensor(E_h)
    if E_h.ndim != 2 or E_h.shape[0] != 3:
        raise ContractError(f"attention_weights: stack must be 3 x d, got {E_h.shape}")
    A = attention_weights_batch(T.reshape(E_h, (1,) + E_h.shape), params, task, mode)
    return T.reshape(A, (3,))


def fuse(E_h, A):
    """Convex combination ``A @ E_h`` of the three rows."""
    A_arr = np.asarray(T.as_tensor(A).data)
    if A_arr.shape[-1] != 3 or abs(A_arr.sum() - 1.0) > 1e-9 or (A_arr < 0).any():
        raise ContractError(f"fuse: weights must be a point of the simplex, got {A_arr}")
    return T.reshape(T.matmul(T.reshape(A, (1, 3)), E_h), (T.as_tensor(E_h).shape[1],))


def fuse_batch(X, A):
    """Row-wise ``sum_m A[n, m] X[n, m, :]``."""
    return T.sum(T.mul(X, T.reshape(A, (A.shape[0], 3, 1))), axis=1)


@dataclass
class TaskEmbeddings:
    forward: T.Tensor
    backward: T.Tensor
    weights_forward: T.Tensor
    weights_backward: T.Tensor

    def table(self, task):
        return self.forward if task == "F" else self.backward


def stack_directions(dirs):
    return T.stack([dirs.forward, dirs.loop, dirs.backward], axis=1)


def fuse_all(dirs, params, mode="mhsa"):
    X = stack_directions(dirs)
    A_F = attention_weights_batch(X, params, "F", mode)
    A_B = attention_weights_batch(X, params, "B", mode)
    return TaskEmbeddings(fuse_batch(X, A_F), fuse_batch(X, A_B), A_F, A_B)
