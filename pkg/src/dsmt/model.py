"""The assembled model: encoder, attention fusion and decoder over one graph."""

import numpy as np

from . import tensor as T
from .attention import fuse_all, init_attention_params
from .data import build_neighbor_index
from .decoder import directional_raw_scores, gc_loss, init_decoder_params, total_loss, tu_loss
from .encoder import init_encoder_params, message_pass


class DsMtGCN:
    def __init__(self, config, graph, index=None, params=None):
        self.config = config
        self.graph = graph
        self.index = index if index is not None else build_neighbor_index(graph)
        self.decoder_cfg = config.decoder_config()
        self.loss_cfg = config.loss_config()
        if params is None:
            rng = np.random.default_rng(config.seed)
            params = {}
            params.update(
                init_encoder_params(
                    rng, graph.n_entities, graph.n_aug_relations, config.d_in, config.d, config.gcn_layers
                )
            )
            params.update(init_attention_params(rng, config.d, config.attention, config.n_heads, config.d_a))
            params.update(init_decoder_params(rng, graph.n_entities, self.decoder_cfg))
        else:
            params = {k: v if isinstance(v, T.Tensor) else T.parameter(v, k) for k, v in params.items()}
        self.params = params

    def arrays(self):
        return {k: v.data for k, v in self.params.items()}

    def encode(self):
        """Directional aggregates and their per-task fusion."""
        cfg = self.config
        dirs = message_pass(
            self.graph, self.index, self.params, cfg.compose, cfg.activation, cfg.mean_aggregation
        )
        return dirs, fuse_all(dirs, self.params, cfg.attention)

    def raw_scores(self, subjects, rels, forward, encoded=None, rng=None):
        dirs, task = encoded if encoded is not None else self.encode()
        return directional_raw_scores(
            subjects, rels, forward, task, dirs.relations, self.params, self.decoder_cfg, rng
        )

    def loss(self, subjects, rels, labels, u, rng=None):
        """Returns ``(total, tu, gc)`` tensors for a 1-N batch."""
        dirs, task = self.encode()
        forward = np.asarray(rels) < self.graph.n_relations
        raw = self.raw_scores(subjects, rels, forward, (dirs, task), rng)
        tu = tu_loss(raw, labels, u, self.loss_cfg)
        gc = gc_loss(dirs.forward, dirs.backward, self.loss_cfg)
        return total_loss(tu, gc), tu, gc
