"""The forecasting network: per-modality GCN encoders over each hour's
graph snapshot, learned per-node attention fusion, a shared LSTM over the
input window, and a linear multi-horizon head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .numcore import Tensor

LSTM_GATES = ("f", "i", "c", "o")


@dataclass
class DmfParameters:
    """All trainable weights, keyed by name; values are numcore Tensors."""
    f_t: int
    f_s: int
    hidden: int
    horizon: int
    modalities: tuple
    tensors: dict = field(default_factory=dict)

    @classmethod
    def init(cls, f_t, f_s, hidden, horizon, modalities=("d", "tt"), seed=0):
        rng = np.random.default_rng(seed)
        f_in = f_t + f_s

        def uniform(*shape):
            bound = 1.0 / np.sqrt(shape[0])
            return Tensor(rng.uniform(-bound, bound, size=shape),
                          requires_grad=True)

        t = {}
        for g in modalities:
            t[f"W_{g}"] = uniform(f_in, hidden)
        if len(modalities) > 1:
            for g in modalities:
                t[f"w_att_{g}"] = uniform(hidden)
        for gate in LSTM_GATES:
            t[f"W_{gate}_lstm"] = uniform(hidden, hidden)
            t[f"U_{gate}_lstm"] = uniform(hidden, hidden)
            t[f"b_{gate}_lstm"] = Tensor(np.zeros(hidden), requires_grad=True)
        t["W_out"] = uniform(hidden, horizon)
        t["b_out"] = Tensor(np.zeros(horizon), requires_grad=True)
        return cls(f_t=f_t, f_s=f_s, hidden=hidden, horizon=horizon,
                   modalities=tuple(modalities), tensors=t)

    def trainable(self):
        return list(self.tensors.values())

    def named(self):
        return dict(self.tensors)

    def param_count(self):
        return sum(t.data.size for t in self.tensors.values())

    def copy(self):
        t = {k: Tensor(v.data.copy(), requires_grad=True)
             for k, v in self.tensors.items()}
        return DmfParameters(self.f_t, self.f_s, self.hidden, self.horizon,
                             self.modalities, t)


@dataclass
class FusionTrace:
    """Per-step attention weights and embeddings, for inspection."""
    alphas: list = field(default_factory=list)  # (N_t, n_modalities) arrays
    embeddings: list = field(default_factory=list)  # {g: (N_t, H)} per step


def concat_node_features(temporal_step, spatial, m_temp=None, m_spatial=None):
    """Masked [temporal || spatial] node matrix for one step (numpy)."""
    if temporal_step.shape[0] != spatial.shape[0]:
        raise ValueError("temporal/spatial node counts disagree")
    if m_temp is not None:
        temporal_step = temporal_step * m_temp
    if m_spatial is not None:
        spatial = spatial * m_spatial
    return np.concatenate([temporal_step, spatial], axis=1)


def gcn_layer(norm_adj, h_nodes, weight):
    """Graph convolution: ReLU(Ã H W)."""
    return nc.relu(nc.matmul(nc.matmul(norm_adj, h_nodes), weight))


def attention_fuse(z_by_modality, params):
    """Softmax-weighted per-node combination of modality embeddings."""
    modalities = params.modalities
    logits = [nc.matmul(z_by_modality[g], params.tensors[f"w_att_{g}"])
              for g in modalities]
    alpha = nc.softmax(nc.stack(logits, axis=1), axis=1)  # (N, n_mod)
    z_stack = nc.stack([z_by_modality[g] for g in modalities], axis=1)
    n = alpha.shape[0]
    fused = (alpha.reshape(n, len(modalities), 1) * z_stack).sum(axis=1)
    return fused, alpha


def lstm_step(z_fused, h_prev, c_prev, params):
    """One LSTM cell update over all nodes at once."""
    t = params.tensors

    def gate(name, act):
        pre = (nc.matmul(z_fused, t[f"W_{name}_lstm"])
               + nc.matmul(h_prev, t[f"U_{name}_lstm"])
               + t[f"b_{name}_lstm"])
        return act(pre)

    f = gate("f", nc.sigmoid)
    i = gate("i", nc.sigmoid)
    c_tilde = gate("c", nc.tanh)
    c = f * c_prev + i * c_tilde
    o = gate("o", nc.sigmoid)
    h = o * nc.tanh(c)
    return h, c


def predict_head(h, params):
    return nc.matmul(h, params.tensors["W_out"]) + params.tensors["b_out"]


def _snapshot_adj(snapshot, modality, n_nodes):
    if modality == "identity":
        return np.eye(n_nodes)
    return snapshot.norm_d if modality == "d" else snapshot.norm_tt


def forward(window, params, mask=None, static_adj=None):
    """Full network pass over one window.

    Per input step the GCN runs over that step's full active node set
    (predicted nodes first, transient extras after); only the predicted
    rows feed the LSTM. `mask` carries the RL agent's binary feature
    masks; None means all features active. `static_adj` freezes the
    spatial stage on one precomputed normalized adjacency (static-graph
    baseline); it covers the predicted node set only.
    """
    feats = window.features
    n_pred, l, f_t = feats.temporal.shape
    if n_pred == 0:
        raise ValueError("window has an empty predicted node set")
    if f_t != params.f_t or feats.spatial.shape[1] != params.f_s:
        raise ValueError("feature registry does not match parameters")
    m_temp = None if mask is None else mask.m_temp
    m_spatial = None if mask is None else mask.m_spatial

    trace = FusionTrace()
    h = nc.zeros(n_pred, params.hidden)
    c = nc.zeros(n_pred, params.hidden)
    for step in range(l):
        if static_adj is not None:
            rows = concat_node_features(feats.temporal[:, step, :],
                                        feats.spatial, m_temp, m_spatial)
            adjs = {g: static_adj for g in params.modalities}
        else:
            temporal = np.concatenate([feats.temporal[:, step, :],
                                       window.extra_temporal[step]], axis=0)
            spatial = np.concatenate([feats.spatial,
                                      window.extra_spatial[step]], axis=0)
            rows = concat_node_features(temporal, spatial, m_temp, m_spatial)
            snap = window.snapshots[step]
            adjs = {g: _snapshot_adj(snap, g, rows.shape[0])
                    for g in params.modalities}

        h_t = Tensor(rows)
        z_by_mod = {g: gcn_layer(Tensor(adjs[g]), h_t,
                                 params.tensors[f"W_{g}"])
                    for g in params.modalities}
        if len(params.modalities) > 1:
            fused, alpha = attention_fuse(z_by_mod, params)
            trace.alphas.append(alpha.data.copy())
        else:
            fused = z_by_mod[params.modalities[0]]
        trace.embeddings.append({g: z.data.copy()
                                 for g, z in z_by_mod.items()})
        if fused.shape[0] != n_pred:
            fused = fused.take_rows(np.arange(n_pred))
        h, c = lstm_step(fused, h, c, params)

    return predict_head(h, params), trace


def mse_loss(predicted, targets):
    """Mean squared error over nodes and horizons (normalized units)."""
    diff = predicted - Tensor(np.asarray(targets, dtype=float))
    return (diff * diff).mean()
