"""Joint training loop coupling the forecaster with the feature-masking
agent, the model-variant switchboard, evaluation and checkpointing.
"""

from __future__ import annotations

import hashlib
import json
import pickle
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import dmf, graphs, metrics, numcore as nc, rlagent

CHECKPOINT_VERSION = 1

VARIANTS = ("rl_dmf", "dmf_no_rl", "rl_dgl_distance", "rl_dgl_traveltime",
            "lstm_only", "static_gcn_lstm")
ABLATION_VARIANTS = ("rl_dgl_distance", "rl_dgl_traveltime", "dmf_no_rl",
                     "rl_dmf")

_MODALITIES = {
    "rl_dmf": ("d", "tt"),
    "dmf_no_rl": ("d", "tt"),
    "rl_dgl_distance": ("d",),
    "rl_dgl_traveltime": ("tt",),
    "lstm_only": ("identity",),
    "static_gcn_lstm": ("d",),
}
_RL_VARIANTS = frozenset({"rl_dmf", "rl_dgl_distance", "rl_dgl_traveltime"})


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    variant: str = "rl_dmf"
    epochs: int = 200
    batch_size: int = 8
    lr: float = 5e-3
    seed: int = 0
    l: int = 6
    p: int = 6
    hidden: int = 32
    rl_lr: float = 1e-3
    rl_gamma: float = rlagent.GAMMA
    rl_buffer: int = rlagent.BUFFER_CAPACITY
    rl_batch: int = rlagent.REPLAY_BATCH
    rl_sync_every: int = rlagent.TARGET_SYNC_EVERY
    patience: int = 50
    # stop as soon as denormalized training RMSE drops below this (veh/h)
    train_rmse_stop: float | None = None
    # debug hook: keep the RL machinery off but mask nothing
    force_all_ones_mask: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected "
                             f"one of {VARIANTS}")
        if self.l < 1 or self.p < 1:
            raise ValueError("l and p must be >= 1")

    def uses_rl(self):
        return self.variant in _RL_VARIANTS and not self.force_all_ones_mask

    def modalities(self):
        return _MODALITIES[self.variant]

    def hash(self):
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_rmse: float | None
    val_mae: float | None
    val_mape: float | None
    val_r2: float | None
    epsilon: float | None
    mean_reward: float | None
    wall_time: float


@dataclass
class TrainResult:
    params: dmf.DmfParameters
    config: TrainConfig
    epoch_logs: list
    agent: rlagent.Agent | None
    ranking_rows: list | None
    static_adj_full: np.ndarray | None = None


def _static_distance_adj(dataset):
    """Frozen distance adjacency over the union of all detectors."""
    metas = [dataset.data.metas[d] for d in dataset.data.detector_ids]
    speeds = {m.detector_id: graphs.V_MIN for m in metas}
    return graphs.build_snapshot(metas, speeds).adj_d


def _window_static_adj(static_full, det_indices):
    sub = static_full[np.ix_(det_indices, det_indices)]
    return graphs.gcn_normalize(sub)


def _forward_loss(window, params, mask, static_full):
    static_adj = None
    if static_full is not None:
        static_adj = _window_static_adj(static_full, window.det_indices)
    predicted, _ = dmf.forward(window, params, mask=mask,
                               static_adj=static_adj)
    return predicted, dmf.mse_loss(predicted, window.targets)


def train(config, dataset, log_fn=None):
    """Run the configured variant over the dataset's training windows.

    One RL action (one masked feature) per optimizer step; the reward is
    the negative normalized-unit MSE of that step, and the next state is
    built from the next step's batch.
    """
    if not dataset.train_windows:
        raise ValueError("dataset has no training windows")
    shuffle_rng = np.random.default_rng(config.seed)
    params = dmf.DmfParameters.init(dataset.f_t, dataset.f_s, config.hidden,
                                    config.p, modalities=config.modalities(),
                                    seed=config.seed + 1)
    optimizer = nc.Adam(params.trainable(), lr=config.lr)
    static_full = (_static_distance_adj(dataset)
                   if config.variant == "static_gcn_lstm" else None)

    agent = None
    if config.uses_rl():
        steps_per_epoch = max(1, int(np.ceil(len(dataset.train_windows)
                                             / config.batch_size)))
        agent = rlagent.Agent(dataset.f_t + dataset.f_s,
                              seed=config.seed + 2, gamma=config.rl_gamma,
                              capacity=config.rl_buffer,
                              batch_size=config.rl_batch,
                              sync_every=config.rl_sync_every,
                              lr=config.rl_lr,
                              total_steps_hint=config.epochs
                              * steps_per_epoch)

    logs = []
    pending = None  # (state, action, reward) awaiting its next state
    best_val = np.inf
    best_params = None
    stale = 0
    t_start = time.perf_counter()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(dataset.train_windows))
        batches = [order[i:i + config.batch_size]
                   for i in range(0, len(order), config.batch_size)]
        epoch_loss = 0.0
        rewards = []
        eps = None
        for batch_idx in batches:
            batch = [dataset.train_windows[i] for i in batch_idx]
            mask = None
            state = None
            if agent is not None:
                state = rlagent.build_state([w.features for w in batch])
                if pending is not None:
                    agent.observe(*pending, state)
                    agent.learn()
                action, eps = agent.act(state)
                mask = rlagent.apply_mask(action, dataset.f_t, dataset.f_s)

            optimizer.zero_grad()
            losses = [_forward_loss(w, params, mask, static_full)[1]
                      for w in batch]
            loss = losses[0] if len(losses) == 1 else \
                sum(losses[1:], start=losses[0]) * (1.0 / len(losses))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, variant "
                    f"{config.variant}, lr {config.lr}")
            loss.backward()
            optimizer.step()
            epoch_loss += loss_value * len(batch)

            if agent is not None:
                reward = rlagent.compute_reward(loss_value)
                rewards.append(reward)
                pending = (state, mask.action, reward)

        epoch_loss /= len(dataset.train_windows)
        val = evaluate(params, dataset.val_windows, dataset, static_full) \
            if dataset.val_windows else None
        overall = val["overall"] if val else None
        logs.append(EpochLog(
            epoch=epoch, train_loss=epoch_loss,
            val_rmse=overall.rmse if overall else None,
            val_mae=overall.mae if overall else None,
            val_mape=overall.mape if overall else None,
            val_r2=overall.r2 if overall else None,
            epsilon=eps, mean_reward=float(np.mean(rewards))
            if rewards else None,
            wall_time=time.perf_counter() - t_start))
        if log_fn:
            log_fn(logs[-1])

        if config.train_rmse_stop is not None:
            train_overall = evaluate(params, dataset.train_windows, dataset,
                                     static_full)["overall"]
            if train_overall.rmse < config.train_rmse_stop:
                break
        if overall is not None:
            if overall.rmse < best_val - 1e-12:
                best_val = overall.rmse
                best_params = params.copy()
                stale = 0
            else:
                stale += 1
                if stale > config.patience:
                    params = best_params
                    break

    ranking_rows = None
    if agent is not None and agent.counter.total > 0:
        ranking_rows = rlagent.ranking(agent.counter, dataset.registry)
    return TrainResult(params=params, config=config, epoch_logs=logs,
                       agent=agent, ranking_rows=ranking_rows,
                       static_adj_full=static_full)


def evaluate(params, windows, dataset, static_full=None):
    """Per-horizon and overall metrics on denormalized flows, no mask."""
    if not windows:
        raise ValueError("no windows to evaluate")
    p = params.horizon
    actual = [[] for _ in range(p)]
    predicted = [[] for _ in range(p)]
    for w in windows:
        yhat, _ = dmf.forward(
            w, params,
            static_adj=_window_static_adj(static_full, w.det_indices)
            if static_full is not None else None)
        denorm = dataset.target_norm.inverse(w.det_indices, yhat.data)
        for h in range(p):
            actual[h].extend(w.targets_raw[:, h])
            predicted[h].extend(denorm[:, h])
    table = {}
    for h in range(p):
        table[h + 1] = metrics.compute(actual[h], predicted[h])
    table["overall"] = metrics.compute(
        np.concatenate([np.asarray(a) for a in actual]),
        np.concatenate([np.asarray(q) for q in predicted]))
    return table


def ablate(base_config, dataset, log_fn=None):
    """Run the four ablation variants on the same data and seed.

    Returns (tables, failures): variant -> metric table for the runs
    that finished, variant -> error string for those that did not.
    """
    tables = {}
    failures = {}
    for variant in ABLATION_VARIANTS:
        cfg = TrainConfig(**{**asdict(base_config), "variant": variant})
        try:
            result = train(cfg, dataset, log_fn=log_fn)
            eval_windows = dataset.val_windows or dataset.train_windows
            tables[variant] = evaluate(result.params, eval_windows, dataset,
                                       result.static_adj_full)
        except Exception as exc:  # keep the other variants running
            failures[variant] = f"{type(exc).__name__}: {exc}"
    return tables, failures


# ---- artifact emission ----

def _metric_row(report):
    return ",".join(report.row())


def write_metrics_csv(table, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("horizon,RMSE,MAE,MAPE,R2\n")
        horizons = sorted(k for k in table if k != "overall")
        for h in horizons:
            fh.write(f"{h},{_metric_row(table[h])}\n")
        fh.write(f"overall,{_metric_row(table['overall'])}\n")


def write_ablation_csv(tables, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variant,horizon,RMSE,MAE,MAPE,R2\n")
        for variant in ABLATION_VARIANTS:
            if variant not in tables:
                continue
            table = tables[variant]
            horizons = sorted(k for k in table if k != "overall")
            for h in horizons:
                fh.write(f"{variant},{h},{_metric_row(table[h])}\n")
            fh.write(f"{variant},overall,{_metric_row(table['overall'])}\n")


def write_epochs_csv(logs, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_rmse,val_mae,val_mape,val_r2,"
                 "epsilon,mean_reward,wall_time\n")
        for log in logs:
            fields = [log.epoch, log.train_loss, log.val_rmse, log.val_mae,
                      log.val_mape, log.val_r2, log.epsilon,
                      log.mean_reward, round(log.wall_time, 3)]
            fh.write(",".join("" if f is None else repr(f)
                              if isinstance(f, float) else str(f)
                              for f in fields) + "\n")


def save_checkpoint(result, dataset, path):
    """Versioned container; identical runs produce identical bytes."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(result.config),
        "config_hash": result.config.hash(),
        "registry": dataset.registry,
        "hyperparams": {"hidden": result.config.hidden,
                        "l": result.config.l, "p": result.config.p,
                        "seed": result.config.seed},
        "modalities": result.params.modalities,
        "f_t": result.params.f_t,
        "f_s": result.params.f_s,
        "params": {k: v.data.copy()
                   for k, v in result.params.named().items()},
        "agent": result.agent.state_dict() if result.agent else None,
        "static_adj_full": result.static_adj_full,
        "target_norm": {"mean": dataset.target_norm.mean,
                        "std": dataset.target_norm.std},
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=4)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version "
                         f"{payload.get('version')}")
    cfg = TrainConfig(**payload["config"])
    params = dmf.DmfParameters.init(payload["f_t"], payload["f_s"],
                                    cfg.hidden, cfg.p,
                                    modalities=tuple(payload["modalities"]),
                                    seed=cfg.seed + 1)
    for k, tensor in params.named().items():
        tensor.data = payload["params"][k].copy()
    return payload, cfg, params


def check_registry(payload, dataset):
    if payload["registry"] != dataset.registry:
        raise ValueError(
            "checkpoint feature registry does not match the dataset:\n"
            f"checkpoint: {payload['registry']}\n"
            f"dataset:    {dataset.registry}")
