"""Linear adapter, the merged training objective, and its analytic gradients.

The objective couples softmax cross-entropy over seen classes (each sample's
logits aggregated with its ground-truth class's layer weights), a
semantic-visual alignment term, feature distillation against the previous
task's adapter, and the two layer-weight regularizers. Adapter parameters
take Adam steps every batch; layer weights take full-dataset projected
gradient sweeps on a fixed epoch period. Both gradient paths are
hand-derived and checked against the central-difference oracle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptive import (
    LayerWeights,
    entropy_regularizer,
    freq_regularizer,
    frequency_prior,
    update_alpha,
)
from .alignment import MemoryBank, build_balanced_batch, update_statistics
from .errors import DimensionMismatch, NonFiniteGradient
from .numerics import row_softmax, symmetric_kl

_NORM_FLOOR = 1e-300


@dataclass
class Adapter:
    """Trainable linear map on frozen visual features: x -> W x + b."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "Adapter":
        return cls(weight=np.eye(dim), bias=np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.bias.size

    def apply(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.dim:
            raise DimensionMismatch(
                f"adapter dim {self.dim} vs feature dim {x.shape[1]}"
            )
        out = x @ self.weight.T + self.bias
        return out[0] if single else out

    def copy(self) -> "Adapter":
        return Adapter(weight=self.weight.copy(), bias=self.bias.copy())

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "weight.bin").write_bytes(self.weight.astype("<f4").tobytes())
        (directory / "bias.bin").write_bytes(self.bias.astype("<f4").tobytes())
        meta = {"version": 1, "dim": self.dim, "dtype": "f32le"}
        (directory / "adapter.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, directory) -> "Adapter":
        directory = Path(directory)
        meta = json.loads((directory / "adapter.json").read_text(encoding="utf-8"))
        d = meta["dim"]
        weight = (
            np.frombuffer((directory / "weight.bin").read_bytes(), dtype="<f4")
            .reshape(d, d)
            .astype(np.float64)
        )
        bias = np.frombuffer((directory / "bias.bin").read_bytes(), dtype="<f4").astype(
            np.float64
        )
        return cls(weight=weight, bias=bias)


@dataclass
class TrainingConfig:
    """Scalar knobs of the per-task loop; validated on construction."""

    lambda1: float = 0.025
    lambda2: float = 1.0
    lambda3: float = 0.3
    lambda4: float = 0.6
    eta_theta: float = 1e-3
    eta_alpha: float = 1e-3
    epochs: int = 30
    alpha_period: int = 5
    batch_size: int = 64
    ce_scale: float = 100.0
    align_temperature: float = 0.1
    replay: bool = True
    replay_cap: int | None = None
    update_alpha: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.eta_theta <= 0 or self.eta_alpha <= 0:
            raise DimensionMismatch("learning rates must be > 0")
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise DimensionMismatch("loss weights must be >= 0")
        if self.epochs < 1:
            raise DimensionMismatch("epochs must be >= 1")
        if self.alpha_period < 1 or self.batch_size < 1:
            raise DimensionMismatch("alpha_period and batch_size must be >= 1")


@dataclass
class ObjectiveContext:
    """One batch plus everything the merged objective needs to see it."""

    features: np.ndarray          # raw frozen features, (n, d)
    labels: np.ndarray            # (n,)
    class_ids: list[int]          # all seen classes, sorted; logit column order
    layer_features: np.ndarray    # (layers, classes, d)
    weight_rows: np.ndarray       # (classes, layers), aligned with class_ids
    current_task_ids: list[int]   # rows that receive the frequency prior
    prior_rows: dict[int, np.ndarray]
    config: TrainingConfig
    old_adapter: Adapter | None = None

    def __post_init__(self):
        self.col_of = {cid: i for i, cid in enumerate(self.class_ids)}
        self.label_cols = np.asarray([self.col_of[int(c)] for c in self.labels])


@dataclass
class ObjectiveBreakdown:
    ce: float
    alignment: float
    distillation: float
    entropy: float
    frequency: float
    theta_total: float
    alpha_total: float

    def as_dict(self) -> dict:
        return {
            "ce": self.ce,
            "alignment": self.alignment,
            "distillation": self.distillation,
            "entropy": self.entropy,
            "frequency": self.frequency,
            "theta_total": self.theta_total,
            "alpha_total": self.alpha_total,
        }


def _forward(adapter: Adapter, ctx: ObjectiveContext):
    """Shared forward pass; returns every intermediate the backward needs."""
    cfg = ctx.config
    x = ctx.features
    n = x.shape[0]
    z = adapter.apply(x)
    g = ctx.layer_features
    a = ctx.weight_rows

    # Cross-entropy over seen classes with the ground-truth class's weights.
    dots = np.einsum("kcd,nd->knc", g, z)          # (layers, n, classes)
    row_a = a[ctx.label_cols]                      # (n, layers)
    logits = cfg.ce_scale * np.einsum("nk,knc->nc", row_a, dots)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sum_exp = exp.sum(axis=1, keepdims=True)
    probs = exp / sum_exp
    # log-softmax form: finite even when a class's probability underflows
    log_picked = shifted[np.arange(n), ctx.label_cols] - np.log(sum_exp[:, 0])
    ce_shares = -log_picked / n
    ce = float(ce_shares.sum())

    # Distillation against the previous task's adapter.
    if ctx.old_adapter is not None:
        diffs = z - ctx.old_adapter.apply(x)
        kd_norms = np.linalg.norm(diffs, axis=1)
        kd_shares = kd_norms / n
        kd = float(kd_shares.sum())
    else:
        diffs = None
        kd_norms = None
        kd_shares = np.zeros(n)
        kd = 0.0

    # Alignment between visual and semantic batch similarity structure.
    z_norms = np.linalg.norm(z, axis=1)
    v = z / np.maximum(z_norms, _NORM_FLOOR)[:, None]
    s_v = v @ v.T
    fused = np.einsum("cl,lcd->cd", a, g)
    u = fused[ctx.label_cols]
    u_norms = np.linalg.norm(u, axis=1)
    u_hat = u / np.maximum(u_norms, _NORM_FLOOR)[:, None]
    s_t = u_hat @ u_hat.T
    p = row_softmax(s_v, cfg.align_temperature)
    q = row_softmax(s_t, cfg.align_temperature)
    log_ratio = np.log(p) - np.log(q)
    alg_shares = (np.sum(p * log_ratio, axis=1) - np.sum(q * log_ratio, axis=1)) / (2 * n)
    alg = float(alg_shares.sum())

    # Layer-weight regularizers: entropy everywhere, prior on the current task.
    con_by_class = {
        cid: entropy_regularizer(a[ctx.col_of[cid]])[0] for cid in ctx.class_ids
    }
    freq_by_class = {
        cid: freq_regularizer(a[ctx.col_of[cid]], ctx.prior_rows[cid])[0]
        for cid in ctx.current_task_ids
    }
    return {
        "z": z, "dots": dots, "row_a": row_a, "probs": probs,
        "ce": ce, "ce_shares": ce_shares,
        "diffs": diffs, "kd_norms": kd_norms, "kd": kd, "kd_shares": kd_shares,
        "z_norms": z_norms, "v": v, "u": u, "u_norms": u_norms, "u_hat": u_hat,
        "p": p, "q": q, "alg": alg, "alg_shares": alg_shares,
        "con_by_class": con_by_class, "freq_by_class": freq_by_class,
    }


def _breakdown(ctx: ObjectiveContext, fwd: dict) -> ObjectiveBreakdown:
    cfg = ctx.config
    con = float(sum(fwd["con_by_class"].values()))
    freq = float(sum(fwd["freq_by_class"].values()))
    theta_total = fwd["ce"] + cfg.lambda1 * fwd["alg"] + cfg.lambda2 * fwd["kd"]
    alpha_total = theta_total + cfg.lambda3 * con + cfg.lambda4 * freq
    return ObjectiveBreakdown(
        ce=fwd["ce"],
        alignment=fwd["alg"],
        distillation=fwd["kd"],
        entropy=con,
        frequency=freq,
        theta_total=theta_total,
        alpha_total=alpha_total,
    )


def total_objective(adapter: Adapter, ctx: ObjectiveContext) -> ObjectiveBreakdown:
    return _breakdown(ctx, _forward(adapter, ctx))


def per_class_objective(adapter: Adapter, ctx: ObjectiveContext, class_id: int) -> float:
    """One class's slice of the objective; the slices sum to the alpha view.

    Data terms go to the sample's ground-truth class (each batch row of the
    alignment matrix counts toward its own sample); regularizers attach to
    the class that owns the weight row.
    """
    cfg = ctx.config
    fwd = _forward(adapter, ctx)
    mask = ctx.labels == class_id
    value = float(
        np.sum(fwd["ce_shares"][mask])
        + cfg.lambda1 * np.sum(fwd["alg_shares"][mask])
        + cfg.lambda2 * np.sum(fwd["kd_shares"][mask])
    )
    if class_id in fwd["con_by_class"]:
        value += cfg.lambda3 * fwd["con_by_class"][class_id]
    if class_id in fwd["freq_by_class"]:
        value += cfg.lambda4 * fwd["freq_by_class"][class_id]
    return value


def _softmax_rows_backward(grad_out: np.ndarray, softmaxed: np.ndarray, temperature: float) -> np.ndarray:
    inner = np.sum(grad_out * softmaxed, axis=1, keepdims=True)
    return softmaxed * (grad_out - inner) / temperature


def regularizer_alpha_gradients(ctx: ObjectiveContext) -> dict[int, np.ndarray]:
    """Gradient of lambda3*R_con + lambda4*R_freq per weight row.

    Each row's regularizers touch only that row, so these gradients are
    exactly independent across classes.
    """
    cfg = ctx.config
    grads: dict[int, np.ndarray] = {}
    for cid in ctx.class_ids:
        row = ctx.weight_rows[ctx.col_of[cid]]
        grad = cfg.lambda3 * entropy_regularizer(row)[1]
        if cid in ctx.prior_rows and cid in ctx.current_task_ids:
            grad = grad + cfg.lambda4 * freq_regularizer(row, ctx.prior_rows[cid])[1]
        grads[cid] = grad
    return grads


def gradients(
    adapter: Adapter, ctx: ObjectiveContext
) -> tuple[np.ndarray, np.ndarray, dict[int, np.ndarray]]:
    """Analytic (dW, db, per-class d_alpha) of the merged objective.

    The adapter gradient covers the theta view (CE + alignment + KD) with
    alpha held constant; the alpha gradients cover the alpha view (CE +
    alignment + regularizers; KD does not touch alpha) with theta held
    constant.
    """
    cfg = ctx.config
    fwd = _forward(adapter, ctx)
    x = ctx.features
    n = x.shape[0]
    g = ctx.layer_features
    k = g.shape[0]

    # --- cross-entropy ---
    grad_logits = fwd["probs"].copy()
    grad_logits[np.arange(n), ctx.label_cols] -= 1.0
    grad_logits *= cfg.ce_scale / n                       # (n, classes)
    dz = np.einsum("nc,nk,kcd->nd", grad_logits, fwd["row_a"], g, optimize=True)
    alpha_data = np.einsum("nc,knc->nk", grad_logits, fwd["dots"], optimize=True)

    # --- distillation (no alpha dependence) ---
    if fwd["diffs"] is not None:
        safe = np.maximum(fwd["kd_norms"], 1e-12)[:, None]
        nonzero = (fwd["kd_norms"] > 1e-12)[:, None]
        dz = dz + cfg.lambda2 * np.where(nonzero, fwd["diffs"] / safe, 0.0) / n

    # --- alignment ---
    p, q = fwd["p"], fwd["q"]
    log_ratio = np.log(p) - np.log(q)
    grad_p = (log_ratio + 1.0 - q / p) / (2 * n)
    grad_q = (-log_ratio + 1.0 - p / q) / (2 * n)
    grad_sv = _softmax_rows_backward(grad_p, p, cfg.align_temperature)
    grad_st = _softmax_rows_backward(grad_q, q, cfg.align_temperature)

    grad_v = (grad_sv + grad_sv.T) @ fwd["v"]
    proj_v = grad_v - np.sum(grad_v * fwd["v"], axis=1, keepdims=True) * fwd["v"]
    dz = dz + cfg.lambda1 * proj_v / np.maximum(fwd["z_norms"], _NORM_FLOOR)[:, None]

    grad_uhat = (grad_st + grad_st.T) @ fwd["u_hat"]
    proj_u = grad_uhat - np.sum(grad_uhat * fwd["u_hat"], axis=1, keepdims=True) * fwd["u_hat"]
    grad_u = cfg.lambda1 * proj_u / np.maximum(fwd["u_norms"], _NORM_FLOOR)[:, None]
    # u_i = sum_l alpha[label_i, l] g[l, label_i]; scatter back to rows.
    g_per_sample = g[:, ctx.label_cols, :]                # (layers, n, d)
    alpha_data += np.einsum("nd,knd->nk", grad_u, g_per_sample, optimize=True)

    grad_w = dz.T @ x
    grad_b = dz.sum(axis=0)

    alpha_grads = regularizer_alpha_gradients(ctx)
    np_rows = np.zeros((len(ctx.class_ids), k))
    np.add.at(np_rows, ctx.label_cols, alpha_data)
    for cid in ctx.class_ids:
        alpha_grads[cid] = alpha_grads[cid] + np_rows[ctx.col_of[cid]]

    if not (np.all(np.isfinite(grad_w)) and np.all(np.isfinite(grad_b))):
        raise NonFiniteGradient("adapter gradient is not finite")
    for cid, row in alpha_grads.items():
        if not np.all(np.isfinite(row)):
            raise NonFiniteGradient(f"alpha gradient for class {cid} is not finite")
    return grad_w, grad_b, alpha_grads


@dataclass
class AdamState:
    """Standard Adam for the adapter; reset at every task boundary."""

    m_w: np.ndarray
    v_w: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, dim: int) -> "AdamState":
        return cls(
            m_w=np.zeros((dim, dim)),
            v_w=np.zeros((dim, dim)),
            m_b=np.zeros(dim),
            v_b=np.zeros(dim),
        )

    def step(self, adapter: Adapter, grad_w: np.ndarray, grad_b: np.ndarray, lr: float) -> None:
        self.t += 1
        for mem, grad, param in (
            ((self.m_w, self.v_w), grad_w, adapter.weight),
            ((self.m_b, self.v_b), grad_b, adapter.bias),
        ):
            m, v = mem
            m *= self.beta1
            m += (1 - self.beta1) * grad
            v *= self.beta2
            v += (1 - self.beta2) * grad * grad
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TaskState:
    """Everything that persists across tasks during an experiment."""

    adapter: Adapter
    weights: LayerWeights
    memory: MemoryBank
    old_adapter: Adapter | None = None
    seen_ids: list[int] = field(default_factory=list)
    task_index: int = -1


def _alpha_entropy_stats(weights: LayerWeights, class_ids: list[int]) -> dict:
    values = []
    for cid in class_ids:
        row = weights.row(cid)
        positive = row[row > 0]
        values.append(float(-np.sum(positive * np.log(positive))))
    return {
        "alpha_entropy_mean": float(np.mean(values)),
        "alpha_entropy_min": float(np.min(values)),
        "alpha_entropy_max": float(np.max(values)),
    }


def train_task(
    state: TaskState,
    task_index: int,
    task_ids: list[int],
    train_features: dict[int, np.ndarray],
    layer_features: np.ndarray,
    config: TrainingConfig,
) -> list[dict]:
    """Run one task's epochs; returns one log record per epoch.

    At the end the adapter is snapshotted as the distillation target, the
    task's class statistics enter the memory bank, and the task's weight
    rows freeze.
    """
    task_ids = sorted(task_ids)
    state.task_index = task_index
    state.seen_ids = sorted(set(state.seen_ids) | set(task_ids))
    class_ids = state.seen_ids
    layer_count = layer_features.shape[0]

    counts = {cid: train_features[cid].shape[0] for cid in task_ids}
    prior_rows = (
        {cid: row for cid, row in frequency_prior(counts, layer_count).rows.items()}
        if layer_count >= 2
        else {}
    )

    x_task = np.concatenate([train_features[cid] for cid in task_ids]).astype(np.float64)
    y_task = np.concatenate(
        [np.full(counts[cid], cid, dtype=np.int64) for cid in task_ids]
    )
    n_task = y_task.size

    rng_shuffle = np.random.default_rng([config.seed, task_index, 11])
    rng_replay = np.random.default_rng([config.seed, task_index, 13])
    rng_alpha = np.random.default_rng([config.seed, task_index, 17])
    adam = AdamState.init(state.adapter.dim)
    empty_memory = MemoryBank()

    def make_ctx(features: np.ndarray, labels: np.ndarray) -> ObjectiveContext:
        return ObjectiveContext(
            features=features,
            labels=labels,
            class_ids=class_ids,
            layer_features=layer_features,
            weight_rows=state.weights.matrix(class_ids),
            current_task_ids=task_ids,
            prior_rows=prior_rows,
            config=config,
            old_adapter=state.old_adapter,
        )

    def balanced(idx: np.ndarray, rng: np.random.Generator):
        memory = state.memory if config.replay else empty_memory
        return build_balanced_batch(
            x_task[idx], y_task[idx], memory, rng, replay_cap=config.replay_cap
        )

    logs: list[dict] = []
    for epoch in range(config.epochs):
        perm = rng_shuffle.permutation(n_task)
        sums: dict[str, float] = {}
        batches = 0
        for start in range(0, n_task, config.batch_size):
            idx = perm[start : start + config.batch_size]
            bal = balanced(idx, rng_replay)
            ctx = make_ctx(bal.features, bal.labels)
            breakdown = total_objective(state.adapter, ctx)
            grad_w, grad_b, _ = gradients(state.adapter, ctx)
            adam.step(state.adapter, grad_w, grad_b, config.eta_theta)
            for key, value in breakdown.as_dict().items():
                sums[key] = sums.get(key, 0.0) + value
            batches += 1

        if config.update_alpha and (epoch + 1) % config.alpha_period == 0:
            acc = {cid: np.zeros(layer_count) for cid in task_ids}
            for start in range(0, n_task, config.batch_size):
                idx = np.arange(start, min(start + config.batch_size, n_task))
                bal = balanced(idx, rng_alpha)
                ctx = make_ctx(bal.features, bal.labels)
                _, _, alpha_grads = gradients(state.adapter, ctx)
                weight = idx.size / n_task
                for cid in task_ids:
                    acc[cid] += weight * alpha_grads[cid]
            for cid in task_ids:
                state.weights.set_row(
                    cid, update_alpha(state.weights.row(cid), acc[cid], config.eta_alpha)
                )

        record = {"task": task_index, "epoch": epoch}
        record.update({key: value / batches for key, value in sums.items()})
        record.update(_alpha_entropy_stats(state.weights, class_ids))
        logs.append(record)

    state.old_adapter = state.adapter.copy()
    for cid in task_ids:
        state.memory.add(update_statistics(cid, train_features[cid].astype(np.float64)))
    state.weights.freeze_task(task_index)
    return logs
