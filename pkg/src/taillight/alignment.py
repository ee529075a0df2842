"""Class-statistics memory, Gaussian replay, and the alignment losses.

After each task the engine stores one prototype and a shrunk covariance
factor per class; later tasks rebalance every minibatch by sampling
synthetic old-class features from those Gaussians. The alignment loss then
compares the batch's visual similarity structure against the (frozen)
semantic one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, UnknownClass, ZeroNorm
from .numerics import normalize_rows, row_softmax, sample_gaussian, symmetric_kl

SHRINKAGE = 1e-4


@dataclass
class ClassStatistics:
    """Prototype and covariance factor of one class's frozen features."""

    class_id: int
    prototype: np.ndarray
    factor: np.ndarray  # lower-triangular, factor @ factor.T ~ shrunk covariance
    count: int


def update_statistics(class_id: int, features: np.ndarray) -> ClassStatistics:
    """Mean and shrunk-covariance Cholesky factor of a class's raw features.

    Shrinkage adds beta * (trace/d) * I (plain beta * I when a single sample
    or zero variance leaves no scale), so the Cholesky always exists even
    for classes with one sample.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionMismatch(f"need a (n, d) feature matrix, got {x.shape}")
    n, d = x.shape
    mu = x.mean(axis=0)
    if n > 1:
        centered = x - mu
        sigma = centered.T @ centered / (n - 1)
    else:
        sigma = np.zeros((d, d))
    trace = float(np.trace(sigma))
    scale = trace / d if trace > 0 else 1.0
    shrunk = sigma + SHRINKAGE * scale * np.eye(d)
    factor = np.linalg.cholesky(shrunk)
    return ClassStatistics(class_id=class_id, prototype=mu, factor=factor, count=n)


class MemoryBank:
    """Statistics for every class of completed tasks."""

    def __init__(self):
        self._stats: dict[int, ClassStatistics] = {}

    def __len__(self) -> int:
        return len(self._stats)

    def __contains__(self, class_id: int) -> bool:
        return class_id in self._stats

    def class_ids(self) -> list[int]:
        return sorted(self._stats)

    def add(self, stats: ClassStatistics) -> None:
        self._stats[stats.class_id] = stats

    def get(self, class_id: int) -> ClassStatistics:
        if class_id not in self._stats:
            raise UnknownClass(f"no statistics stored for class {class_id}")
        return self._stats[class_id]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = {"version": 1, "classes": []}
        for cid in self.class_ids():
            stats = self._stats[cid]
            d = stats.prototype.size
            block = np.vstack([stats.prototype[None, :], stats.factor]).astype("<f4")
            name = f"stats_{cid:04d}.bin"
            (directory / name).write_bytes(block.tobytes())
            index["classes"].append(
                {"id": cid, "count": stats.count, "dim": d, "file": name}
            )
        (directory / "index.json").write_text(
            json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, directory: str | Path) -> "MemoryBank":
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
        bank = cls()
        for entry in index["classes"]:
            d = entry["dim"]
            raw = (directory / entry["file"]).read_bytes()
            block = np.frombuffer(raw, dtype="<f4").reshape(d + 1, d).astype(np.float64)
            bank.add(
                ClassStatistics(
                    class_id=entry["id"],
                    prototype=block[0],
                    factor=block[1:],
                    count=entry["count"],
                )
            )
        return bank


@dataclass
class BalancedBatch:
    """Original batch plus replayed old-class rows, flagged as synthetic."""

    features: np.ndarray
    labels: np.ndarray
    synthetic: np.ndarray  # bool per row
    replay_count: int

    def __len__(self) -> int:
        return self.features.shape[0]


def build_balanced_batch(
    features: np.ndarray,
    labels: np.ndarray,
    memory: MemoryBank,
    rng: np.random.Generator,
    replay_cap: int | None = None,
) -> BalancedBatch:
    """Top up the batch with r sampled rows per remembered class.

    r is the highest label frequency inside the incoming batch (optionally
    capped). With an empty memory the batch passes through unchanged.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch("features and labels disagree on batch size")
    counts = np.unique(y, return_counts=True)[1]
    r = int(counts.max()) if counts.size else 0
    if replay_cap is not None:
        r = min(r, replay_cap)
    if len(memory) == 0 or r == 0:
        return BalancedBatch(
            features=x,
            labels=y.copy(),
            synthetic=np.zeros(x.shape[0], dtype=bool),
            replay_count=r,
        )
    sampled_rows = [x]
    sampled_labels = [y]
    for cid in memory.class_ids():
        stats = memory.get(cid)
        rows = sample_gaussian(stats.prototype, stats.factor, r, rng)
        sampled_rows.append(rows)
        sampled_labels.append(np.full(r, cid, dtype=y.dtype))
    all_x = np.concatenate(sampled_rows)
    all_y = np.concatenate(sampled_labels)
    synthetic = np.zeros(all_x.shape[0], dtype=bool)
    synthetic[x.shape[0] :] = True
    return BalancedBatch(features=all_x, labels=all_y, synthetic=synthetic, replay_count=r)


def visual_similarity(adapted_features: np.ndarray) -> np.ndarray:
    """Gram matrix of row-normalized adapted features; symmetric, unit diagonal."""
    v = normalize_rows(adapted_features)
    return v @ v.T


def fused_text_vectors(
    class_ids: list[int], layer_features: np.ndarray, weight_rows: np.ndarray
) -> np.ndarray:
    """Per-class text vector g_c = sum_l alpha_{l,c} g^l_c.

    layer_features is (layers, classes, dim) with columns ordered like
    class_ids; weight_rows is (classes, layers) in the same order.
    """
    g = np.asarray(layer_features, dtype=np.float64)
    a = np.asarray(weight_rows, dtype=np.float64)
    if a.shape != (g.shape[1], g.shape[0]):
        raise DimensionMismatch(
            f"weights {a.shape} do not match layer stack {g.shape[:2][::-1]}"
        )
    return np.einsum("cl,lcd->cd", a, g)


def semantic_similarity(
    labels: np.ndarray,
    class_ids: list[int],
    layer_features: np.ndarray,
    weight_rows: np.ndarray,
) -> np.ndarray:
    """Pairwise cosine of per-sample fused text vectors, in batch row order."""
    col_of = {cid: i for i, cid in enumerate(class_ids)}
    try:
        cols = np.asarray([col_of[int(label)] for label in labels])
    except KeyError as exc:
        raise UnknownClass(f"label {exc} has no weight row or tree features") from exc
    fused = fused_text_vectors(class_ids, layer_features, weight_rows)
    norms = np.linalg.norm(fused, axis=1)
    if np.any(norms[cols] < 1e-15):
        bad = class_ids[int(cols[np.argmin(norms[cols])])]
        raise ZeroNorm(f"fused text vector for class {bad} is zero")
    unit = fused / np.maximum(norms, 1e-300)[:, None]
    per_sample = unit[cols]
    return per_sample @ per_sample.T


def alignment_loss(s_v: np.ndarray, s_t: np.ndarray, temperature: float) -> float:
    """Symmetrized KL between row-softmaxed similarity matrices."""
    p = row_softmax(s_v, temperature)
    q = row_softmax(s_t, temperature)
    return symmetric_kl(p, q)


def distillation_loss(
    old_outputs: np.ndarray | None, new_outputs: np.ndarray
) -> float:
    """Mean L2 distance between old- and new-adapter outputs; 0 on the first task."""
    if old_outputs is None:
        return 0.0
    a = np.asarray(old_outputs, dtype=np.float64)
    b = np.asarray(new_outputs, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"adapter outputs differ in shape: {a.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(b - a, axis=1)))
