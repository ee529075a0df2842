"""Per-class layer-weight model over the language tree.

Each class owns a simplex-constrained weight row over tree layers. Rows are
updated by projected gradient against the training objective plus two
regularizers: a negative-entropy term that keeps mass spread across layers,
and a KL prior that pushes rare classes toward the deeper, more specific
layers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateTree, DimensionMismatch, UnknownClass
from .numerics import project_to_simplex

ENTROPY_EPS = 1e-8


@dataclass
class LayerWeights:
    """One simplex row per seen class; rows from finished tasks are frozen."""

    layer_count: int
    rows: dict[int, np.ndarray] = field(default_factory=dict)
    frozen: set[int] = field(default_factory=set)
    task_of: dict[int, int] = field(default_factory=dict)

    def add_class(self, class_id: int, task_id: int) -> None:
        if class_id in self.rows:
            raise UnknownClass(f"class {class_id} already has a weight row")
        self.rows[class_id] = np.full(self.layer_count, 1.0 / self.layer_count)
        self.task_of[class_id] = task_id

    def grow_layers(self, new_count: int) -> None:
        """Pad every row with zero weight for newly appended tree layers.

        New layers hold no phrases for previously seen classes, so zero
        weight leaves their predictions bit-identical.
        """
        if new_count < self.layer_count:
            raise DimensionMismatch(
                f"layer count cannot shrink ({self.layer_count} -> {new_count})"
            )
        if new_count == self.layer_count:
            return
        pad = new_count - self.layer_count
        for cid in self.rows:
            self.rows[cid] = np.concatenate([self.rows[cid], np.zeros(pad)])
        self.layer_count = new_count

    def remap_layers(self, mapping: dict[int, int], new_count: int) -> None:
        """Move each weight to its layer's new index after a tree merge.

        Merging can insert refinement layers between a class's existing
        layers (e.g. a later task adds more comparison rounds); moving the
        weight with its layer keeps frozen classes' predictions identical.
        Unmapped new indices get zero weight.
        """
        if sorted(mapping) != list(range(self.layer_count)):
            raise DimensionMismatch(
                f"mapping must cover all {self.layer_count} existing layers"
            )
        for cid in self.rows:
            fresh = np.zeros(new_count)
            for old_idx, new_idx in mapping.items():
                fresh[new_idx] = self.rows[cid][old_idx]
            self.rows[cid] = fresh
        self.layer_count = new_count

    def row(self, class_id: int) -> np.ndarray:
        if class_id not in self.rows:
            raise UnknownClass(f"no weight row for class {class_id}")
        return self.rows[class_id]

    def set_row(self, class_id: int, values: np.ndarray) -> None:
        if class_id in self.frozen:
            raise UnknownClass(f"class {class_id} is frozen")
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != (self.layer_count,):
            raise DimensionMismatch(f"row shape {arr.shape} != ({self.layer_count},)")
        self.rows[class_id] = arr

    def freeze_task(self, task_id: int) -> None:
        for cid, t in self.task_of.items():
            if t == task_id:
                self.frozen.add(cid)

    def matrix(self, class_ids: list[int]) -> np.ndarray:
        return np.stack([self.row(c) for c in class_ids])

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "layer_count": self.layer_count,
            "classes": [
                {
                    "id": cid,
                    "task": self.task_of.get(cid),
                    "frozen": cid in self.frozen,
                    "weights": self.rows[cid].tolist(),
                }
                for cid in sorted(self.rows)
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "LayerWeights":
        doc = json.loads(text)
        weights = cls(layer_count=doc["layer_count"])
        for entry in doc["classes"]:
            weights.rows[entry["id"]] = np.asarray(entry["weights"], dtype=np.float64)
            weights.task_of[entry["id"]] = entry["task"]
            if entry["frozen"]:
                weights.frozen.add(entry["id"])
        return weights

    @classmethod
    def load(cls, path: str | Path) -> "LayerWeights":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def layer_positions(layer_count: int) -> np.ndarray:
    """Relative depth of each layer, 0 for the task summary up to 1 for the deepest.

    Evaluates the prior's (l-1)/(L-1) under 1-based layer labels; the first
    layer is pinned at 0 rather than going negative.
    """
    if layer_count < 2:
        raise DegenerateTree(f"need >= 2 layers for depth positions, got {layer_count}")
    return np.linspace(0.0, 1.0, layer_count)


@dataclass
class FrequencyPrior:
    """Per-class depth prior: rarer classes lean on deeper layers."""

    kappa: dict[int, float]
    rows: dict[int, np.ndarray]

    def row(self, class_id: int) -> np.ndarray:
        if class_id not in self.rows:
            raise UnknownClass(f"no prior row for class {class_id}")
        return self.rows[class_id]


def frequency_prior(class_counts: dict[int, int], layer_count: int) -> FrequencyPrior:
    """Prior pi_{l,c} proportional to exp(kappa_c * phi_l), rows normalized.

    kappa_c is the current task's mean count over this class's count, so a
    class with few samples gets a sharply top-heavy prior. Rows are
    normalized to sum to one so the KL term is a proper divergence.
    """
    if not class_counts:
        raise UnknownClass("frequency prior needs at least one class count")
    phi = layer_positions(layer_count)
    n_bar = float(np.mean(list(class_counts.values())))
    kappa = {c: n_bar / n for c, n in class_counts.items()}
    rows = {}
    for c, k in kappa.items():
        raw = np.exp(k * phi - np.max(k * phi))
        rows[c] = raw / raw.sum()
    return FrequencyPrior(kappa=kappa, rows=rows)


def entropy_regularizer(weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative entropy sum_l a_l log(a_l + eps) and its gradient."""
    w = np.asarray(weights, dtype=np.float64)
    value = float(np.sum(w * np.log(w + ENTROPY_EPS)))
    grad = np.log(w + ENTROPY_EPS) + w / (w + ENTROPY_EPS)
    return value, grad


def freq_regularizer(weights: np.ndarray, prior: np.ndarray) -> tuple[float, np.ndarray]:
    """Smoothed KL(weights || prior) and its gradient.

    Uses (a + eps) log((a + eps) / pi) so the gradient is exactly
    log((a + eps)/pi) + 1; the +1 shifts every coordinate equally and
    drops out under simplex projection.
    """
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(prior, dtype=np.float64)
    if w.shape != p.shape:
        raise DimensionMismatch(f"weights {w.shape} vs prior {p.shape}")
    smoothed = w + ENTROPY_EPS
    value = float(np.sum(smoothed * np.log(smoothed / p)))
    grad = np.log(smoothed / p) + 1.0
    return value, grad


def aggregate_logits(
    feature: np.ndarray, layer_features: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Class logits summed over layers: sum_l w_l (feature . g^l_c).

    layer_features has shape (layers, classes, dim); classes absent from a
    layer carry zero vectors and contribute nothing.
    """
    f = np.asarray(feature, dtype=np.float64)
    g = np.asarray(layer_features, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if g.ndim != 3 or f.shape != (g.shape[2],) or w.shape != (g.shape[0],):
        raise DimensionMismatch(
            f"incompatible shapes: feature {f.shape}, layers {g.shape}, weights {w.shape}"
        )
    per_layer = g @ f  # (layers, classes)
    return w @ per_layer


def update_alpha(weights: np.ndarray, gradient: np.ndarray, eta_alpha: float) -> np.ndarray:
    """One projected-gradient step back onto the simplex."""
    w = np.asarray(weights, dtype=np.float64)
    g = np.asarray(gradient, dtype=np.float64)
    if w.shape != g.shape:
        raise DimensionMismatch(f"weights {w.shape} vs gradient {g.shape}")
    if not np.all(np.isfinite(g)):
        raise DimensionMismatch("gradient contains NaN or Inf")
    return project_to_simplex(w - eta_alpha * g)


def weight_center(weights: np.ndarray) -> float:
    """Depth-weighted center of mass of a weight row; higher means deeper."""
    w = np.asarray(weights, dtype=np.float64)
    return float(np.dot(layer_positions(w.size), w))
