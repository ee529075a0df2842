"""Independent brute-force oracles the implementation is checked against.

Nothing in here may import from the code paths it verifies beyond plain
numpy; each oracle recomputes the answer from first principles.
"""
from __future__ import annotations

import numpy as np


def simplex_qp_oracle(v: np.ndarray) -> np.ndarray:
    """Minimize ||x - v||^2 over the simplex by enumerating support sets.

    For every nonempty support S the equality-constrained minimizer is
    x_i = v_i - tau with tau = (sum_S v_i - 1)/|S|; the true projection is
    the feasible candidate with the smallest distance.
    """
    v = np.asarray(v, dtype=np.float64)
    d = v.size
    masks = ((np.arange(1, 2**d)[:, None] >> np.arange(d)) & 1).astype(bool)
    sizes = masks.sum(axis=1)
    tau = (masks @ v - 1.0) / sizes
    candidates = np.where(masks, v[None, :] - tau[:, None], 0.0)
    feasible = np.all(candidates >= -1e-12, axis=1)
    candidates = np.maximum(candidates, 0.0)
    dists = np.sum((candidates - v[None, :]) ** 2, axis=1)
    dists[~feasible] = np.inf
    return candidates[int(np.argmin(dists))]


def nearest_centroid_predictions(
    train_by_class: dict[int, np.ndarray], samples: np.ndarray
) -> np.ndarray:
    """Classify each sample by the closest class mean in Euclidean distance."""
    ids = sorted(train_by_class)
    centroids = np.stack([train_by_class[c].mean(axis=0) for c in ids])
    dists = np.linalg.norm(samples[:, None, :] - centroids[None, :, :], axis=2)
    return np.asarray([ids[i] for i in np.argmin(dists, axis=1)])


def margin_predict_oracle(
    feature: np.ndarray,
    layer_features: np.ndarray,
    rows: dict[int, np.ndarray],
) -> int:
    """Exhaustively evaluate every (class row, margin) pair per the decision rule.

    layer_features has shape (layers, classes, dim) with column order equal
    to sorted(rows).
    """
    ids = sorted(rows)
    per_layer = layer_features @ feature  # (layers, classes)
    best_margin = -np.inf
    best_row_id = None
    for cid in ids:
        logits = rows[cid] @ per_layer
        order = np.sort(logits)[::-1]
        margin = order[0] - order[1]
        if margin > best_margin:
            best_margin = margin
            best_row_id = cid
    logits = rows[best_row_id] @ per_layer
    return ids[int(np.argmax(logits))]
