"""Persistence and ingestion of frozen embeddings, plus synthetic data.

On-disk layout of a bundle directory:
  manifest.json  - all metadata (dim, dtype tag, per-class counts and paths)
  *.bin          - headerless row-major float32 little-endian matrices

Text embeddings live in a separate JSONL store keyed by the exact
(NFC-normalized, trimmed) phrase. Loaded objects are immutable and safe to
share across threads.
"""
from __future__ import annotations

import hashlib
import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    DuplicateClassId,
    InvalidRho,
    ManifestMissing,
    TextNotFound,
    TooManyTasks,
    TruncatedMatrix,
)

MANIFEST_NAME = "manifest.json"
DTYPE_TAG = "f32le"


@dataclass(frozen=True)
class ClassRecord:
    id: int
    label: str
    train_count: int
    test_count: int
    train_file: str
    test_file: str

    def __post_init__(self):
        if self.train_count < 1:
            raise DimMismatch(f"class {self.id} has train_count < 1")
        if not self.label:
            raise DimMismatch(f"class {self.id} has an empty label")


@dataclass
class EmbeddingBundle:
    """Frozen per-class visual feature matrices plus their manifest."""

    dim: int
    classes: list[ClassRecord]
    normalized: bool
    train: dict[int, np.ndarray] = field(repr=False)
    test: dict[int, np.ndarray] = field(repr=False)
    dtype: str = DTYPE_TAG

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if len(set(ids)) != len(ids):
            raise DuplicateClassId(f"duplicate class ids in {ids}")
        if sorted(ids) != list(range(len(ids))):
            raise DuplicateClassId(f"class ids must be contiguous from 0, got {sorted(ids)}")
        for rec in self.classes:
            for split, mats, count in (
                ("train", self.train, rec.train_count),
                ("test", self.test, rec.test_count),
            ):
                mat = mats[rec.id]
                if mat.shape != (count, self.dim):
                    raise DimMismatch(
                        f"class {rec.id} {split} matrix has shape {mat.shape}, "
                        f"manifest says ({count}, {self.dim})"
                    )

    @property
    def class_ids(self) -> list[int]:
        return [c.id for c in self.classes]

    def record(self, class_id: int) -> ClassRecord:
        return self.classes[class_id]

    def labels(self) -> list[str]:
        return [c.label for c in self.classes]


def save_bundle(bundle: EmbeddingBundle, directory: str | Path) -> Path:
    """Write manifest + matrices; the round-trip with load_bundle is bit-exact."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": 1,
        "dim": bundle.dim,
        "dtype": bundle.dtype,
        "normalized": bundle.normalized,
        "classes": [
            {
                "id": rec.id,
                "label": rec.label,
                "train_count": rec.train_count,
                "test_count": rec.test_count,
                "train_file": rec.train_file,
                "test_file": rec.test_file,
            }
            for rec in bundle.classes
        ],
    }
    for rec in bundle.classes:
        for mats, name in ((bundle.train, rec.train_file), (bundle.test, rec.test_file)):
            matrix = np.ascontiguousarray(mats[rec.id], dtype="<f4")
            (directory / name).write_bytes(matrix.tobytes())
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _read_matrix(path: Path, count: int, dim: int) -> np.ndarray:
    if not path.exists():
        raise TruncatedMatrix(f"matrix file missing: {path}")
    raw = path.read_bytes()
    expected = count * dim * 4
    if len(raw) != expected:
        raise TruncatedMatrix(
            f"{path} holds {len(raw)} bytes, expected {expected} ({count}x{dim} f32le)"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(count, dim)


def load_bundle(directory: str | Path) -> EmbeddingBundle:
    """Load and validate a bundle; every manifest invariant is checked."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise ManifestMissing(f"no {MANIFEST_NAME} in {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("dtype", DTYPE_TAG) != DTYPE_TAG:
        raise DimMismatch(f"unsupported dtype tag {manifest.get('dtype')!r}")
    dim = int(manifest["dim"])
    records, train, test = [], {}, {}
    for entry in manifest["classes"]:
        rec = ClassRecord(
            id=int(entry["id"]),
            label=entry["label"],
            train_count=int(entry["train_count"]),
            test_count=int(entry["test_count"]),
            train_file=entry["train_file"],
            test_file=entry["test_file"],
        )
        if rec.id in train:
            raise DuplicateClassId(f"class id {rec.id} appears twice in manifest")
        records.append(rec)
        train[rec.id] = _read_matrix(directory / rec.train_file, rec.train_count, dim)
        test[rec.id] = _read_matrix(directory / rec.test_file, rec.test_count, dim)
    return EmbeddingBundle(
        dim=dim,
        classes=records,
        normalized=bool(manifest.get("normalized", False)),
        train=train,
        test=test,
    )


def canonical_text(text: str) -> str:
    """NFC-normalize and trim; the exact-match key for all text lookups."""
    return unicodedata.normalize("NFC", text).strip()


class TextEmbeddingStore:
    """Exact-match map from phrase to embedding vector, all sharing one dim."""

    def __init__(self, dim: int):
        self.dim = dim
        self._vectors: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, text: str) -> bool:
        return canonical_text(text) in self._vectors

    def add(self, text: str, vector) -> None:
        arr = np.asarray(vector, dtype=np.float64)
        if arr.shape != (self.dim,):
            raise DimMismatch(
                f"vector for {text!r} has shape {arr.shape}, store dim is {self.dim}"
            )
        self._vectors[canonical_text(text)] = arr

    def lookup(self, text: str) -> np.ndarray:
        key = canonical_text(text)
        if key not in self._vectors:
            raise TextNotFound(f"no embedding stored for {key!r}")
        return self._vectors[key]

    def texts(self) -> list[str]:
        return sorted(self._vectors)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for text in sorted(self._vectors):
                fh.write(
                    json.dumps(
                        {"text": text, "vector": self._vectors[text].tolist()},
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "TextEmbeddingStore":
        path = Path(path)
        entries = []
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        if not entries:
            raise TextNotFound(f"text store {path} is empty")
        dim = len(entries[0]["vector"])
        store = cls(dim)
        for entry in entries:
            store.add(entry["text"], entry["vector"])
        return store


def lookup_text(store: TextEmbeddingStore, text: str) -> np.ndarray:
    return store.lookup(text)


def pseudo_text_encoder(text: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic stand-in for a frozen text encoder.

    Hashes the canonical text together with the seed into a unit vector;
    distinct phrases land in near-orthogonal directions with overwhelming
    probability at moderate dim.
    """
    if dim < 2:
        raise DimMismatch("pseudo encoder needs dim >= 2")
    key = f"{seed}\x1f{canonical_text(text)}".encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=16).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def make_longtail_counts(n_max: int, rho: float, class_count: int) -> list[int]:
    """Exponential long-tail profile: n_c = round(n_max * rho^(c/(C-1))), >= 1."""
    if not (0 < rho <= 1):
        raise InvalidRho(f"rho must be in (0, 1], got {rho!r}")
    if n_max < 1:
        raise InvalidRho(f"n_max must be >= 1, got {n_max!r}")
    if class_count == 1:
        return [n_max]
    counts = []
    for c in range(class_count):
        exact = n_max * rho ** (c / (class_count - 1))
        counts.append(max(1, int(round(exact))))
    return counts


def generate_synthetic_bundle(
    class_count: int,
    dim: int,
    counts: list[int],
    separation: float,
    noise: float,
    seed: int,
    test_count: int = 20,
    means: np.ndarray | None = None,
    labels: list[str] | None = None,
) -> EmbeddingBundle:
    """Per-class Gaussian clusters around unit-norm means.

    Means are drawn by rejection so pairwise cosines stay at or below
    `separation` (or supplied explicitly, e.g. anchored to text features).
    Deterministic given the seed.
    """
    if len(counts) != class_count:
        raise DimMismatch("counts length must equal class_count")
    rng = np.random.default_rng(seed)
    if means is None:
        accepted: list[np.ndarray] = []
        for _ in range(class_count):
            best, best_cos = None, np.inf
            for _ in range(1000):
                cand = rng.standard_normal(dim)
                cand /= np.linalg.norm(cand)
                worst = max((abs(float(cand @ m)) for m in accepted), default=0.0)
                if worst <= separation:
                    best = cand
                    break
                if worst < best_cos:
                    best, best_cos = cand, worst
            accepted.append(best)
        means = np.stack(accepted)
    else:
        means = np.asarray(means, dtype=np.float64)
        if means.shape != (class_count, dim):
            raise DimMismatch(f"means shape {means.shape} != ({class_count}, {dim})")
    if labels is None:
        labels = [f"class_{c:02d}" for c in range(class_count)]

    records, train, test = [], {}, {}
    for c in range(class_count):
        train[c] = means[c] + noise * rng.standard_normal((counts[c], dim))
        test[c] = means[c] + noise * rng.standard_normal((test_count, dim))
        records.append(
            ClassRecord(
                id=c,
                label=labels[c],
                train_count=counts[c],
                test_count=test_count,
                train_file=f"class_{c:03d}_train.bin",
                test_file=f"class_{c:03d}_test.bin",
            )
        )
    # Stored convention is float32; cast now so in-memory and on-disk agree.
    train = {c: m.astype("<f4") for c, m in train.items()}
    test = {c: m.astype("<f4") for c, m in test.items()}
    return EmbeddingBundle(dim=dim, classes=records, normalized=False, train=train, test=test)


@dataclass(frozen=True)
class TaskSplit:
    """Ordered disjoint class-id groups covering every class."""

    tasks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for task in self.tasks:
            overlap = seen.intersection(task)
            if overlap:
                raise DuplicateClassId(f"classes {sorted(overlap)} appear in two tasks")
            seen.update(task)

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, i: int) -> tuple[int, ...]:
        return self.tasks[i]

    def all_classes(self) -> set[int]:
        return {c for task in self.tasks for c in task}

    def seen_through(self, t: int) -> list[int]:
        """All class ids in tasks 0..t, sorted."""
        return sorted(c for task in self.tasks[: t + 1] for c in task)


def make_task_split(class_ids: list[int], task_count: int, seed: int) -> TaskSplit:
    """Seeded shuffle then contiguous partition; the last task takes any remainder."""
    if task_count > len(class_ids):
        raise TooManyTasks(
            f"cannot split {len(class_ids)} classes into {task_count} tasks"
        )
    order = list(class_ids)
    np.random.default_rng(seed).shuffle(order)
    per_task = len(order) // task_count
    tasks = []
    for t in range(task_count):
        start = t * per_task
        end = start + per_task if t < task_count - 1 else len(order)
        tasks.append(tuple(order[start:end]))
    return TaskSplit(tasks=tuple(tasks))
