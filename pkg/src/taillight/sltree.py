"""Stratified language tree: layered per-class text phrases.

A tree starts with three base layers per task — a task-level summary, the
fixed "a photo of" template, and per-class distinctive features — then
grows refinement layers for tail classes whose text representations stay
confusably close, finishing with one-to-one comparison phrases once a
cluster is down to a single confusant. Generation is capped at eight
refinement rounds, so trees never exceed 12 layers.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

import requests

from .errors import (
    ClassCollision,
    EmptyResponse,
    LlmUnavailable,
    MissingSlot,
    NoPhrases,
)
from .numerics import cosine_similarity

MAX_PHRASE_WORDS = 12
MAX_REFINEMENT_ROUNDS = 8
CONFUSION_DISTANCE = 0.5

LLM_URL_ENV = "TAILLIGHT_LLM_URL"
LLM_TIMEOUT_ENV = "TAILLIGHT_LLM_TIMEOUT_MS"


class PromptKind(str, Enum):
    FIXED = "fixed"
    P1 = "p1"
    P2 = "p2"
    P3 = "p3"
    P4 = "p4"


TEMPLATES: dict[PromptKind, str] = {
    PromptKind.FIXED: "a photo of {label}",
    PromptKind.P1: (
        "Please summarize the task in one sentence from the point of view of "
        "category which includes both {labels}"
    ),
    PromptKind.P2: "Please tell me the most distinctive visual feature of {label}",
    PromptKind.P3: (
        "Please tell me the most distinctive visual features of {label} "
        "from the datasets which include {task_description}"
    ),
    PromptKind.P4: (
        "Please tell me the most distinctive visual features of {label} "
        "compared to {other}"
    ),
}

_SLOTS: dict[PromptKind, tuple[str, ...]] = {
    PromptKind.FIXED: ("label",),
    PromptKind.P1: ("labels",),
    PromptKind.P2: ("label",),
    PromptKind.P3: ("label", "task_description"),
    PromptKind.P4: ("label", "other"),
}


def render_prompt(kind: PromptKind, **bindings: str) -> str:
    """Fill a template; every slot must be bound to nonempty text."""
    for slot in _SLOTS[kind]:
        if slot not in bindings or not str(bindings[slot]).strip():
            raise MissingSlot(f"{kind.value} prompt requires nonempty {slot!r}")
    unknown = set(bindings) - set(_SLOTS[kind])
    if unknown:
        raise MissingSlot(f"{kind.value} prompt has no slot(s) {sorted(unknown)}")
    return TEMPLATES[kind].format(**bindings)


def join_labels(labels: list[str]) -> str:
    """'+'-joined concatenation of class labels for the task summary prompt."""
    return " + ".join(labels)


def _truncate(phrase: str) -> str:
    words = phrase.split()
    if len(words) > MAX_PHRASE_WORDS:
        return " ".join(words[:MAX_PHRASE_WORDS])
    return phrase.strip()


def postprocess_response(raw: str) -> list[str]:
    """Split raw LLM text into phrases the text encoder can digest.

    Splits on commas, semicolons and newlines, trims, drops empties, and
    caps each phrase at 12 words (longer text would overflow the encoder).
    """
    pieces: list[str] = []
    for chunk in raw.replace(";", ",").replace("\n", ",").split(","):
        cleaned = _truncate(chunk)
        if cleaned:
            pieces.append(cleaned)
    if not pieces:
        raise EmptyResponse("no phrases survived postprocessing")
    return pieces


def clean_phrases(phrases: list[str]) -> list[str]:
    """Same trimming/capping rules for clients that already return phrase lists."""
    cleaned = [_truncate(p) for p in phrases if p and p.strip()]
    cleaned = [p for p in cleaned if p]
    if not cleaned:
        raise EmptyResponse("client returned no usable phrases")
    return cleaned


class LlmClient(Protocol):
    def complete(self, prompt: str, max_phrases: int) -> list[str]: ...


class FixtureLlmClient:
    """Scripted client: an exact prompt-to-phrases map loaded from JSON."""

    def __init__(self, responses: dict[str, list[str]]):
        self.responses = dict(responses)

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureLlmClient":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data)

    def complete(self, prompt: str, max_phrases: int) -> list[str]:
        if prompt not in self.responses:
            raise LlmUnavailable(f"fixture has no response for prompt: {prompt!r}")
        return list(self.responses[prompt])[:max_phrases]


class HttpLlmClient:
    """POSTs {"prompt", "max_phrases"} and expects {"phrases": [...]} back."""

    def __init__(self, url: str | None = None, timeout_ms: int | None = None):
        self.url = url or os.environ.get(LLM_URL_ENV)
        if not self.url:
            raise LlmUnavailable(f"no LLM endpoint configured ({LLM_URL_ENV} unset)")
        if timeout_ms is None:
            timeout_ms = int(os.environ.get(LLM_TIMEOUT_ENV, "10000"))
        self.timeout = timeout_ms / 1000.0

    def complete(self, prompt: str, max_phrases: int) -> list[str]:
        try:
            resp = requests.post(
                self.url,
                json={"prompt": prompt, "max_phrases": max_phrases},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise LlmUnavailable(f"LLM endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise LlmUnavailable(f"LLM endpoint returned {resp.status_code}")
        try:
            phrases = resp.json()["phrases"]
        except (ValueError, KeyError, TypeError) as exc:
            raise LlmUnavailable(f"malformed LLM response body: {exc}") from exc
        if not isinstance(phrases, list) or not all(isinstance(p, str) for p in phrases):
            raise LlmUnavailable("LLM response 'phrases' is not a list of strings")
        return phrases


@dataclass
class NodeProvenance:
    task: int
    kind: str
    prompt_sha256: str
    error: str | None = None


@dataclass
class TreeLayer:
    """One stratum: phrases per class id, with how each node was produced."""

    kind: str
    phrases: dict[int, list[str]] = field(default_factory=dict)
    provenance: dict[int, NodeProvenance] = field(default_factory=dict)

    def get(self, class_id: int) -> list[str]:
        return self.phrases.get(class_id, [])


@dataclass
class SLTree:
    layers: list[TreeLayer] = field(default_factory=list)

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def class_ids(self) -> list[int]:
        ids: set[int] = set()
        for layer in self.layers:
            ids.update(layer.phrases)
        return sorted(ids)

    def phrases_for(self, class_id: int) -> list[list[str]]:
        return [layer.get(class_id) for layer in self.layers]

    def all_phrases(self) -> list[str]:
        seen: dict[str, None] = {}
        for layer in self.layers:
            for cid in sorted(layer.phrases):
                for phrase in layer.phrases[cid]:
                    seen.setdefault(phrase, None)
        return list(seen)

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "layers": [
                {
                    "kind": layer.kind,
                    "classes": {
                        str(cid): {
                            "phrases": layer.phrases[cid],
                            "provenance": {
                                "task": layer.provenance[cid].task,
                                "kind": layer.provenance[cid].kind,
                                "prompt_sha256": layer.provenance[cid].prompt_sha256,
                                "error": layer.provenance[cid].error,
                            }
                            if cid in layer.provenance
                            else None,
                        }
                        for cid in sorted(layer.phrases)
                    },
                }
                for layer in self.layers
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SLTree":
        doc = json.loads(text)
        layers = []
        for entry in doc["layers"]:
            layer = TreeLayer(kind=entry["kind"])
            for cid_str, node in entry["classes"].items():
                cid = int(cid_str)
                layer.phrases[cid] = list(node["phrases"])
                prov = node.get("provenance")
                if prov is not None:
                    layer.provenance[cid] = NodeProvenance(
                        task=prov["task"],
                        kind=prov["kind"],
                        prompt_sha256=prov["prompt_sha256"],
                        error=prov.get("error"),
                    )
            layers.append(layer)
        return cls(layers=layers)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SLTree":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class ConfusionCluster:
    """Tail class plus every same-task class whose text stays too close."""

    center: int
    members: set[int]
    similarities: dict[int, float]


def _prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


def class_text_representation(
    tree: SLTree, class_id: int, text_encoder: Callable[[str], np.ndarray]
) -> np.ndarray:
    """Mean over nonempty layers of the per-layer mean of phrase embeddings.

    Layers without phrases for this class are skipped rather than averaged
    in as zeros, which would drag the representation toward the origin.
    """
    layer_means = []
    for layer in tree.layers:
        phrases = layer.get(class_id)
        if phrases:
            embedded = np.stack([text_encoder(p) for p in phrases])
            layer_means.append(embedded.mean(axis=0))
    if not layer_means:
        raise NoPhrases(f"class {class_id} has no phrases in any layer")
    return np.stack(layer_means).mean(axis=0)


def confusion_cluster(
    tree: SLTree,
    tail_class: int,
    task_classes: list[int],
    text_encoder: Callable[[str], np.ndarray],
) -> ConfusionCluster:
    """Classes k with 1 - cos(g_j, g_k) < 0.5; always contains the center."""
    g_center = class_text_representation(tree, tail_class, text_encoder)
    members = {tail_class}
    similarities = {tail_class: 1.0}
    for k in sorted(task_classes):
        if k == tail_class:
            continue
        g_k = class_text_representation(tree, k, text_encoder)
        q = cosine_similarity(g_center, g_k)
        similarities[k] = q
        if 1.0 - q < CONFUSION_DISTANCE:
            members.add(k)
    return ConfusionCluster(center=tail_class, members=members, similarities=similarities)


def _query(
    llm: LlmClient,
    prompt: str,
    max_phrases: int,
    single: bool = False,
) -> tuple[list[str], str | None]:
    """Issue one LLM call; failures come back as an empty node with a note."""
    try:
        phrases = clean_phrases(llm.complete(prompt, max_phrases))
    except (LlmUnavailable, EmptyResponse) as exc:
        return [], f"{type(exc).__name__}: {exc}"
    if single:
        phrases = [_truncate(", ".join(phrases))]
    return phrases, None


def generate_tree(
    task_id: int,
    task_classes: dict[int, str],
    tail_ids: list[int],
    llm: LlmClient,
    text_encoder: Callable[[str], np.ndarray],
    max_phrases: int = 5,
) -> SLTree:
    """Build one task's tree: base layers, then capped confusion refinement.

    Refinement is round-synchronous: each round adds a single shared layer
    holding comparison phrases for every member of every still-confused
    cluster, then recomputes clusters over all layers built so far. A
    cluster that reaches exactly two members graduates to the final
    one-to-one comparison layer.
    """
    if not task_classes:
        raise MissingSlot("task has no classes")
    ids = sorted(task_classes)
    labels = {c: task_classes[c] for c in ids}

    tree = SLTree()

    # Task-level summary: one phrase shared by every class in the task.
    p1_prompt = render_prompt(PromptKind.P1, labels=join_labels([labels[c] for c in ids]))
    task_phrases, p1_error = _query(llm, p1_prompt, max_phrases, single=True)
    layer0 = TreeLayer(kind=PromptKind.P1.value)
    for c in ids:
        layer0.phrases[c] = list(task_phrases)
        layer0.provenance[c] = NodeProvenance(
            task=task_id, kind=PromptKind.P1.value,
            prompt_sha256=_prompt_hash(p1_prompt), error=p1_error,
        )
    tree.layers.append(layer0)
    task_description = task_phrases[0] if task_phrases else join_labels(
        [labels[c] for c in ids]
    )

    # Fixed template layer: rendered directly, no LLM round trip.
    layer1 = TreeLayer(kind=PromptKind.FIXED.value)
    for c in ids:
        rendered = render_prompt(PromptKind.FIXED, label=labels[c])
        layer1.phrases[c] = [rendered]
        layer1.provenance[c] = NodeProvenance(
            task=task_id, kind=PromptKind.FIXED.value, prompt_sha256=_prompt_hash(rendered)
        )
    tree.layers.append(layer1)

    # Per-class distinctive features.
    layer2 = TreeLayer(kind=PromptKind.P2.value)
    for c in ids:
        prompt = render_prompt(PromptKind.P2, label=labels[c])
        phrases, error = _query(llm, prompt, max_phrases)
        layer2.phrases[c] = phrases
        layer2.provenance[c] = NodeProvenance(
            task=task_id, kind=PromptKind.P2.value,
            prompt_sha256=_prompt_hash(prompt), error=error,
        )
    tree.layers.append(layer2)

    def recompute(center: int) -> set[int]:
        return confusion_cluster(tree, center, ids, text_encoder).members

    active: dict[int, set[int]] = {}
    pending_pairs: list[tuple[int, int]] = []
    for j in sorted(tail_ids):
        members = recompute(j)
        if len(members) > 2:
            active[j] = members
        elif len(members) == 2:
            pending_pairs.append((j, (members - {j}).pop()))

    rounds = 0
    while active and rounds < MAX_REFINEMENT_ROUNDS:
        query_set = sorted({k for members in active.values() for k in members})
        layer = TreeLayer(kind=PromptKind.P3.value)
        for c in query_set:
            prompt = render_prompt(
                PromptKind.P3, label=labels[c], task_description=task_description
            )
            phrases, error = _query(llm, prompt, max_phrases)
            layer.phrases[c] = phrases
            layer.provenance[c] = NodeProvenance(
                task=task_id, kind=PromptKind.P3.value,
                prompt_sha256=_prompt_hash(prompt), error=error,
            )
        tree.layers.append(layer)
        rounds += 1
        still_active: dict[int, set[int]] = {}
        for j in sorted(active):
            members = recompute(j)
            if len(members) > 2:
                still_active[j] = members
            elif len(members) == 2:
                pending_pairs.append((j, (members - {j}).pop()))
        active = still_active

    if pending_pairs:
        layer = TreeLayer(kind=PromptKind.P4.value)
        for j, k in sorted(pending_pairs):
            prompt = render_prompt(PromptKind.P4, label=labels[j], other=labels[k])
            phrases, error = _query(llm, prompt, max_phrases)
            layer.phrases[j] = phrases
            layer.provenance[j] = NodeProvenance(
                task=task_id, kind=PromptKind.P4.value,
                prompt_sha256=_prompt_hash(prompt), error=error,
            )
        tree.layers.append(layer)

    return tree


def _layers_of_kind(tree: SLTree, kind: str) -> list[TreeLayer]:
    return [layer for layer in tree.layers if layer.kind == kind]


def _merge_layer(kind: str, parts: list[TreeLayer | None]) -> TreeLayer:
    merged = TreeLayer(kind=kind)
    for part in parts:
        if part is None:
            continue
        for cid in part.phrases:
            if cid in merged.phrases:
                raise ClassCollision(f"class {cid} present in both trees")
            merged.phrases[cid] = list(part.phrases[cid])
            if cid in part.provenance:
                merged.provenance[cid] = part.provenance[cid]
    return merged


def merge_trees(existing: SLTree, fresh: SLTree) -> SLTree:
    """Combine disjoint-class trees, aligning layers by kind.

    Base layers merge index-for-index; refinement layers pair up in order
    and shorter trees are implicitly padded with empty nodes, so every
    class ends up with the same layer count. Phrases pass through
    untouched.
    """
    if not existing.layers:
        return SLTree(layers=[_merge_layer(l.kind, [l]) for l in fresh.layers])
    if not fresh.layers:
        return SLTree(layers=[_merge_layer(l.kind, [l]) for l in existing.layers])
    overlap = set(existing.class_ids()) & set(fresh.class_ids())
    if overlap:
        raise ClassCollision(f"trees share classes {sorted(overlap)}")

    merged_layers: list[TreeLayer] = []
    for kind in (PromptKind.P1.value, PromptKind.FIXED.value, PromptKind.P2.value):
        a = _layers_of_kind(existing, kind)
        b = _layers_of_kind(fresh, kind)
        merged_layers.append(_merge_layer(kind, [a[0] if a else None, b[0] if b else None]))

    a_p3 = _layers_of_kind(existing, PromptKind.P3.value)
    b_p3 = _layers_of_kind(fresh, PromptKind.P3.value)
    for i in range(max(len(a_p3), len(b_p3))):
        merged_layers.append(
            _merge_layer(
                PromptKind.P3.value,
                [a_p3[i] if i < len(a_p3) else None, b_p3[i] if i < len(b_p3) else None],
            )
        )

    a_p4 = _layers_of_kind(existing, PromptKind.P4.value)
    b_p4 = _layers_of_kind(fresh, PromptKind.P4.value)
    if a_p4 or b_p4:
        merged_layers.append(
            _merge_layer(
                PromptKind.P4.value,
                [a_p4[0] if a_p4 else None, b_p4[0] if b_p4 else None],
            )
        )
    return SLTree(layers=merged_layers)


def layer_text_features(
    tree: SLTree,
    class_ids: list[int],
    text_encoder: Callable[[str], np.ndarray],
) -> np.ndarray:
    """Stack of per-layer class text features, shape (layers, classes, dim).

    A class without phrases in a layer contributes the zero vector there,
    which later drops out of logit aggregation.
    """
    cache: dict[str, np.ndarray] = {}

    def embed(phrase: str) -> np.ndarray:
        if phrase not in cache:
            cache[phrase] = np.asarray(text_encoder(phrase), dtype=np.float64)
        return cache[phrase]

    dim: int | None = None
    for layer in tree.layers:
        for cid in class_ids:
            for phrase in layer.get(cid):
                dim = embed(phrase).size
                break
            if dim:
                break
        if dim:
            break
    if dim is None:
        raise NoPhrases("tree holds no phrases for the requested classes")

    stack = np.zeros((tree.layer_count, len(class_ids), dim))
    for l, layer in enumerate(tree.layers):
        for col, cid in enumerate(class_ids):
            phrases = layer.get(cid)
            if phrases:
                stack[l, col] = np.stack([embed(p) for p in phrases]).mean(axis=0)
    return stack
