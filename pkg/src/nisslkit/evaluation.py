"""Classification, retrieval, and coarse-segmentation metrics.

Zero-shot classification ranks label embeddings by cosine similarity to an
image embedding. Reports use weighted (support-averaged) precision/recall/F1
over one-vs-rest per-class counts. Retrieval quality is Recall@K with
label-equality relevance, macro-averaged over queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NisslkitError
from .tiler import TileRecord


# ---------------------------------------------------------------------------
# zero-shot classification
# ---------------------------------------------------------------------------

def classify_zero_shot(image_embedding: np.ndarray,
                       label_embeddings: dict[str, np.ndarray]
                       ) -> list[tuple[str, float]]:
    """Labels ranked by descending cosine similarity; ties break by name."""
    if not label_embeddings:
        raise NisslkitError("label embedding set is empty")
    labels = sorted(label_embeddings)
    matrix = np.stack([label_embeddings[l] for l in labels])
    scores = matrix @ np.asarray(image_embedding, dtype=np.float64)
    order = sorted(range(len(labels)), key=lambda i: (-scores[i], labels[i]))
    return [(labels[i], float(scores[i])) for i in order]


# ---------------------------------------------------------------------------
# weighted precision / recall / F1
# ---------------------------------------------------------------------------

@dataclass
class ClassStats:
    support: int
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    per_class: dict[str, ClassStats]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    confusion: dict[tuple[str, str], int] = field(default_factory=dict)
    retrieval: dict[str, dict[int, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "per_class": {
                label: {
                    "support": s.support,
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                }
                for label, s in sorted(self.per_class.items())
            },
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
            "confusion": [
                {"truth": t, "predicted": p, "count": c}
                for (t, p), c in sorted(self.confusion.items())
            ],
            "retrieval": {
                task: {str(k): v for k, v in table.items()}
                for task, table in sorted(self.retrieval.items())
            },
        }


def weighted_prf(predictions: Sequence[str], truths: Sequence[str]) -> EvalReport:
    """One-vs-rest per-class metrics aggregated with true-class supports."""
    if len(predictions) != len(truths):
        raise NisslkitError("predictions and truths differ in length")
    if len(truths) == 0:
        raise NisslkitError("cannot evaluate an empty prediction set")

    confusion: dict[tuple[str, str], int] = {}
    for truth, pred in zip(truths, predictions):
        confusion[(truth, pred)] = confusion.get((truth, pred), 0) + 1

    classes = sorted(set(truths) | set(predictions))
    per_class: dict[str, ClassStats] = {}
    for cls in classes:
        tp = confusion.get((cls, cls), 0)
        fp = sum(c for (t, p), c in confusion.items() if p == cls and t != cls)
        fn = sum(c for (t, p), c in confusion.items() if t == cls and p != cls)
        support = tp + fn
        precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
        recall = tp / support if support > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if (precision + recall) > 0 else 0.0)
        per_class[cls] = ClassStats(support, precision, recall, f1)

    total = sum(s.support for s in per_class.values())
    if total == 0:
        raise NisslkitError("no true samples to weight")
    w_p = sum(s.support * s.precision for s in per_class.values()) / total
    w_r = sum(s.support * s.recall for s in per_class.values()) / total
    w_f = sum(s.support * s.f1 for s in per_class.values()) / total
    return EvalReport(per_class, w_p, w_r, w_f, confusion)


# ---------------------------------------------------------------------------
# multi-region label evaluation
# ---------------------------------------------------------------------------

@dataclass
class MultiLabelOutcome:
    hits: list[bool]
    effective_predictions: list[str]
    report: EvalReport


def multi_label_hit_rate(ranked_predictions: Sequence[Sequence[str]],
                         multi_labels: Sequence[Sequence[str]]) -> MultiLabelOutcome:
    """Top-k hit evaluation for records carrying k labels each.

    A record with k labels scores a hit when its primary (first) label appears
    in the top k ranked predictions; a hit counts as a correct primary-label
    prediction in the aggregated report, a miss keeps the top-1 prediction.
    """
    if len(ranked_predictions) != len(multi_labels):
        raise NisslkitError("ranked predictions and label lists differ in length")
    hits: list[bool] = []
    effective: list[str] = []
    truths: list[str] = []
    for ranked, labels in zip(ranked_predictions, multi_labels):
        if len(labels) < 1:
            raise NisslkitError("each record needs at least one label")
        k = len(labels)
        primary = labels[0]
        truths.append(primary)
        hit = primary in list(ranked[:k])
        hits.append(hit)
        effective.append(primary if hit else ranked[0])
    report = weighted_prf(effective, truths)
    return MultiLabelOutcome(hits, effective, report)


# ---------------------------------------------------------------------------
# Recall@K retrieval
# ---------------------------------------------------------------------------

@dataclass
class RecallResult:
    value: float
    evaluated_queries: int
    skipped_queries: int


def recall_at_k(query_embeddings: np.ndarray, corpus_embeddings: np.ndarray,
                query_labels: Sequence[str], corpus_labels: Sequence[str],
                k: int, exclude_self: bool = False) -> RecallResult:
    """Macro-averaged fraction of relevant corpus items found in the top K.

    Relevance is label equality. With exclude_self=True (same-corpus
    image-to-image retrieval), item i of the corpus is removed from query i's
    ranking. Queries with no relevant items are skipped and counted.
    """
    if k < 1:
        raise NisslkitError("K must be >= 1")
    queries = np.atleast_2d(np.asarray(query_embeddings, dtype=np.float64))
    corpus = np.atleast_2d(np.asarray(corpus_embeddings, dtype=np.float64))
    if len(query_labels) != queries.shape[0] or len(corpus_labels) != corpus.shape[0]:
        raise NisslkitError("labels must align with embedding rows")
    corpus_arr = np.asarray(corpus_labels, dtype=object)

    scores = queries @ corpus.T
    fractions: list[float] = []
    skipped = 0
    for qi in range(queries.shape[0]):
        row = scores[qi].copy()
        relevant = corpus_arr == query_labels[qi]
        if exclude_self:
            row[qi] = -np.inf
            relevant = relevant.copy()
            relevant[qi] = False
        n_rel = int(relevant.sum())
        if n_rel == 0:
            skipped += 1
            continue
        top = np.argsort(-row, kind="stable")[:k]
        found = int(relevant[top].sum())
        fractions.append(found / n_rel)
    value = float(np.mean(fractions)) if fractions else 0.0
    return RecallResult(value, len(fractions), skipped)


def retrieval_table(query_embeddings, corpus_embeddings, query_labels,
                    corpus_labels, ks: Sequence[int] = (1, 5, 10),
                    exclude_self: bool = False) -> dict[int, float]:
    return {
        k: recall_at_k(query_embeddings, corpus_embeddings, query_labels,
                       corpus_labels, k, exclude_self).value
        for k in ks
    }


# ---------------------------------------------------------------------------
# coarse segmentation
# ---------------------------------------------------------------------------

BACKGROUND_ID = 0


def coarse_segmentation(tile_records: Sequence[TileRecord],
                        predicted_labels: Sequence[str],
                        section_dims: tuple[int, int]
                        ) -> tuple[np.ndarray, dict[str, int]]:
    """Per-pixel label-id map from per-tile predictions.

    Each tile's block is filled with the id of its predicted label; pixels no
    tile covers keep the reserved background id 0. Overlapping tiles are an
    error. Returns (label_map, label -> id).
    """
    width, height = section_dims
    if len(tile_records) != len(predicted_labels):
        raise NisslkitError("tile records and predictions differ in length")
    label_ids = {label: i + 1 for i, label in enumerate(sorted(set(predicted_labels)))}
    label_map = np.full((height, width), BACKGROUND_ID, dtype=np.int32)
    covered = np.zeros((height, width), dtype=bool)
    for rec, pred in zip(tile_records, predicted_labels):
        x0, y0 = int(rec.bbox.x0), int(rec.bbox.y0)
        x1, y1 = int(rec.bbox.x1), int(rec.bbox.y1)
        if np.any(covered[y0:y1, x0:x1]):
            raise NisslkitError(
                f"tile ({rec.grid_x}, {rec.grid_y}) overlaps an earlier tile")
        covered[y0:y1, x0:x1] = True
        label_map[y0:y1, x0:x1] = label_ids[pred]
    return label_map, label_ids


def segmentation_agreement(label_map: np.ndarray, truth_map: np.ndarray,
                           restrict_to_covered: bool = True) -> float:
    """Pixel agreement between a predicted and a ground-truth label map.

    Maps must share shape and id assignment. By default only pixels covered by
    some tile (non-background in the prediction) are scored.
    """
    if label_map.shape != truth_map.shape:
        raise NisslkitError("label maps differ in shape")
    if restrict_to_covered:
        mask = label_map != BACKGROUND_ID
        if not np.any(mask):
            return 0.0
        return float(np.mean(label_map[mask] == truth_map[mask]))
    return float(np.mean(label_map == truth_map))
