"""Train/validation splits.

Whole-region records split at the section level: for each label, a seeded
shuffle holds out a fraction of the sections containing it, and all of that
label's records from held-out sections become validation data. A section can
therefore be training data for one label and validation data for another;
records never straddle the boundary because each record carries one label.

Tile records split per label with provenance stratification: validation draws
both whole held-out sections (when the label spans several) and individual
tiles from sections that stay in training.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .errors import NisslkitError
from .regions import RegionImageRecord
from .tiler import TileRecord


@dataclass
class SplitResult:
    train: list
    val: list
    uncovered_labels: list[str] = field(default_factory=list)
    per_label: dict[str, dict] = field(default_factory=dict)

    def report(self) -> dict:
        return {
            "train_count": len(self.train),
            "val_count": len(self.val),
            "uncovered_labels": self.uncovered_labels,
            "per_label": self.per_label,
        }


def _check_fraction(val_fraction: float) -> None:
    if not (0.0 <= val_fraction < 1.0):
        raise NisslkitError("val_fraction must lie in [0, 1)")


def split_whole_region(records: Sequence[RegionImageRecord], val_fraction: float,
                       seed: int) -> SplitResult:
    """Section-level 80:20-style split, independently per label.

    ceil(val_fraction * n_sections) sections are held out for each label; a
    label present in only one section keeps that section in train and is
    reported as uncovered. Deterministic given the seed.
    """
    _check_fraction(val_fraction)
    rng = random.Random(seed)

    by_label: dict[str, list[RegionImageRecord]] = {}
    for rec in records:
        by_label.setdefault(rec.label, []).append(rec)

    result = SplitResult(train=[], val=[])
    for label in sorted(by_label):
        recs = by_label[label]
        sections = sorted({r.section_id for r in recs})
        n_val = math.ceil(val_fraction * len(sections)) if val_fraction > 0 else 0
        if len(sections) == 1 and n_val > 0:
            n_val = 0
            result.uncovered_labels.append(label)
        shuffled = sections[:]
        rng.shuffle(shuffled)
        val_sections = set(shuffled[:n_val])
        n_train_recs = 0
        n_val_recs = 0
        for rec in recs:
            if rec.section_id in val_sections:
                result.val.append(rec)
                n_val_recs += 1
            else:
                result.train.append(rec)
                n_train_recs += 1
        result.per_label[label] = {
            "sections": len(sections),
            "val_sections": sorted(val_sections),
            "train_records": n_train_recs,
            "val_records": n_val_recs,
        }
    return result


def split_tiles(tile_records: Sequence[TileRecord], val_fraction: float,
                seed: int, same_section_ratio: float = 0.5) -> SplitResult:
    """Per-label tile split mixing same-section and held-out-section tiles.

    Roughly same_section_ratio of each label's validation budget comes from
    individual tiles of sections that remain in training (other grid
    positions of the same section); the rest comes from whole held-out
    sections when the label spans more than one. Train and validation are
    disjoint by (section, grid_x, grid_y).
    """
    _check_fraction(val_fraction)
    if not (0.0 <= same_section_ratio <= 1.0):
        raise NisslkitError("same_section_ratio must lie in [0, 1]")
    rng = random.Random(seed)

    by_label: dict[str, list[TileRecord]] = {}
    for rec in tile_records:
        by_label.setdefault(rec.label, []).append(rec)

    result = SplitResult(train=[], val=[])
    for label in sorted(by_label):
        recs = sorted(by_label[label], key=TileRecord.key)
        budget = int(round(val_fraction * len(recs)))
        if budget <= 0 or len(recs) < 2:
            result.train.extend(recs)
            if val_fraction > 0:
                result.uncovered_labels.append(label)
            result.per_label[label] = {
                "tiles": len(recs), "val_tiles": 0, "held_out_sections": []}
            continue

        sections = sorted({r.section_id for r in recs})
        val_keys: set[tuple[str, int, int]] = set()
        held_out: list[str] = []

        if len(sections) > 1:
            cross_budget = budget - int(round(budget * same_section_ratio))
            shuffled = sections[:]
            rng.shuffle(shuffled)
            counts = {s: sum(1 for r in recs if r.section_id == s) for s in sections}
            taken = 0
            for sec in shuffled[:-1]:  # always keep at least one section in train
                if taken >= cross_budget:
                    break
                held_out.append(sec)
                taken += counts[sec]
                val_keys.update(r.key() for r in recs if r.section_id == sec)

        remaining = [r for r in recs if r.key() not in val_keys]
        same_budget = budget - len(val_keys)
        # never drain a label's training data entirely
        same_budget = min(same_budget, len(remaining) - 1)
        if same_budget > 0:
            pick = rng.sample(range(len(remaining)), same_budget)
            val_keys.update(remaining[i].key() for i in pick)

        n_val = 0
        for rec in recs:
            if rec.key() in val_keys:
                result.val.append(rec)
                n_val += 1
            else:
                result.train.append(rec)
        result.per_label[label] = {
            "tiles": len(recs),
            "val_tiles": n_val,
            "held_out_sections": sorted(held_out),
        }
    return result
