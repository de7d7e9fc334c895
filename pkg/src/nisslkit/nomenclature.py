"""Hierarchical region taxonomy and training-label resolution.

The taxonomy is a forest parsed from a flat record list ({id, name, parent}).
A merge policy (data, not code) decides how fine-grained annotations map to
training labels: whole subtrees can be excluded, and "anchor" nodes collapse
deep descendants onto a fixed-depth ancestor. Exceptions punch holes in an
enclosing anchor rule; the innermost applicable anchor always wins.

Trees and policies are immutable after construction, so every operation here
is pure and thread-safe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import TaxonomyError


@dataclass(frozen=True)
class RegionNode:
    id: str
    name: str
    parent: Optional[str]
    children: tuple[str, ...]


@dataclass(frozen=True)
class MergeAnchor:
    id: str
    keep_depth: int


@dataclass(frozen=True)
class MergePolicy:
    """Label-merging rules: excluded subtrees, anchors, and exceptions.

    keep_depth is measured in edges below the anchor: descendants deeper than
    keep_depth collapse onto their ancestor at exactly keep_depth.
    """

    excluded_roots: tuple[str, ...] = ()
    anchors: tuple[MergeAnchor, ...] = ()
    exceptions: tuple[str, ...] = ()

    def __post_init__(self):
        for anchor in self.anchors:
            if anchor.keep_depth < 0:
                raise TaxonomyError(f"anchor {anchor.id!r}: keep_depth must be >= 0")
        anchor_ids = {a.id for a in self.anchors}
        overlap = anchor_ids & set(self.excluded_roots)
        if overlap:
            raise TaxonomyError(
                f"ids cannot be both excluded and anchored: {sorted(overlap)}"
            )

    def anchor_depths(self) -> dict[str, int]:
        return {a.id: a.keep_depth for a in self.anchors}

    def validate_against(self, tree: "NomenclatureTree") -> None:
        for rid in (*self.excluded_roots, *self.exceptions, *(a.id for a in self.anchors)):
            if rid not in tree:
                raise TaxonomyError(f"policy references unknown region id {rid!r}")


class NomenclatureTree:
    """Immutable forest of RegionNodes with parent/child lookups."""

    def __init__(self, nodes: dict[str, RegionNode], roots: tuple[str, ...]):
        self._nodes = dict(nodes)
        self._roots = roots

    def __contains__(self, region_id: str) -> bool:
        return region_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def roots(self) -> tuple[str, ...]:
        return self._roots

    def node(self, region_id: str) -> RegionNode:
        try:
            return self._nodes[region_id]
        except KeyError:
            raise TaxonomyError(f"unknown region id {region_id!r}") from None

    def name(self, region_id: str) -> str:
        return self.node(region_id).name

    def path_to_root(self, region_id: str) -> list[str]:
        """Ids from the node itself up to (and including) its root."""
        path = [region_id]
        node = self.node(region_id)
        while node.parent is not None:
            path.append(node.parent)
            node = self.node(node.parent)
        return path

    def depth(self, region_id: str) -> int:
        return len(self.path_to_root(region_id)) - 1

    def max_depth(self) -> int:
        return max((self.depth(rid) for rid in self._nodes), default=0)

    def leaves(self) -> list[str]:
        return sorted(rid for rid, n in self._nodes.items() if not n.children)

    def ids(self) -> list[str]:
        return sorted(self._nodes)


def build_tree(records: Iterable[dict]) -> NomenclatureTree:
    """Assemble and validate a forest from flat {id, name, parent?} records."""
    raw: dict[str, dict] = {}
    for rec in records:
        rid = str(rec["id"])
        if rid in raw:
            raise TaxonomyError(f"duplicate region id {rid!r}")
        raw[rid] = {
            "name": str(rec.get("name", rid)),
            "parent": rec.get("parent") or None,
        }
    children: dict[str, list[str]] = {rid: [] for rid in raw}
    for rid, rec in raw.items():
        parent = rec["parent"]
        if parent is not None:
            parent = str(parent)
            if parent not in raw:
                raise TaxonomyError(f"node {rid!r} has dangling parent {parent!r}")
            children[parent].append(rid)

    # a parent-pointer cycle never reaches a root; walk each chain once
    state: dict[str, int] = {}  # 1 = on current chain, 2 = proven acyclic
    for start in raw:
        chain = []
        rid = start
        while rid is not None and state.get(rid) != 2:
            if state.get(rid) == 1:
                raise TaxonomyError(f"cycle detected through region id {rid!r}")
            state[rid] = 1
            chain.append(rid)
            rid = raw[rid]["parent"]
        for member in chain:
            state[member] = 2

    nodes = {
        rid: RegionNode(
            id=rid,
            name=rec["name"],
            parent=rec["parent"],
            children=tuple(sorted(children[rid])),
        )
        for rid, rec in raw.items()
    }
    roots = tuple(sorted(rid for rid, rec in raw.items() if rec["parent"] is None))
    return NomenclatureTree(nodes, roots)


def parse_nomenclature(path: str | Path) -> NomenclatureTree:
    """Parse a taxonomy file: JSON list of {id, name, parent?} records.

    A top-level object with a "regions" key holding the list is also accepted
    (that form can carry extra metadata next to the records).
    """
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TaxonomyError(f"cannot read taxonomy file {path}: {exc}") from exc
    if isinstance(payload, dict):
        records = payload.get("regions")
        if records is None:
            raise TaxonomyError("taxonomy object form requires a 'regions' list")
    else:
        records = payload
    if not isinstance(records, list):
        raise TaxonomyError("taxonomy file must hold a list of records")
    return build_tree(records)


def parse_policy(path: str | Path) -> MergePolicy:
    """Parse a merge-policy file: {excluded_roots[], anchors[], exceptions[]}."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TaxonomyError(f"cannot read policy file {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise TaxonomyError("policy file must hold a single object")
    anchors = tuple(
        MergeAnchor(id=str(a["id"]), keep_depth=int(a["keep_depth"]))
        for a in payload.get("anchors", ())
    )
    return MergePolicy(
        excluded_roots=tuple(str(x) for x in payload.get("excluded_roots", ())),
        anchors=anchors,
        exceptions=tuple(str(x) for x in payload.get("exceptions", ())),
    )


def resolve_label(tree: NomenclatureTree, policy: MergePolicy,
                  region_id: str) -> Optional[str]:
    """Training label for a region, or None when it falls under an exclusion.

    Walking from the node toward its root, the first anchor encountered is the
    innermost and decides the label: nodes deeper than its keep_depth collapse
    to the ancestor at exactly keep_depth below it. Hitting an exception first
    shields the node from any anchor further up. Exclusions apply anywhere on
    the path and win over everything.
    """
    path = tree.path_to_root(region_id)
    excluded = set(policy.excluded_roots)
    if any(p in excluded for p in path):
        return None
    anchor_depths = policy.anchor_depths()
    exceptions = set(policy.exceptions)
    for depth_below, ancestor in enumerate(path):
        if ancestor in anchor_depths:
            keep = anchor_depths[ancestor]
            if depth_below > keep:
                return tree.name(path[depth_below - keep])
            return tree.name(region_id)
        if ancestor in exceptions:
            return tree.name(region_id)
    return tree.name(region_id)


def resolved_label_set(tree: NomenclatureTree, policy: MergePolicy) -> list[str]:
    """Distinct training labels over all leaf regions, sorted."""
    labels = set()
    for leaf in tree.leaves():
        label = resolve_label(tree, policy, leaf)
        if label is not None:
            labels.add(label)
    return sorted(labels)


def default_policy_path() -> Path:
    return Path(__file__).parent / "data" / "default_policy.json"


def demo_taxonomy_path() -> Path:
    return Path(__file__).parent / "data" / "demo_taxonomy.json"
