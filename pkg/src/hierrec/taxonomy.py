"""Two-level category tree: items (C1) each with three ordered scores (C2)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

SCORES_PER_ITEM = 3


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class Score:
    value: int
    description: str


@dataclass(frozen=True)
class Item:
    id: int
    name: str
    description: str
    scores: tuple[Score, ...]


@dataclass(frozen=True)
class Taxonomy:
    root_summary: str
    items: tuple[Item, ...]
    scores_per_item: int = SCORES_PER_ITEM

    def __post_init__(self):
        _validate(self)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_leaves(self) -> int:
        return self.n_items * self.scores_per_item

    def flat_index(self, item: int, score: int) -> int:
        return flat_index(item, score, self.n_items)

    def parent_of(self, flat: int) -> tuple[int, int]:
        return parent_of(flat, self.n_items)

    def item_texts(self) -> list[str]:
        return [f"{it.name}: {it.description}" for it in self.items]

    def score_texts(self) -> list[list[str]]:
        return [[s.description for s in it.scores] for it in self.items]

    def to_dict(self) -> dict:
        return {
            "summary": self.root_summary,
            "items": [
                {
                    "id": it.id,
                    "name": it.name,
                    "description": it.description,
                    "scores": [{"value": s.value, "description": s.description} for s in it.scores],
                }
                for it in self.items
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Taxonomy":
        try:
            summary = raw["summary"]
            items_raw = raw["items"]
        except (KeyError, TypeError) as exc:
            raise TaxonomyError(f"taxonomy is missing field {exc}") from None
        items = []
        for pos, entry in enumerate(items_raw):
            label = entry.get("name", f"#{pos}") if isinstance(entry, dict) else f"#{pos}"
            try:
                scores = tuple(Score(int(s["value"]), str(s["description"])) for s in entry["scores"])
                items.append(Item(int(entry["id"]), str(entry["name"]), str(entry["description"]), scores))
            except (KeyError, TypeError, ValueError) as exc:
                raise TaxonomyError(f"item {label}: malformed entry ({exc})") from None
        return cls(str(summary), tuple(items))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _validate(tax: Taxonomy) -> None:
    if tax.scores_per_item != SCORES_PER_ITEM:
        raise TaxonomyError(f"scores_per_item is fixed at {SCORES_PER_ITEM}")
    if not tax.items:
        raise TaxonomyError("taxonomy has no items")
    ids = [it.id for it in tax.items]
    seen = set()
    for it in tax.items:
        if it.id in seen:
            raise TaxonomyError(f"item {it.id} ({it.name}): duplicate item id")
        seen.add(it.id)
    if ids != list(range(len(ids))):
        raise TaxonomyError(f"item ids must be contiguous from 0 in order, got {ids}")
    for it in tax.items:
        if len(it.scores) != SCORES_PER_ITEM:
            raise TaxonomyError(
                f"item {it.id} ({it.name}): expected {SCORES_PER_ITEM} scores, got {len(it.scores)}"
            )
        if [s.value for s in it.scores] != list(range(SCORES_PER_ITEM)):
            raise TaxonomyError(f"item {it.id} ({it.name}): score values must be 0, 1, 2 in order")
        for s in it.scores:
            if not s.description.strip():
                raise TaxonomyError(f"item {it.id} ({it.name}): score {s.value} has empty description")


def load_taxonomy(path) -> Taxonomy:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"{path}: invalid JSON ({exc})") from None
    return Taxonomy.from_dict(raw)


def default_taxonomy() -> Taxonomy:
    """The shipped four-item upper-limb assessment taxonomy."""
    text = resources.files("hierrec").joinpath("fma_taxonomy.json").read_text(encoding="utf-8")
    return Taxonomy.from_dict(json.loads(text))


def flat_index(item: int, score: int, n_items: int) -> int:
    if not (0 <= item < n_items) or not (0 <= score < SCORES_PER_ITEM):
        raise IndexError(f"(item={item}, score={score}) out of range for {n_items} items")
    return item * SCORES_PER_ITEM + score


def parent_of(flat: int, n_items: int) -> tuple[int, int]:
    if not (0 <= flat < n_items * SCORES_PER_ITEM):
        raise IndexError(f"flat index {flat} out of range for {n_items} items")
    return divmod(flat, SCORES_PER_ITEM)
