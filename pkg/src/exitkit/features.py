"""Canonical feature-field layout shared by the generator, labeler, and model.

Field order is a wire contract: log columns, example encodings, and the
embedding concatenation all follow `FIELD_ORDER`. Scene fields are the
subset fed to the scene selector; they share embedding tables with the
interest towers.
"""

from __future__ import annotations

from dataclasses import dataclass

USER_FIELDS = ("user_id", "age", "gender", "occupation")
ITEM_FIELDS = ("item_id", "cat1", "cat2", "cat3", "business")
CONTEXT_FIELDS = ("hour", "weekday", "page", "conn")
FIELD_ORDER = USER_FIELDS + ITEM_FIELDS + CONTEXT_FIELDS

# User profile, full item category tree, and request context condition the
# transfer intensity; raw user/item ids deliberately do not.
SCENE_FIELDS = (
    "age", "gender", "occupation",
    "cat1", "cat2", "cat3", "business",
    "hour", "weekday", "page", "conn",
)


@dataclass(frozen=True)
class FeatureField:
    name: str
    vocab: int
    group: str  # "user" | "item" | "context"


def build_fields(vocab_sizes: dict[str, int]) -> list[FeatureField]:
    """Assemble the canonical field list from per-field vocabulary sizes."""
    missing = [n for n in FIELD_ORDER if n not in vocab_sizes]
    if missing:
        raise ValueError(f"missing vocab sizes for fields: {missing}")
    group_of = {}
    for n in USER_FIELDS:
        group_of[n] = "user"
    for n in ITEM_FIELDS:
        group_of[n] = "item"
    for n in CONTEXT_FIELDS:
        group_of[n] = "context"
    return [FeatureField(n, int(vocab_sizes[n]), group_of[n]) for n in FIELD_ORDER]
