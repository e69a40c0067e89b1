"""Supervision construction: source aggregation, group consistency interest,
and the interest combination label.

The group consistency interest (eta) of an item is the Jaccard overlap of
its target-domain and source-domain payer sets, computed over the training
split only. It proxies how transferable interest in that item is; the
combination label routes it into the (target=0, source=1) case where the
user's own signals are ambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, EncodingError, ParseError
from .features import FIELD_ORDER, FeatureField

ICL_MODES = ("standard", "eta_zero", "always_eta")


@dataclass
class GciMap:
    """item_id -> eta in [0,1]; unseen items fall back to `default_value`."""

    eta: dict[int, float] = field(default_factory=dict)
    default_value: float = 0.0

    def get(self, item_id: int) -> float:
        return self.eta.get(item_id, self.default_value)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"default_value={self.default_value:.6f}\n")
            for item_id in sorted(self.eta):
                f.write(f"{item_id},{self.eta[item_id]:.6f}\n")

    @classmethod
    def load(cls, path) -> "GciMap":
        gci = cls()
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    if lineno == 1:
                        key, value = line.split("=")
                        if key != "default_value":
                            raise ValueError
                        gci.default_value = float(value)
                    else:
                        item, eta = line.split(",")
                        gci.eta[int(item)] = float(eta)
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: malformed gci line {line!r}") from exc
        return gci


@dataclass(frozen=True, slots=True)
class LabeledExample:
    """Encoded feature ids in canonical field order plus all three labels."""

    features: tuple[int, ...]
    y_t: int
    y_s: int
    y_icl: float


def aggregate_source(source_labels) -> int:
    """Union of the per-domain purchase labels: 1 if any domain label is 1."""
    labels = list(source_labels)
    if not labels:
        raise ValueError("aggregate_source requires at least one source domain label")
    for v in labels:
        if v not in (0, 1):
            raise ValueError(f"source label must be binary, got {v!r}")
    return max(labels)


def build_payer_sets(records) -> dict[int, tuple[set, set]]:
    """Per-item (target payers, source payers); one entry per purchasing user."""
    sets: dict[int, tuple[set, set]] = {}
    for r in records:
        y_s = max(r.source_labels)
        if r.y_t == 0 and y_s == 0:
            continue
        entry = sets.get(r.item_id)
        if entry is None:
            entry = (set(), set())
            sets[r.item_id] = entry
        if r.y_t == 1:
            entry[0].add(r.user_id)
        if y_s == 1:
            entry[1].add(r.user_id)
    return sets


def merge_payer_sets(a: dict, b: dict) -> dict:
    """Union-merge of partial payer sets from independent partitions."""
    merged = {item: (set(t), set(s)) for item, (t, s) in a.items()}
    for item, (t, s) in b.items():
        entry = merged.setdefault(item, (set(), set()))
        entry[0].update(t)
        entry[1].update(s)
    return merged


def finalize_gci(payer_sets: dict, default_value: float = 0.0) -> GciMap:
    gci = GciMap(default_value=default_value)
    for item, (payers_t, payers_s) in payer_sets.items():
        union = payers_t | payers_s
        if union:
            gci.eta[item] = len(payers_t & payers_s) / len(union)
    return gci


def compute_gci(records, default_value: float = 0.0) -> GciMap:
    """Jaccard overlap of per-item target/source payer sets.

    Set semantics: a user counts once per item regardless of purchase count.
    Items whose payer union is empty take the default (no transfer evidence).
    """
    return finalize_gci(build_payer_sets(records), default_value)


def build_icl(y_t: int, y_s: int, eta: float) -> float:
    """The combination-label table: (0,0)->0, (1,0)->1, (0,1)->eta, (1,1)->2."""
    if y_t not in (0, 1) or y_s not in (0, 1):
        raise ValueError(f"labels must be binary, got y_t={y_t!r} y_s={y_s!r}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0,1], got {eta!r}")
    if y_t == 0 and y_s == 0:
        return 0.0
    if y_t == 1 and y_s == 0:
        return 1.0
    if y_t == 0 and y_s == 1:
        return float(eta)
    return 2.0


def build_icl_variant(mode: str, y_t: int, y_s: int, eta: float) -> float:
    """`standard` is the table; `eta_zero` ignores group consistency;
    `always_eta` uses y_t + eta for every label pair."""
    if mode == "standard":
        return build_icl(y_t, y_s, eta)
    if mode == "eta_zero":
        return build_icl(y_t, y_s, 0.0)
    if mode == "always_eta":
        if y_t not in (0, 1) or y_s not in (0, 1):
            raise ValueError(f"labels must be binary, got y_t={y_t!r} y_s={y_s!r}")
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"eta must lie in [0,1], got {eta!r}")
        return float(y_t) + float(eta)
    raise ConfigError(f"unknown icl mode {mode!r}; expected one of {ICL_MODES}")


def label_dataset(records, gci: GciMap, fields: list[FeatureField],
                  mode: str = "standard") -> list[LabeledExample]:
    """Join records with the gci map into training-ready examples."""
    if mode not in ICL_MODES:
        raise ConfigError(f"unknown icl mode {mode!r}; expected one of {ICL_MODES}")
    vocab = {f.name: f.vocab for f in fields}
    examples = []
    for r in records:
        ids = tuple(getattr(r, name) for name in FIELD_ORDER)
        for name, value in zip(FIELD_ORDER, ids):
            if not 0 <= value < vocab[name]:
                raise EncodingError(f"feature {name}={value} outside vocab [0, {vocab[name]})")
        y_s = aggregate_source(r.source_labels)
        y_icl = build_icl_variant(mode, r.y_t, y_s, gci.get(r.item_id))
        examples.append(LabeledExample(ids, r.y_t, y_s, y_icl))
    return examples
