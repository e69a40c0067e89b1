"""Synthetic multi-domain interaction logs with known ground truth.

The world model, per exposure of user u to item i in context (hour, weekday):

  segment  = occupation(u); category = cat1(i); scene = (hour bucket, weekday flag)
  affinity A(u, category) ~ Bernoulli(affinity_rate), a hidden per-user taste
      drawn by a seeded hash; without affinity both purchase rates shrink by
      `low_affinity_mult`. Affinity is recoverable from the dense source
      labels but barely from the sparse target labels, which is what makes
      cross-domain transfer worth anything here.
  source:  y_j ~ Bernoulli(p_s)  independently per source domain, where
      p_s = base_source(segment, category) * scene_boost * affinity_mult
  target:  y_t ~ Bernoulli(p_t0 + s * tau_eff * (couple_high - p_t0)) with
      s = max_j y_j, p_t0 = base_target(segment, category) * affinity_mult,
      tau_eff = tau(category) * offpeak factor outside designated scenes.

tau(category) is the planted transferability: a category with tau near 0
("medicine") produces source purchases that say nothing about target
interest; tau near 1 ("food") couples the domains, strongly so in the
designated weekday-lunch scenes. Ground-truth marginal purchase
probabilities per (segment, category, scene) cell are computed in closed
form next to the sampler so metrics can be scored against the true world.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError
from .features import FIELD_ORDER, FeatureField, build_fields

COUPLE_HIGH = 0.9
RATE_CAP = 0.95
NEG_PLANT_TAU = 0.05
POS_PLANT_TAU = 0.8
NEG_TARGET_SCALE = 0.1  # planted negative-transfer categories keep target interest tiny

_MIX1 = 0x9E3779B97F4A7C15
_MIX2 = 0xC2B2AE3D27D4EB4F
_MIX3 = 0xD6E8FEB86659FD93
_FIN1 = 0xBF58476D1CE4E5B9
_FIN2 = 0x94D049BB133111EB
_U64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class CategorySpec:
    name: str
    tau: float


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 2000
    n_items: int = 500
    n_source_domains: int = 2
    n_exposures: int = 250_000
    categories: tuple[CategorySpec, ...] = (
        CategorySpec("food", 0.90),
        CategorySpec("deal", 0.70),
        CategorySpec("grocery", 0.50),
        CategorySpec("entertain", 0.35),
        CategorySpec("apparel", 0.15),
        CategorySpec("medicine", 0.02),
    )
    hour_buckets: int = 6
    n_segments: int = 4
    ages: int = 8
    genders: int = 3
    cat2_vocab: int = 20
    cat3_vocab: int = 50
    businesses: int = 6
    pages: int = 4
    conns: int = 3
    affinity_rate: float = 0.3
    low_affinity_mult: float = 0.1
    source_rate_range: tuple[float, float] = (0.18, 0.40)
    target_rate_range: tuple[float, float] = (0.01, 0.045)
    scene_source_boost: float = 1.8
    offpeak_tau_mult: float = 0.55
    seed: int = 7

    def validate(self) -> None:
        counts = {
            "n_users": self.n_users, "n_items": self.n_items,
            "n_exposures": self.n_exposures, "hour_buckets": self.hour_buckets,
            "n_segments": self.n_segments, "ages": self.ages,
            "genders": self.genders, "cat2_vocab": self.cat2_vocab,
            "cat3_vocab": self.cat3_vocab, "businesses": self.businesses,
            "pages": self.pages, "conns": self.conns,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.n_source_domains < 1:
            raise ConfigError("need at least one source domain")
        if not self.categories:
            raise ConfigError("category list is empty")
        for c in self.categories:
            if not 0.0 <= c.tau <= 1.0:
                raise ConfigError(f"category {c.name} tau {c.tau} outside [0,1]")
        if not any(c.tau <= NEG_PLANT_TAU for c in self.categories):
            raise ConfigError(f"need a planted negative-transfer category (tau <= {NEG_PLANT_TAU})")
        if not any(c.tau >= POS_PLANT_TAU for c in self.categories):
            raise ConfigError(f"need a planted positive-transfer category (tau >= {POS_PLANT_TAU})")
        if not 24 % self.hour_buckets == 0:
            raise ConfigError("hour_buckets must divide 24")

    def vocab_sizes(self) -> dict[str, int]:
        return {
            "user_id": self.n_users, "age": self.ages, "gender": self.genders,
            "occupation": self.n_segments, "item_id": self.n_items,
            "cat1": len(self.categories), "cat2": self.cat2_vocab,
            "cat3": self.cat3_vocab, "business": self.businesses,
            "hour": 24, "weekday": 7, "page": self.pages, "conn": self.conns,
        }

    def fields(self) -> list[FeatureField]:
        return build_fields(self.vocab_sizes())


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    """One (user, item, context) exposure with its per-domain purchase labels."""

    user_id: int
    age: int
    gender: int
    occupation: int
    item_id: int
    cat1: int
    cat2: int
    cat3: int
    business: int
    hour: int
    weekday: int
    page: int
    conn: int
    y_t: int
    source_labels: tuple[int, ...]


@dataclass
class GroundTruth:
    """True per-cell purchase probabilities; cell = (segment, category, scene)."""

    tau: dict[int, float]
    category_names: dict[int, str]
    n_source_domains: int
    hour_buckets: int
    p_target: np.ndarray = field(repr=False)  # [segment, category, hour_bucket, weekday_flag]
    p_source: np.ndarray = field(repr=False)  # per-domain marginal, same shape

    def cell(self, segment: int, category: int, hour_bucket: int, weekday_flag: int) -> tuple[float, float]:
        idx = (segment, category, hour_bucket, weekday_flag)
        return float(self.p_target[idx]), float(self.p_source[idx])

    def mean_target_interest(self) -> float:
        return float(self.p_target.mean())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"n_source_domains={self.n_source_domains}\n")
            f.write(f"hour_buckets={self.hour_buckets}\n")
            f.write("[categories]\n")
            for cat in sorted(self.tau):
                f.write(f"{cat},{self.category_names[cat]},{self.tau[cat]:.6f}\n")
            f.write("[cells]\n")
            segs, cats, hbs, wfs = self.p_target.shape
            for s in range(segs):
                for c in range(cats):
                    for h in range(hbs):
                        for w in range(wfs):
                            f.write(f"{s},{c},{h},{w},"
                                    f"{self.p_target[s, c, h, w]:.10f},"
                                    f"{self.p_source[s, c, h, w]:.10f}\n")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        tau: dict[int, float] = {}
        names: dict[int, str] = {}
        cells: list[tuple[int, int, int, int, float, float]] = []
        n_domains = hour_buckets = None
        section = None
        with open(path, encoding="utf-8") as f:
            for lineno, raw in enumerate(f, start=1):
                line = raw.strip()
                if not line:
                    continue
                try:
                    if line == "[categories]" or line == "[cells]":
                        section = line
                    elif section is None:
                        key, value = line.split("=")
                        if key == "n_source_domains":
                            n_domains = int(value)
                        elif key == "hour_buckets":
                            hour_buckets = int(value)
                        else:
                            raise ValueError
                    elif section == "[categories]":
                        cat, name, t = line.split(",")
                        tau[int(cat)] = float(t)
                        names[int(cat)] = name
                    else:
                        s, c, h, w, pt, ps = line.split(",")
                        cells.append((int(s), int(c), int(h), int(w), float(pt), float(ps)))
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: malformed ground-truth line {line!r}") from exc
        if n_domains is None or hour_buckets is None or not cells:
            raise ParseError(f"{path}: incomplete ground-truth file")
        n_seg = max(c[0] for c in cells) + 1
        n_cat = max(c[1] for c in cells) + 1
        p_target = np.zeros((n_seg, n_cat, hour_buckets, 2))
        p_source = np.zeros_like(p_target)
        for s, c, h, w, pt, ps in cells:
            p_target[s, c, h, w] = pt
            p_source[s, c, h, w] = ps
        return cls(tau, names, n_domains, hour_buckets, p_target, p_source)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        x ^= x >> np.uint64(30)
        x *= np.uint64(_FIN1)
        x ^= x >> np.uint64(27)
        x *= np.uint64(_FIN2)
        x ^= x >> np.uint64(31)
    return x

def _hash_unit(seed: int, a: np.ndarray, b: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic uniform [0,1) per (a,b) pair; order independent."""
    with np.errstate(over="ignore"):
        x = (np.asarray(a, dtype=np.uint64) * np.uint64(_MIX1)
             ^ np.asarray(b, dtype=np.uint64) * np.uint64(_MIX2)
             ^ np.uint64((seed * _MIX3 + salt) & _U64))
    return _mix64(x) / float(2 ** 64)


def hour_bucket(hour, n_buckets: int):
    return hour * n_buckets // 24


def weekday_flag(weekday):
    return (np.asarray(weekday) < 5).astype(np.int64)


def _rate_tables(config: WorldConfig, rng: np.random.Generator):
    """Base per-(segment, category) rates plus scene multipliers.

    Scene multipliers are keyed [segment, category, hour_bucket, weekday
    flag]. For positive-transfer categories the coupling runs at full
    strength only in peak scenes, and which scenes are peak depends on the
    user segment: the first half of the segments peak on weekday lunch and
    dinner, the rest on weekend lunch and dinner. The three-way
    segment x hour x weekday interaction is what the scene selector is for.
    """
    n_seg, n_cat = config.n_segments, len(config.categories)
    lo_s, hi_s = config.source_rate_range
    lo_t, hi_t = config.target_rate_range
    base_source = rng.uniform(lo_s, hi_s, size=(n_seg, n_cat))
    base_target = rng.uniform(lo_t, hi_t, size=(n_seg, n_cat))
    tau = np.array([c.tau for c in config.categories])
    base_target[:, tau <= NEG_PLANT_TAU] *= NEG_TARGET_SCALE

    peaks = (hour_bucket(12, config.hour_buckets), hour_bucket(19, config.hour_buckets))
    source_boost = np.ones((n_seg, n_cat, config.hour_buckets, 2))
    tau_mult = np.ones((n_seg, n_cat, config.hour_buckets, 2))
    positive = tau >= POS_PLANT_TAU
    tau_mult[:, positive, :, :] = config.offpeak_tau_mult
    for seg in range(n_seg):
        wf_peak = 1 if seg < n_seg // 2 else 0
        for hb in peaks:
            tau_mult[seg, positive, hb, wf_peak] = 1.0
            source_boost[seg, positive, hb, wf_peak] = config.scene_source_boost
    return base_source, base_target, tau, source_boost, tau_mult


def _cell_marginals(config: WorldConfig, base_source, base_target, tau, source_boost, tau_mult):
    """Closed-form per-cell purchase probabilities, averaged over affinity."""
    # dims: [segment, category, hour_bucket, weekday_flag]
    bs = base_source[:, :, None, None] * source_boost
    bt = np.broadcast_to(base_target[:, :, None, None], bs.shape)
    te = tau[None, :, None, None] * tau_mult
    p_target = np.zeros(bs.shape)
    p_source = np.zeros(bs.shape)
    for aff_mult, weight in ((1.0, config.affinity_rate),
                             (config.low_affinity_mult, 1.0 - config.affinity_rate)):
        ps = np.clip(bs * aff_mult, 0.0, RATE_CAP)
        pt0 = np.clip(bt * aff_mult, 0.0, RATE_CAP)
        p_any = 1.0 - (1.0 - ps) ** config.n_source_domains
        pt = p_any * (pt0 + te * (COUPLE_HIGH - pt0)) + (1.0 - p_any) * pt0
        p_target += weight * pt
        p_source += weight * ps
    return p_target, p_source


def generate(config: WorldConfig) -> tuple[list[InteractionRecord], GroundTruth]:
    """Sample the exposure log and its exact ground truth. Pure in the seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_cat = len(config.categories)

    occupation = rng.integers(0, config.n_segments, config.n_users)
    age = rng.integers(0, config.ages, config.n_users)
    gender = rng.integers(0, config.genders, config.n_users)
    cat1 = np.arange(config.n_items) % n_cat  # round-robin keeps every category populated
    cat2 = rng.integers(0, config.cat2_vocab, config.n_items)
    cat3 = rng.integers(0, config.cat3_vocab, config.n_items)
    business = rng.integers(0, config.businesses, config.n_items)

    base_source, base_target, tau, source_boost, tau_mult = _rate_tables(config, rng)

    n = config.n_exposures
    u = rng.integers(0, config.n_users, n)
    i = rng.integers(0, config.n_items, n)
    hour = rng.integers(0, 24, n)
    weekday = rng.integers(0, 7, n)
    page = rng.integers(0, config.pages, n)
    conn = rng.integers(0, config.conns, n)

    seg = occupation[u]
    cat = cat1[i]
    hb = hour_bucket(hour, config.hour_buckets)
    wf = weekday_flag(weekday)
    affinity = _hash_unit(config.seed, u, cat, salt=0xAF1) < config.affinity_rate
    aff_mult = np.where(affinity, 1.0, config.low_affinity_mult)

    p_s = np.clip(base_source[seg, cat] * source_boost[seg, cat, hb, wf] * aff_mult, 0.0, RATE_CAP)
    source = np.empty((config.n_source_domains, n), dtype=np.int64)
    for j in range(config.n_source_domains):
        source[j] = rng.random(n) < p_s
    s_any = source.max(axis=0)

    p_t0 = np.clip(base_target[seg, cat] * aff_mult, 0.0, RATE_CAP)
    tau_eff = tau[cat] * tau_mult[seg, cat, hb, wf]
    p_t = np.where(s_any == 1, p_t0 + tau_eff * (COUPLE_HIGH - p_t0), p_t0)
    y_t = (rng.random(n) < p_t).astype(np.int64)

    records = [
        InteractionRecord(
            int(u[k]), int(age[u[k]]), int(gender[u[k]]), int(occupation[u[k]]),
            int(i[k]), int(cat[k]), int(cat2[i[k]]), int(cat3[i[k]]), int(business[i[k]]),
            int(hour[k]), int(weekday[k]), int(page[k]), int(conn[k]),
            int(y_t[k]), tuple(int(source[j, k]) for j in range(config.n_source_domains)),
        )
        for k in range(n)
    ]

    p_target, p_source = _cell_marginals(config, base_source, base_target, tau, source_boost, tau_mult)
    truth = GroundTruth(
        tau={c: float(tau[c]) for c in range(n_cat)},
        category_names={c: config.categories[c].name for c in range(n_cat)},
        n_source_domains=config.n_source_domains,
        hour_buckets=config.hour_buckets,
        p_target=p_target,
        p_source=p_source,
    )
    return records, truth


def split(records: list[InteractionRecord], train_fraction: float,
          seed: int) -> tuple[list[InteractionRecord], list[InteractionRecord]]:
    """Hash-partition the log into disjoint, union-complete train/test sets."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0,1), got {train_fraction}")
    n = len(records)
    idx = np.arange(n, dtype=np.uint64)
    content = np.array([
        (r.user_id * 1000003 + r.item_id * 8191 + r.hour * 131 + r.weekday * 31
         + r.page * 17 + r.conn * 7 + r.y_t) & _U64
        for r in records
    ], dtype=np.uint64)
    with np.errstate(over="ignore"):
        unit = _hash_unit(seed, content, idx, salt=0x59117)
    train = [r for r, x in zip(records, unit) if x < train_fraction]
    test = [r for r, x in zip(records, unit) if x >= train_fraction]
    return train, test


def write_log(path, records: list[InteractionRecord], n_source_domains: int) -> None:
    header = ",".join(("user_id", "item_id") + tuple(f for f in FIELD_ORDER if f not in ("user_id", "item_id"))
                      + ("y_t",) + tuple(f"y_s_{j + 1}" for j in range(n_source_domains)))
    buf = io.StringIO()
    buf.write(header + "\n")
    for r in records:
        rest = ",".join(str(getattr(r, f)) for f in FIELD_ORDER if f not in ("user_id", "item_id"))
        labels = ",".join(str(v) for v in r.source_labels)
        buf.write(f"{r.user_id},{r.item_id},{rest},{r.y_t},{labels}\n")
    with open(path, "w", encoding="utf-8") as f:
        f.write(buf.getvalue())


def read_log(path) -> tuple[list[InteractionRecord], int]:
    """Inverse of write_log; malformed rows raise ParseError naming the line."""
    with open(path, encoding="utf-8") as f:
        header = f.readline()
        if not header.strip():
            return [], 0
        columns = header.strip().split(",")
        n_domains = sum(1 for c in columns if c.startswith("y_s_"))
        feature_cols = [c for c in columns if not c.startswith("y_")]
        expected = list(("user_id", "item_id") + tuple(x for x in FIELD_ORDER if x not in ("user_id", "item_id")))
        if feature_cols != expected or "y_t" not in columns or n_domains < 1:
            raise ParseError(f"{path}:1: unexpected header {header.strip()!r}")
        records = []
        pos = {name: k for k, name in enumerate(columns)}
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(columns):
                raise ParseError(f"{path}:{lineno}: expected {len(columns)} columns, got {len(parts)}")
            try:
                values = [int(p) for p in parts]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-integer field in {line!r}") from exc
            labels = [values[pos["y_t"]]] + [values[pos[f"y_s_{j + 1}"]] for j in range(n_domains)]
            if any(v not in (0, 1) for v in labels):
                raise ParseError(f"{path}:{lineno}: non-binary label in {line!r}")
            records.append(InteractionRecord(
                *(values[pos[name]] for name in FIELD_ORDER),
                y_t=values[pos["y_t"]],
                source_labels=tuple(values[pos[f"y_s_{j + 1}"]] for j in range(n_domains)),
            ))
    return records, n_domains


def log_stats(records: list[InteractionRecord], n_source_domains: int) -> dict[str, int]:
    """Dataset roles: sample/user/item counts and purchases per domain."""
    stats = {
        "samples": len(records),
        "users": len({r.user_id for r in records}),
        "items": len({r.item_id for r in records}),
        "purchases_target": sum(r.y_t for r in records),
    }
    for j in range(n_source_domains):
        stats[f"purchases_source_{j + 1}"] = sum(r.source_labels[j] for r in records)
    return stats
