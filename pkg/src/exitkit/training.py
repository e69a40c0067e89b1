"""Joint loss, the training loop, offline metrics, and the exposure proxy.

The joint loss is

    lambda1 * CE(y_t, p_target) + lambda2 * CE(y_s, p_source)
        + lambda3 * |y_icl - (p_target + p_source * p_trans)|

with all terms batch-averaged so the lambda weights are independent of
batch size. The combination term sees the tower outputs through
stop-gradient by default, confining it to the scene selector.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .datagen import GroundTruth, hour_bucket, weekday_flag
from .errors import ConfigError, GroundTruthRequiredError
from .labels import ICL_MODES, LabeledExample
from .metrics import auc, logloss
from .model import (ForwardState, ModelConfig, Prediction, combine,
                    encode_examples, forward, predict)
from .tensor import Tape, Tensor

VARIANTS = ("full", "no_icl", "no_ssn", "no_joint_loss",
            "icl_eta_zero", "icl_always_eta", "single_domain_dnn")


@dataclass
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    batch_size: int = 384
    epochs: int = 5
    learning_rate: float = 1e-3
    seed: int = 7
    stop_gradient: bool = True
    icl_mode: str = "standard"
    variant: str = "full"

    def validate(self) -> None:
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.icl_mode not in ICL_MODES:
            raise ConfigError(f"unknown icl mode {self.icl_mode!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def force_full_transfer(self) -> bool:
        return self.variant == "no_icl"


@dataclass
class Dataset:
    """Training samples; `n` is the sample count the loss averages over."""

    examples: list[LabeledExample]

    @property
    def n(self) -> int:
        return len(self.examples)


@dataclass
class MetricsReport:
    variant: str
    seed: int
    auc: float
    logloss: float
    loss_target_ce: float
    loss_source_ce: float
    loss_icl_l1: float
    converged: bool
    ctcvr_proxy: float | None = None
    nfr_proxy: float | None = None
    trajectory: list[dict] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"variant: {self.variant}",
            f"seed: {self.seed}",
            f"auc: {self.auc:.6f}",
            f"logloss: {self.logloss:.6f}",
            f"loss_target_ce: {self.loss_target_ce:.6f}",
            f"loss_source_ce: {self.loss_source_ce:.6f}",
            f"loss_icl_l1: {self.loss_icl_l1:.6f}",
            f"converged: {str(self.converged).lower()}",
        ]
        if self.ctcvr_proxy is not None:
            lines.append(f"ctcvr_proxy: {self.ctcvr_proxy:.6f}")
        if self.nfr_proxy is not None:
            lines.append(f"nfr_proxy: {self.nfr_proxy:.6f}")
        for row in self.trajectory:
            lines.append(f"epoch_{row['epoch']}_joint_loss: {row['joint']:.6f}")
        return "\n".join(lines) + "\n"

    def to_row(self) -> dict:
        row = {
            "variant": self.variant, "seed": self.seed,
            "auc": self.auc, "logloss": self.logloss,
            "loss_target_ce": self.loss_target_ce,
            "loss_source_ce": self.loss_source_ce,
            "loss_icl_l1": self.loss_icl_l1,
            "converged": self.converged,
            "ctcvr_proxy": self.ctcvr_proxy, "nfr_proxy": self.nfr_proxy,
        }
        return row


def joint_loss(tape, state: ForwardState, y_t: np.ndarray, y_s: np.ndarray,
               y_icl: np.ndarray, config: TrainConfig) -> tuple[Tensor, dict[str, float]]:
    """Weighted three-term loss plus its unweighted per-term breakdown."""
    config.validate()
    ce_t = T.cross_entropy(tape, state.p_target, y_t)
    ce_s = T.cross_entropy(tape, state.p_source, y_s)
    p_whole = combine(tape, state.p_target, state.p_source, state.p_trans,
                      use_stop_gradient=config.stop_gradient)
    icl = T.l1_loss(tape, p_whole, y_icl)
    total = T.add(tape, T.scale(tape, ce_t, config.lambda1),
                  T.add(tape, T.scale(tape, ce_s, config.lambda2),
                        T.scale(tape, icl, config.lambda3)))
    breakdown = {
        "target_ce": float(ce_t.data), "source_ce": float(ce_s.data),
        "icl_l1": float(icl.data),
    }
    return total, breakdown


def _slice_ids(ids: dict[str, np.ndarray], idx: np.ndarray) -> dict[str, np.ndarray]:
    return {name: arr[idx] for name, arr in ids.items()}


def fit(train: Dataset, config: TrainConfig, params: dict[str, Tensor],
        model_config: ModelConfig) -> list[dict]:
    """Mini-batch Adam training; returns the per-epoch loss trajectory.

    Deterministic in the seed. Aborts with a diagnostic naming the diverged
    term if any loss component goes non-finite.
    """
    config.validate()
    enc = encode_examples(train.examples, model_config)
    rng = np.random.default_rng(config.seed)
    adam = T.init_adam(params, lr=config.learning_rate)
    trajectory: list[dict] = []
    n = train.n
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = {"joint": 0.0, "target_ce": 0.0, "source_ce": 0.0, "icl_l1": 0.0}
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            tape = Tape()
            try:
                state = forward(tape, _slice_ids(enc["ids"], idx), params, model_config,
                                force_full_transfer=config.force_full_transfer)
                total, breakdown = joint_loss(tape, state, enc["y_t"][idx], enc["y_s"][idx],
                                              enc["y_icl"][idx], config)
            except FloatingPointError as exc:
                raise RuntimeError(
                    f"training diverged at epoch {epoch + 1}, sample offset {start}: {exc}") from exc
            for name, value in breakdown.items():
                if not np.isfinite(value):
                    raise RuntimeError(
                        f"loss term {name} diverged (non-finite) at epoch {epoch + 1}, sample offset {start}")
                sums[name] += value * idx.size
            sums["joint"] += float(total.data) * idx.size
            for p in params.values():
                p.zero_grad()
            T.backward(tape, total)
            T.adam_step(params, {name: p.grad for name, p in params.items()}, adam)
        trajectory.append({"epoch": epoch + 1, **{k: v / n for k, v in sums.items()}})
    return trajectory


def detect_non_convergence(trajectory: list[dict], patience: int = 3,
                           min_delta: float = 1e-4) -> bool:
    """True when the joint loss failed to improve on its best value by at
    least `min_delta` for `patience` consecutive epochs."""
    if not trajectory:
        return False
    best = trajectory[0]["joint"]
    streak = 0
    for row in trajectory[1:]:
        if row["joint"] < best - min_delta:
            streak = 0
        else:
            streak += 1
            if streak >= patience:
                return True
        best = min(best, row["joint"])
    return False


def predict_dataset(examples: list[LabeledExample], params: dict[str, Tensor],
                    model_config: ModelConfig, force_full_transfer: bool = False,
                    chunk: int = 8192) -> Prediction:
    """Evaluation-mode predictions over a full example list, chunked."""
    enc = encode_examples(examples, model_config)
    parts = []
    for start in range(0, len(examples), chunk):
        idx = np.arange(start, min(start + chunk, len(examples)))
        parts.append(predict(_slice_ids(enc["ids"], idx), params, model_config,
                             force_full_transfer=force_full_transfer))
    return Prediction(*(np.concatenate([getattr(p, f) for p in parts])
                        for f in ("p_target", "p_source", "p_trans", "p_whole", "p_whole_clamped")))


def serving_scores(pred: Prediction, variant: str = "full") -> np.ndarray:
    """The single serving truth per variant: clamped whole-interest score,
    or the bare target tower for the single-domain baseline."""
    if variant == "single_domain_dnn":
        return pred.p_target
    return pred.p_whole_clamped


def offline_metrics(pred: Prediction, y_t: np.ndarray, variant: str = "full") -> tuple[float, float]:
    scores = serving_scores(pred, variant)
    return auc(scores, y_t), logloss(scores, y_t)


@dataclass
class RequestPanel:
    """A fixed set of simulated requests crossed with a candidate catalog."""

    ids: dict[str, np.ndarray]  # model inputs, length n_requests * n_items
    n_requests: int
    n_items: int
    segments: np.ndarray       # [n_requests]
    hour_buckets_: np.ndarray  # [n_requests]
    weekday_flags: np.ndarray  # [n_requests]
    item_cats: np.ndarray      # [n_items]


def build_request_panel(records, n_requests: int, hour_buckets: int,
                        seed: int) -> RequestPanel:
    """Sample request contexts from a log and cross them with its items."""
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(records), n_requests)
    items: dict[int, tuple] = {}
    for r in records:
        items.setdefault(r.item_id, (r.item_id, r.cat1, r.cat2, r.cat3, r.business))
    catalog = [items[k] for k in sorted(items)]
    n_items = len(catalog)
    item_arr = np.array(catalog, dtype=np.int64)  # columns: item_id, cat1, cat2, cat3, business

    req = [records[int(k)] for k in picks]
    ids: dict[str, np.ndarray] = {}
    for name in ("user_id", "age", "gender", "occupation", "hour", "weekday", "page", "conn"):
        ids[name] = np.repeat(np.array([getattr(r, name) for r in req], dtype=np.int64), n_items)
    for col, name in enumerate(("item_id", "cat1", "cat2", "cat3", "business")):
        ids[name] = np.tile(item_arr[:, col], n_requests)
    return RequestPanel(
        ids=ids, n_requests=n_requests, n_items=n_items,
        segments=np.array([r.occupation for r in req], dtype=np.int64),
        hour_buckets_=np.array([hour_bucket(r.hour, hour_buckets) for r in req], dtype=np.int64),
        weekday_flags=np.array([int(weekday_flag(r.weekday)) for r in req], dtype=np.int64),
        item_cats=item_arr[:, 1],
    )


def _panel_cells(panel: RequestPanel, truth: GroundTruth) -> np.ndarray:
    """True target purchase probability for every (request, item) pair."""
    seg = panel.segments[:, None]
    hb = panel.hour_buckets_[:, None]
    wf = panel.weekday_flags[:, None]
    cat = panel.item_cats[None, :]
    return truth.p_target[seg, cat, hb, wf]


def oracle_scores(panel: RequestPanel, truth: GroundTruth) -> np.ndarray:
    """Rank-by-true-probability policy; upper-bounds the CTCVR proxy."""
    return _panel_cells(panel, truth)


def simulate_exposure(scores: np.ndarray, panel: RequestPanel,
                      truth: GroundTruth | None, k: int = 10,
                      nfr_threshold: float = 0.01,
                      neg_tau: float = 0.05) -> tuple[float, float]:
    """Expose the top-k candidates per request and score them against truth.

    CTCVR proxy: mean true target purchase probability of exposed items.
    NFR proxy: fraction of exposures that put a low-transferability item
    (tau <= neg_tau) in front of a user whose true interest in it is below
    `nfr_threshold`. Deterministic given scores; ties break on item index.
    """
    if truth is None:
        raise GroundTruthRequiredError(
            "exposure simulation requires synthetic ground truth; not supported on real logs")
    s = np.asarray(scores, dtype=np.float64).reshape(panel.n_requests, panel.n_items)
    k = min(k, panel.n_items)
    top = np.argsort(-s, axis=1, kind="stable")[:, :k]
    cells = _panel_cells(panel, truth)
    exposed_p = np.take_along_axis(cells, top, axis=1)
    tau = np.array([truth.tau[int(c)] for c in panel.item_cats])
    exposed_neg = tau[top] <= neg_tau
    nfr_events = exposed_neg & (exposed_p < nfr_threshold)
    return float(exposed_p.mean()), float(nfr_events.mean())


def append_ledger(path, row: dict) -> None:
    """Append one JSON line; a single O_APPEND write keeps rows intact."""
    data = (json.dumps(row, sort_keys=True) + "\n").encode("utf-8")
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
    try:
        os.write(fd, data)
    finally:
        os.close(fd)
