"""The interest-transfer network.

Forward pipeline: shared field embeddings feed (a) a multi-gate
mixture-of-experts with one tower per domain, producing the target and
source interest probabilities, and (b) a scene selector that compresses the
full input, concatenates scene-feature embeddings, and emits the transfer
probability. The serving score is

    p_whole = p_target + p_source * p_trans, clamped to [0, 1].

By default the combination enters the training loss through stop-gradient
on both tower outputs, so the combination (L1) loss trains only the scene
selector; the towers are trained purely by their cross-entropy terms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ParseError
from .features import SCENE_FIELDS, FeatureField
from .labels import LabeledExample
from .tensor import Tape, Tensor

CHECKPOINT_FORMAT = "exit-model-v1"
TASKS = ("target", "source")


@dataclass
class ModelConfig:
    fields: list[FeatureField]
    scene_fields: tuple[str, ...] = SCENE_FIELDS
    embedding_dim: int = 8
    n_experts: int = 2
    expert_hidden: tuple[int, int] = (64, 32)
    tower_hidden: tuple[int, int] = (64, 32)
    ssn_compress: int = 32
    ssn_hidden: tuple[int, ...] = (64,)
    include_scene_in_ssn: bool = True

    def __post_init__(self) -> None:
        if self.embedding_dim < 1 or self.n_experts < 1:
            raise ValueError("embedding_dim and n_experts must be positive")
        names = {f.name for f in self.fields}
        unknown = [s for s in self.scene_fields if s not in names]
        if unknown:
            raise ValueError(f"scene fields not in field list: {unknown}")

    @property
    def input_width(self) -> int:
        return len(self.fields) * self.embedding_dim

    @property
    def scene_width(self) -> int:
        return len(self.scene_fields) * self.embedding_dim

    def group_fields(self, group: str) -> list[FeatureField]:
        return [f for f in self.fields if f.group == group]

    def to_dict(self) -> dict:
        return {
            "fields": [[f.name, f.vocab, f.group] for f in self.fields],
            "scene_fields": list(self.scene_fields),
            "embedding_dim": self.embedding_dim,
            "n_experts": self.n_experts,
            "expert_hidden": list(self.expert_hidden),
            "tower_hidden": list(self.tower_hidden),
            "ssn_compress": self.ssn_compress,
            "ssn_hidden": list(self.ssn_hidden),
            "include_scene_in_ssn": self.include_scene_in_ssn,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            fields=[FeatureField(n, int(v), g) for n, v, g in d["fields"]],
            scene_fields=tuple(d["scene_fields"]),
            embedding_dim=int(d["embedding_dim"]),
            n_experts=int(d["n_experts"]),
            expert_hidden=tuple(d["expert_hidden"]),
            tower_hidden=tuple(d["tower_hidden"]),
            ssn_compress=int(d["ssn_compress"]),
            ssn_hidden=tuple(d["ssn_hidden"]),
            include_scene_in_ssn=bool(d["include_scene_in_ssn"]),
        )


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


def _mlp_params(rng, params: dict, prefix: str, widths: list[int]) -> None:
    for k in range(len(widths) - 1):
        params[f"{prefix}.w{k}"] = _xavier(rng, widths[k], widths[k + 1])
        params[f"{prefix}.b{k}"] = Tensor(np.zeros(widths[k + 1]))
        params[f"{prefix}.slope{k}"] = Tensor(np.full(widths[k + 1], 0.25))


def init_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Fresh parameter store; deterministic in the seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for f in config.fields:
        params[f"emb.{f.name}"] = Tensor(rng.uniform(-0.01, 0.01, size=(f.vocab, config.embedding_dim)))
    vw = config.input_width
    for k in range(config.n_experts):
        _mlp_params(rng, params, f"expert{k}", [vw, *config.expert_hidden])
    for task in TASKS:
        params[f"gate.{task}.w"] = _xavier(rng, vw, config.n_experts)
        params[f"gate.{task}.b"] = Tensor(np.zeros(config.n_experts))
        _mlp_params(rng, params, f"tower.{task}", [config.expert_hidden[-1], *config.tower_hidden])
        params[f"out.{task}.w"] = _xavier(rng, config.tower_hidden[-1], 1)
        params[f"out.{task}.b"] = Tensor(np.zeros(1))
    params["ssn.compress.w"] = _xavier(rng, vw, config.ssn_compress)
    params["ssn.compress.b"] = Tensor(np.zeros(config.ssn_compress))
    ssn_in = config.ssn_compress + (config.scene_width if config.include_scene_in_ssn else 0)
    _mlp_params(rng, params, "ssn.mlp", [ssn_in, *config.ssn_hidden])
    params["ssn.out.w"] = _xavier(rng, config.ssn_hidden[-1], 1)
    params["ssn.out.b"] = Tensor(np.zeros(1))
    return params


def ipn_param_names(params: dict[str, Tensor]) -> list[str]:
    """Expert, gate, and tower parameters (the interest prediction network)."""
    return [n for n in params if n.startswith(("expert", "gate.", "tower.", "out."))]


def ssn_param_names(params: dict[str, Tensor]) -> list[str]:
    return [n for n in params if n.startswith("ssn.")]


def encode_examples(examples: list[LabeledExample], config: ModelConfig) -> dict[str, np.ndarray]:
    """Columnar batch arrays: one int id array per field plus label columns."""
    n = len(examples)
    ids = {f.name: np.empty(n, dtype=np.int64) for f in config.fields}
    y_t = np.empty((n, 1))
    y_s = np.empty((n, 1))
    y_icl = np.empty((n, 1))
    order = [f.name for f in config.fields]
    for k, ex in enumerate(examples):
        for name, value in zip(order, ex.features):
            ids[name][k] = value
        y_t[k, 0] = ex.y_t
        y_s[k, 0] = ex.y_s
        y_icl[k, 0] = ex.y_icl
    return {"ids": ids, "y_t": y_t, "y_s": y_s, "y_icl": y_icl}


@dataclass
class ForwardState:
    """Intermediate tensors of one forward pass (kept for the loss)."""

    e_user: Tensor
    e_item: Tensor
    e_context: Tensor
    v: Tensor
    p_target: Tensor
    p_source: Tensor
    p_trans: Tensor


@dataclass
class Prediction:
    """Per-sample score decomposition plus the derived serving score."""

    p_target: np.ndarray
    p_source: np.ndarray
    p_trans: np.ndarray
    p_whole: np.ndarray
    p_whole_clamped: np.ndarray


def _mlp_forward(tape, params, prefix: str, x: Tensor, n_layers: int) -> Tensor:
    h = x
    for k in range(n_layers):
        h = T.prelu(tape, T.affine(tape, h, params[f"{prefix}.w{k}"], params[f"{prefix}.b{k}"]),
                    params[f"{prefix}.slope{k}"])
    return h


def embed(tape, ids: dict[str, np.ndarray], params: dict[str, Tensor],
          config: ModelConfig) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Field embeddings grouped user / item / context, concatenated into v."""
    groups = []
    for group in ("user", "item", "context"):
        parts = [T.embedding_lookup(tape, params[f"emb.{f.name}"], ids[f.name])
                 for f in config.group_fields(group)]
        groups.append(T.concat(tape, parts))
    e_user, e_item, e_context = groups
    v = T.concat(tape, [e_user, e_item, e_context])
    return e_user, e_item, e_context, v


def ipn_forward(tape, v: Tensor, params: dict[str, Tensor],
                config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Shared experts, per-task softmax gates, per-task towers."""
    experts = [_mlp_forward(tape, params, f"expert{k}", v, len(config.expert_hidden))
               for k in range(config.n_experts)]
    outs = []
    for task in TASKS:
        gate = T.softmax(tape, T.affine(tape, v, params[f"gate.{task}.w"], params[f"gate.{task}.b"]))
        mix = T.gate_mixture(tape, gate, experts)
        h = _mlp_forward(tape, params, f"tower.{task}", mix, len(config.tower_hidden))
        logit = T.affine(tape, h, params[f"out.{task}.w"], params[f"out.{task}.b"])
        outs.append(T.sigmoid(tape, logit))
    return outs[0], outs[1]


def ssn_forward(tape, e_user: Tensor, e_item: Tensor, e_context: Tensor,
                scene_ids: dict[str, np.ndarray], params: dict[str, Tensor],
                config: ModelConfig) -> Tensor:
    """Compress the full input, join scene embeddings, emit p_trans."""
    e_hid = T.affine(tape, T.concat(tape, [e_user, e_item, e_context]),
                     params["ssn.compress.w"], params["ssn.compress.b"])
    if config.include_scene_in_ssn:
        scene_parts = [T.embedding_lookup(tape, params[f"emb.{name}"], scene_ids[name])
                       for name in config.scene_fields]
        ssn_in = T.concat(tape, [e_hid] + scene_parts)
    else:
        ssn_in = e_hid
    h = _mlp_forward(tape, params, "ssn.mlp", ssn_in, len(config.ssn_hidden))
    return T.sigmoid(tape, T.affine(tape, h, params["ssn.out.w"], params["ssn.out.b"]))


def combine(tape, p_target: Tensor, p_source: Tensor, p_trans: Tensor,
            use_stop_gradient: bool = True) -> Tensor:
    """p_whole = p_target + p_source * p_trans.

    With stop-gradient (default) the tower outputs enter as constants, so a
    loss on p_whole reaches only the scene selector.
    """
    a = T.stop_gradient(p_target) if use_stop_gradient else p_target
    b = T.stop_gradient(p_source) if use_stop_gradient else p_source
    return T.add(tape, a, T.mul(tape, b, p_trans))


def clamp_serving(p_whole: np.ndarray) -> np.ndarray:
    """Serving truncation min(1, p_whole); idempotent."""
    p = np.asarray(p_whole, dtype=np.float64)
    if (p < 0).any():
        raise ValueError("serving clamp expects nonnegative scores")
    return np.minimum(1.0, p)


def forward(tape, ids: dict[str, np.ndarray], params: dict[str, Tensor],
            config: ModelConfig, force_full_transfer: bool = False) -> ForwardState:
    """Full pipeline. `force_full_transfer` pins p_trans to 1 (indiscriminate
    transfer, used by the no-combination-label ablation)."""
    e_user, e_item, e_context, v = embed(tape, ids, params, config)
    p_target, p_source = ipn_forward(tape, v, params, config)
    if force_full_transfer:
        p_trans = Tensor(np.ones_like(p_target.data))
    else:
        p_trans = ssn_forward(tape, e_user, e_item, e_context, ids, params, config)
    return ForwardState(e_user, e_item, e_context, v, p_target, p_source, p_trans)


def predict(ids: dict[str, np.ndarray], params: dict[str, Tensor], config: ModelConfig,
            force_full_transfer: bool = False) -> Prediction:
    """Evaluation-mode scores (no tape) with the serving clamp applied."""
    state = forward(None, ids, params, config, force_full_transfer)
    pt = state.p_target.data[:, 0]
    ps = state.p_source.data[:, 0]
    ptr = state.p_trans.data[:, 0]
    p_whole = pt + ps * ptr
    return Prediction(pt, ps, ptr, p_whole, clamp_serving(p_whole))


def save_checkpoint(path, config: ModelConfig, params: dict[str, Tensor]) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "params": {
            name: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
            for name, p in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, Tensor]]:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    config = ModelConfig.from_dict(payload["config"])
    params = {
        name: Tensor(np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"]))
        for name, entry in payload["params"].items()
    }
    return config, params
