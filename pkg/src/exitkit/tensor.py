"""Dense-tensor math with reverse-mode gradients and an Adam optimizer.

The design is a minimal tape machine: every differentiable op computes its
forward value with numpy, then appends a backward closure to a `Tape`.
`backward()` replays the tape in exact reverse execution order, accumulating
gradients into each tensor's `.grad` buffer. Calling `backward()` twice
without zeroing grads accumulates (sums) contributions; training code owns
resetting parameter grads between steps.

Passing `tape=None` to any op runs it in pure-forward mode (no recording),
which is how evaluation passes avoid autograd overhead.

All data is float64. Every op asserts its output is finite; a NaN/Inf is a
hard error rather than a silent poisoned value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLIP_EPS = 1e-7


class Tensor:
    """A dense row-major array with a gradient accumulator.

    Tensors are immutable-after-build except for parameter stores, which are
    mutated only by `adam_step` and confined to a single training owner.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        if not np.isfinite(self.data).all():
            raise ValueError("tensor initialized with non-finite values")
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Tape:
    """Ordered record of executed ops; replayed backward for gradients."""

    __slots__ = ("records",)

    def __init__(self) -> None:
        self.records: list = []

    def __len__(self) -> int:
        return len(self.records)


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    return arr


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(tape: Tape, root: Tensor) -> None:
    """Populate gradients of everything `root` depends on.

    `root` must be scalar (size 1). Parameters never touched by the tape
    keep `grad is None`, read as zero. Repeated calls accumulate.
    """
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    _accum(root, np.ones_like(root.data))
    for rec in reversed(tape.records):
        rec()


def stop_gradient(t: Tensor) -> Tensor:
    """Identity forward; blocks all gradient flow through this edge."""
    return Tensor(t.data)


def affine(tape: Tape | None, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """out[i,o] = sum_k x[i,k] w[k,o] + b[o]  (fully connected layer)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"affine shape mismatch: {x.data.shape} @ {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"affine bias shape {b.data.shape} != ({w.data.shape[1]},)")
    out = Tensor(_finite(x.data @ w.data + b.data, "affine"))
    if tape is not None:
        def _back() -> None:
            if out.grad is None:
                return
            _accum(x, out.grad @ w.data.T)
            _accum(w, x.data.T @ out.grad)
            _accum(b, out.grad.sum(axis=0))
        tape.records.append(_back)
    return out


def concat(tape: Tape | None, parts: list[Tensor]) -> Tensor:
    """Column-wise concatenation; parts must share the batch dimension."""
    if not parts:
        raise ValueError("concat of zero parts")
    batch = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != batch:
            raise ValueError("concat batch mismatch")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    if tape is not None:
        widths = [p.data.shape[1] for p in parts]
        def _back() -> None:
            if out.grad is None:
                return
            col = 0
            for p, w in zip(parts, widths):
                _accum(p, out.grad[:, col:col + w])
                col += w
        tape.records.append(_back)
    return out


def prelu(tape: Tape | None, x: Tensor, slope: Tensor) -> Tensor:
    """out = x if x > 0 else slope * x, slope broadcast over the last axis."""
    if slope.data.shape != (x.data.shape[-1],):
        raise ValueError(f"prelu slope shape {slope.data.shape} does not match last axis of {x.data.shape}")
    neg = x.data <= 0.0
    out = Tensor(_finite(np.where(neg, slope.data * x.data, x.data), "prelu"))
    if tape is not None:
        def _back() -> None:
            if out.grad is None:
                return
            _accum(x, np.where(neg, slope.data, 1.0) * out.grad)
            _accum(slope, np.sum(np.where(neg, x.data, 0.0) * out.grad, axis=tuple(range(x.data.ndim - 1))))
        tape.records.append(_back)
    return out


def sigmoid(tape: Tape | None, x: Tensor) -> Tensor:
    """Numerically stable logistic; outputs strictly inside (0,1)."""
    z = x.data
    out_data = np.empty_like(z)
    pos = z >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out_data[~pos] = ez / (1.0 + ez)
    out = Tensor(_finite(out_data, "sigmoid"))
    if tape is not None:
        def _back() -> None:
            if out.grad is None:
                return
            _accum(x, out.data * (1.0 - out.data) * out.grad)
        tape.records.append(_back)
    return out


def softmax(tape: Tape | None, x: Tensor) -> Tensor:
    """Row-wise softmax with max-shift; rows sum to 1."""
    if x.data.ndim != 2:
        raise ValueError("softmax expects a 2-d tensor")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(_finite(e / e.sum(axis=1, keepdims=True), "softmax"))
    if tape is not None:
        def _back() -> None:
            if out.grad is None:
                return
            dot = np.sum(out.grad * out.data, axis=1, keepdims=True)
            _accum(x, (out.grad - dot) * out.data)
        tape.records.append(_back)
    return out


def embedding_lookup(tape: Tape | None, table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table; gradients scatter-add back."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise IndexError(f"embedding id {bad} out of range [0, {vocab})")
    out = Tensor(table.data[ids])
    if tape is not None:
        def _back() -> None:
            if out.grad is None:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, out.grad)
        tape.records.append(_back)
    return out


def add(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(_finite(a.data + b.data, "add"))
    if tape is not None:
        def _back() -> None:
            if out.grad is None:
                return
            _accum(a, out.grad)
            _accum(b, out.grad)
        tape.records.append(_back)
    return out


def mul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(_finite(a.data * b.data, "mul"))
    if tape is not None:
        def _back() -> None:
            if out.grad is None:
                return
            _accum(a, b.data * out.grad)
            _accum(b, a.data * out.grad)
        tape.records.append(_back)
    return out


def scale(tape: Tape | None, a: Tensor, c: float) -> Tensor:
    out = Tensor(_finite(a.data * c, "scale"))
    if tape is not None:
        def _back() -> None:
            if out.grad is None:
                return
            _accum(a, c * out.grad)
        tape.records.append(_back)
    return out


def gate_mixture(tape: Tape | None, gates: Tensor, experts: list[Tensor]) -> Tensor:
    """out[b] = sum_k gates[b,k] * experts[k][b]; the MMoE mixing step."""
    if gates.data.ndim != 2 or gates.data.shape[1] != len(experts):
        raise ValueError(f"gate width {gates.data.shape} != expert count {len(experts)}")
    batch, width = experts[0].data.shape
    for e in experts:
        if e.data.shape != (batch, width):
            raise ValueError("experts must share shape")
    stacked = np.stack([e.data for e in experts], axis=1)  # B x K x D
    out = Tensor(_finite(np.einsum("bk,bkd->bd", gates.data, stacked), "gate_mixture"))
    if tape is not None:
        def _back() -> None:
            if out.grad is None:
                return
            _accum(gates, np.einsum("bd,bkd->bk", out.grad, stacked))
            for k, e in enumerate(experts):
                _accum(e, gates.data[:, k:k + 1] * out.grad)
        tape.records.append(_back)
    return out


def cross_entropy(tape: Tape | None, pred: Tensor, labels: np.ndarray) -> Tensor:
    """Batch-mean binary cross-entropy; predictions clipped to [eps, 1-eps]."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != pred.data.shape:
        raise ValueError(f"cross_entropy label shape {y.shape} != pred shape {pred.data.shape}")
    n = max(pred.data.size, 1)
    p = np.clip(pred.data, CLIP_EPS, 1.0 - CLIP_EPS)
    out = Tensor(_finite(np.sum(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))) / n, "cross_entropy"))
    if tape is not None:
        interior = (pred.data > CLIP_EPS) & (pred.data < 1.0 - CLIP_EPS)
        def _back() -> None:
            if out.grad is None:
                return
            g = (p - y) / (p * (1.0 - p)) / n
            _accum(pred, np.where(interior, g, 0.0) * out.grad)
        tape.records.append(_back)
    return out


def l1_loss(tape: Tape | None, pred: Tensor, target: np.ndarray) -> Tensor:
    """Batch-mean absolute error; subgradient 0 at exact ties."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ValueError(f"l1_loss target shape {t.shape} != pred shape {pred.data.shape}")
    n = max(pred.data.size, 1)
    diff = pred.data - t
    out = Tensor(np.sum(np.abs(diff)) / n)
    if tape is not None:
        def _back() -> None:
            if out.grad is None:
                return
            _accum(pred, np.sign(diff) / n * out.grad)
        tape.records.append(_back)
    return out


@dataclass
class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: dict[str, Tensor], lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Missing grads count as zero."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name} shape {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        _finite(p.data, "adam_step")
