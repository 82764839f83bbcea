"""Reference implementation of gated cross-attention fusion.

Instance queries attend over multi-scale anatomy tokens and the attended
context is added back through a sigmoid gate:

    context = softmax((Q Wq)(T Wk)^T / sqrt(d)) (T Wv)
    gate    = sigmoid(context Wg + bg)
    output  = Q + gate * context

The anatomy encoder is a pixel-wise linear projection of tissue-class
logits followed by repeated 2x2 average pooling. Everything is plain
float64 numpy with hand-derived gradients, verified against central
finite differences; this is a correctness reference, not a training
component.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

PARAM_BLOCKS = (
    "queries",
    "gate_weight",
    "gate_bias",
    "query_proj",
    "key_proj",
    "value_proj",
    "anatomy_proj",
)


def _as_float64(name: str, value: Any, ndim: int) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FusionParams:
    """Parameter blocks, all float64 and read-only after construction."""

    query_proj: np.ndarray   # (d, d)
    key_proj: np.ndarray     # (d, d)
    value_proj: np.ndarray   # (d, d)
    gate_weight: np.ndarray  # (d, d)
    gate_bias: np.ndarray    # (d,)
    anatomy_proj: np.ndarray  # (n_tissue_classes, d)

    def __post_init__(self) -> None:
        for name in ("query_proj", "key_proj", "value_proj", "gate_weight"):
            object.__setattr__(self, name, _as_float64(name, getattr(self, name), 2))
        object.__setattr__(self, "gate_bias", _as_float64("gate_bias", self.gate_bias, 1))
        object.__setattr__(
            self, "anatomy_proj", _as_float64("anatomy_proj", self.anatomy_proj, 2)
        )
        d = self.query_proj.shape[1]
        for name in ("query_proj", "key_proj", "value_proj", "gate_weight"):
            if getattr(self, name).shape != (d, d):
                raise ValueError(
                    f"{name} must be ({d}, {d}), got {getattr(self, name).shape}"
                )
        if self.gate_bias.shape != (d,):
            raise ValueError(f"gate_bias must be ({d},), got {self.gate_bias.shape}")
        if self.anatomy_proj.shape[1] != d:
            raise ValueError(
                f"anatomy_proj must have {d} output channels, "
                f"got {self.anatomy_proj.shape}"
            )

    @property
    def d(self) -> int:
        return self.query_proj.shape[1]

    @classmethod
    def random(cls, d: int, n_tissue_classes: int, rng: np.random.Generator) -> "FusionParams":
        return cls(
            query_proj=rng.standard_normal((d, d)),
            key_proj=rng.standard_normal((d, d)),
            value_proj=rng.standard_normal((d, d)),
            gate_weight=rng.standard_normal((d, d)),
            gate_bias=rng.standard_normal(d),
            anatomy_proj=rng.standard_normal((n_tissue_classes, d)),
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def encode_anatomy(
    logits: np.ndarray, projection: np.ndarray, levels: int
) -> list[np.ndarray]:
    """Project (h, w, c) tissue logits pixel-wise, then build a pyramid of
    2x2 average-pooled levels. Odd trailing rows/columns are dropped."""
    logits = np.asarray(logits, dtype=np.float64)
    projection = np.asarray(projection, dtype=np.float64)
    if logits.ndim != 3:
        raise ValueError(f"logits must be (h, w, c), got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise ValueError("logits contain non-finite entries")
    if projection.ndim != 2 or projection.shape[0] != logits.shape[2]:
        raise ValueError(
            f"projection {projection.shape} does not accept "
            f"{logits.shape[2]} input channels"
        )
    if levels < 1:
        raise ValueError("levels must be at least 1")
    h, w = logits.shape[:2]
    min_extent = 1 << (levels - 1)
    if h < min_extent or w < min_extent:
        raise ValueError(
            f"spatial extent {h}x{w} too small for {levels} levels "
            f"(needs at least {min_extent})"
        )
    level = logits @ projection
    pyramid = [level]
    for _ in range(levels - 1):
        lh, lw = level.shape[0] // 2, level.shape[1] // 2
        cropped = level[: lh * 2, : lw * 2]
        level = cropped.reshape(lh, 2, lw, 2, -1).mean(axis=(1, 3))
        pyramid.append(level)
    return pyramid


def _flatten_levels(features: list[np.ndarray]) -> np.ndarray:
    """Row-major flatten of every level, concatenated into one token matrix."""
    d = features[0].shape[-1]
    return np.concatenate([lvl.reshape(-1, d) for lvl in features], axis=0)


def attention(
    queries: np.ndarray,
    features: list[np.ndarray],
    params: FusionParams,
    return_weights: bool = False,
):
    """Scaled dot-product cross-attention of queries over anatomy tokens."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != params.d:
        raise ValueError(
            f"queries must be (n, {params.d}), got shape {queries.shape}"
        )
    tokens = _flatten_levels(features)
    if tokens.shape[1] != params.d:
        raise ValueError(
            f"feature channels {tokens.shape[1]} do not match d={params.d}"
        )
    q_proj = queries @ params.query_proj
    keys = tokens @ params.key_proj
    values = tokens @ params.value_proj
    scores = (q_proj @ keys.T) / np.sqrt(params.d)
    scores = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(scores)
    weights = exp / exp.sum(axis=1, keepdims=True)
    context = weights @ values
    if return_weights:
        return context, weights
    return context


def gated_fusion(
    queries: np.ndarray,
    context: np.ndarray,
    gate_weight: np.ndarray,
    gate_bias: np.ndarray,
) -> np.ndarray:
    """Residual update gated per query and channel by a sigmoid."""
    queries = np.asarray(queries, dtype=np.float64)
    context = np.asarray(context, dtype=np.float64)
    if queries.shape != context.shape:
        raise ValueError(
            f"queries {queries.shape} and context {context.shape} differ"
        )
    gate = _sigmoid(context @ np.asarray(gate_weight, dtype=np.float64)
                    + np.asarray(gate_bias, dtype=np.float64))
    return queries + gate * context


def fusion_forward(
    queries: np.ndarray,
    logits: np.ndarray,
    params: FusionParams,
    levels: int,
) -> np.ndarray:
    """Pure composition: encode, attend, gate."""
    features = encode_anatomy(logits, params.anatomy_proj, levels)
    context = attention(queries, features, params)
    return gated_fusion(queries, context, params.gate_weight, params.gate_bias)


def loss_and_gradients(
    params: FusionParams,
    queries: np.ndarray,
    logits: np.ndarray,
    levels: int,
) -> tuple[float, dict[str, np.ndarray]]:
    """Scalar loss sum(output^2) with hand-derived gradients for every
    parameter block (and the queries)."""
    queries = np.asarray(queries, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)

    # forward, keeping intermediates
    features = encode_anatomy(logits, params.anatomy_proj, levels)
    tokens = _flatten_levels(features)
    q_proj = queries @ params.query_proj
    keys = tokens @ params.key_proj
    values = tokens @ params.value_proj
    scale = 1.0 / np.sqrt(params.d)
    scores = (q_proj @ keys.T) * scale
    scores = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(scores)
    weights = exp / exp.sum(axis=1, keepdims=True)
    context = weights @ values
    pre_gate = context @ params.gate_weight + params.gate_bias
    gate = _sigmoid(pre_gate)
    output = queries + gate * context

    loss = float((output * output).sum())

    # backward
    d_output = 2.0 * output
    d_pre_gate = (d_output * context) * gate * (1.0 - gate)
    d_gate_weight = context.T @ d_pre_gate
    d_gate_bias = d_pre_gate.sum(axis=0)
    d_context = d_output * gate + d_pre_gate @ params.gate_weight.T

    d_weights = d_context @ values.T
    d_values = weights.T @ d_context
    # softmax rows: dS = W * (dW - sum(dW * W, rows))
    row_dot = (d_weights * weights).sum(axis=1, keepdims=True)
    d_scores = weights * (d_weights - row_dot)
    d_q_proj = (d_scores @ keys) * scale
    d_keys = (d_scores.T @ q_proj) * scale

    d_queries = d_output + d_q_proj @ params.query_proj.T
    d_query_proj = queries.T @ d_q_proj
    d_key_proj = tokens.T @ d_keys
    d_value_proj = tokens.T @ d_values
    d_tokens = d_keys @ params.key_proj.T + d_values @ params.value_proj.T

    # un-flatten token gradients into per-level maps
    level_grads = []
    offset = 0
    for lvl in features:
        size = lvl.shape[0] * lvl.shape[1]
        level_grads.append(
            d_tokens[offset:offset + size].reshape(lvl.shape)
        )
        offset += size
    # pooling backward: each pooled cell spreads its gradient over its
    # 2x2 source block; cropped rows/columns receive nothing
    for lvl in range(len(features) - 1, 0, -1):
        g = level_grads[lvl]
        up = np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) / 4.0
        target = level_grads[lvl - 1]
        patched = target.copy()
        patched[: up.shape[0], : up.shape[1]] += up
        level_grads[lvl - 1] = patched
    d_level0 = level_grads[0]
    c_in = logits.shape[2]
    d_anatomy_proj = logits.reshape(-1, c_in).T @ d_level0.reshape(-1, params.d)

    grads = {
        "queries": d_queries,
        "gate_weight": d_gate_weight,
        "gate_bias": d_gate_bias,
        "query_proj": d_query_proj,
        "key_proj": d_key_proj,
        "value_proj": d_value_proj,
        "anatomy_proj": d_anatomy_proj,
    }
    return loss, grads


@dataclass(frozen=True)
class GradCheckReport:
    step: float
    tolerance: float
    block_errors: dict[str, float]
    passed: bool

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "tolerance": self.tolerance,
            "block_errors": dict(self.block_errors),
            "passed": self.passed,
        }

    def render_text(self) -> str:
        lines = [
            f"{name}: max relative error {err:.3e}"
            for name, err in self.block_errors.items()
        ]
        lines.append(
            f"gradient check {'passed' if self.passed else 'FAILED'} "
            f"(step {self.step:g}, tolerance {self.tolerance:g})"
        )
        return "\n".join(lines)


def grad_check(
    params: FusionParams,
    queries: np.ndarray,
    logits: np.ndarray,
    levels: int,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    corrupt: str | None = None,
) -> GradCheckReport:
    """Compare analytic gradients to central finite differences.

    Per block the reported error is max|analytic - numeric| scaled by the
    largest gradient magnitude in the block. ``corrupt`` flips the sign of
    one analytic block, as a negative control of the check itself.
    """
    queries = np.asarray(queries, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    _, analytic = loss_and_gradients(params, queries, logits, levels)
    if corrupt is not None:
        if corrupt not in analytic:
            raise ValueError(f"unknown parameter block {corrupt!r}")
        analytic = dict(analytic)
        analytic[corrupt] = -analytic[corrupt]

    blocks: dict[str, np.ndarray] = {
        "queries": queries,
        "gate_weight": params.gate_weight,
        "gate_bias": params.gate_bias,
        "query_proj": params.query_proj,
        "key_proj": params.key_proj,
        "value_proj": params.value_proj,
        "anatomy_proj": params.anatomy_proj,
    }

    def loss_at(block_name: str, values: np.ndarray) -> float:
        mutable = {name: arr.copy() for name, arr in blocks.items()}
        mutable[block_name] = values
        trial = FusionParams(
            query_proj=mutable["query_proj"],
            key_proj=mutable["key_proj"],
            value_proj=mutable["value_proj"],
            gate_weight=mutable["gate_weight"],
            gate_bias=mutable["gate_bias"],
            anatomy_proj=mutable["anatomy_proj"],
        )
        loss, _ = loss_and_gradients(trial, mutable["queries"], logits, levels)
        return loss

    errors: dict[str, float] = {}
    for name, base in blocks.items():
        numeric = np.zeros_like(base)
        flat_numeric = numeric.reshape(-1)
        flat_base = base.reshape(-1)
        for idx in range(flat_base.size):
            bumped = flat_base.copy()
            bumped[idx] = flat_base[idx] + step
            up = loss_at(name, bumped.reshape(base.shape))
            bumped[idx] = flat_base[idx] - step
            down = loss_at(name, bumped.reshape(base.shape))
            flat_numeric[idx] = (up - down) / (2.0 * step)
        diff = float(np.abs(analytic[name] - numeric).max())
        denom = max(
            float(np.abs(analytic[name]).max()),
            float(np.abs(numeric).max()),
            1e-12,
        )
        errors[name] = diff / denom
    passed = all(err <= tolerance for err in errors.values())
    return GradCheckReport(
        step=step, tolerance=tolerance, block_errors=errors, passed=passed
    )
