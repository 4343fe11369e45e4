"""Permutation-invariant pooling over the frame axis of a feature stack.

A stack is a Tensor shaped [n, c, h, w] (one set) or [b, n, c, h, w]
(a batch of equally-sized sets); every strategy reduces the n axis and is
invariant to its ordering. Strategy names double as config values:

    max | mean | median | joint_sum | joint_conv | pixel_attention
    | frame_attention

joint_conv, pixel_attention and frame_attention carry learned weights per
use site; `pool_param_shapes` reports what to allocate.
"""

from __future__ import annotations

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import conv2d, log_softmax
from .tensor import sigmoid

STRATEGIES = (
    "max",
    "mean",
    "median",
    "joint_sum",
    "joint_conv",
    "pixel_attention",
    "frame_attention",
)

_SET_AXIS = -4


def _check(stack):
    stack = T.astensor(stack)
    if stack.ndim not in (4, 5):
        raise DimensionError(f"stack must be 4-d or 5-d, got {stack.ndim}-d")
    if stack.shape[_SET_AXIS] < 1:
        raise DimensionError("empty frame stack")
    return stack


def _stats(stack):
    """(max, mean, median) over the set axis, each [..., c, h, w]."""
    return (
        T.amax(stack, axis=_SET_AXIS),
        T.tmean(stack, axis=_SET_AXIS),
        T.median_low(stack, axis=_SET_AXIS),
    )


def pool_stat(stack, strategy):
    stack = _check(stack)
    if strategy == "max":
        return T.amax(stack, axis=_SET_AXIS)
    if strategy == "mean":
        return T.tmean(stack, axis=_SET_AXIS)
    if strategy == "median":
        return T.median_low(stack, axis=_SET_AXIS)
    if strategy == "joint_sum":
        mx, mean, med = _stats(stack)
        return mx + mean + med
    raise ConfigError(f"unknown statistical pooling strategy {strategy!r}")


def _conv1x1(x, weight, bias):
    """1x1 conv on [..., c, h, w], folding any leading axes into the batch."""
    lead = x.shape[:-3]
    folded = T.reshape(x, (-1,) + x.shape[-3:])
    out = conv2d(folded, weight, bias)
    return T.reshape(out, lead + out.shape[-3:])


def pool_joint_conv(stack, weight, bias=None):
    """Concat (max, mean, median) on channels, then a learned 1x1 conv."""
    stack = _check(stack)
    c = stack.shape[-3]
    if weight.shape[:2] != (c, 3 * c):
        raise DimensionError(
            f"joint_conv weight must map {3 * c}->{c} channels, got {weight.shape}"
        )
    joined = T.concat(_stats(stack), axis=-3)
    return _conv1x1(joined, weight, bias)


def pool_pixel_attention(stack, weight, bias=None):
    """Gate each frame by an attention map computed from global statistics.

    g = concat of the three statistics; per frame j the map
    sigmoid(conv1x1(concat(g, v_j))) gates v_j with a residual skip, and the
    refined frames are max-reduced.
    """
    stack = _check(stack)
    squeeze = stack.ndim == 4
    if squeeze:
        stack = T.reshape(stack, (1,) + stack.shape)
    b, n, c, h, w = stack.shape
    if weight.shape[:2] != (c, 4 * c):
        raise DimensionError(
            f"pixel_attention weight must map {4 * c}->{c} channels, got {weight.shape}"
        )
    glob = T.concat(_stats(stack), axis=-3)  # [b, 3c, h, w]
    glob = T.broadcast_to(T.reshape(glob, (b, 1, 3 * c, h, w)), (b, n, 3 * c, h, w))
    gate_in = T.concat([glob, stack], axis=-3)  # [b, n, 4c, h, w]
    gate = sigmoid(_conv1x1(gate_in, weight, bias))
    refined = stack + stack * gate
    out = T.amax(refined, axis=_SET_AXIS)
    return T.reshape(out, (c, h, w)) if squeeze else out


def pool_frame_attention(stack, weight, bias=None):
    """Softmax-weighted sum of frames, scored from their global-max vectors."""
    stack = _check(stack)
    squeeze = stack.ndim == 4
    if squeeze:
        stack = T.reshape(stack, (1,) + stack.shape)
    b, n, c, h, w = stack.shape
    compressed = T.amax(T.reshape(stack, (b, n, c, h * w)), axis=-1)  # [b, n, c]
    scores = T.matmul(compressed, T.transpose(weight, (1, 0)))  # [b, n, 1]
    if bias is not None:
        scores = scores + bias
    scores = T.reshape(scores, (b, n))
    weights = T.exp(log_softmax(scores, axis=-1))
    out = T.tsum(T.reshape(weights, (b, n, 1, 1, 1)) * stack, axis=_SET_AXIS)
    return T.reshape(out, (c, h, w)) if squeeze else out


def pool_param_shapes(strategy, channels):
    """Learned-parameter shapes a strategy needs at a site with `channels` maps."""
    if strategy == "joint_conv":
        return {"weight": (channels, 3 * channels, 1, 1), "bias": (channels,)}
    if strategy == "pixel_attention":
        return {"weight": (channels, 4 * channels, 1, 1), "bias": (channels,)}
    if strategy == "frame_attention":
        return {"weight": (1, channels), "bias": (1,)}
    return {}


def apply_pool(strategy, stack, weight=None, bias=None):
    """Dispatch a strategy by config name."""
    if strategy in ("max", "mean", "median", "joint_sum"):
        return pool_stat(stack, strategy)
    if strategy == "joint_conv":
        return pool_joint_conv(stack, weight, bias)
    if strategy == "pixel_attention":
        return pool_pixel_attention(stack, weight, bias)
    if strategy == "frame_attention":
        return pool_frame_attention(stack, weight, bias)
    raise ConfigError(f"unknown set pooling strategy {strategy!r}")
