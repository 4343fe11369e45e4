"""Layer primitives on top of the tensor engine.

conv2d uses im2col + one BLAS matmul; its backward scatters through the
same column layout. maxpool2d is fixed to the 2x2/stride-2 window the
backbone uses. All ops carry analytic vector-Jacobian products that the
finite-difference checker in this module validates.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, _make, astensor, no_grad, precision


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _im2col(x, kh, kw, sh, sw, oh, ow):
    """Patch matrix [n, c*kh*kw, oh*ow] of x[n,c,h,w] (one contiguous copy)."""
    n, c, h, w = x.shape
    sn, sc, sh_, sw_ = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh_, sw_, sh * sh_, sw * sw_),
        writeable=False,
    )
    return windows.reshape(n, c * kh * kw, oh * ow)


def conv2d(x, weight, bias=None, padding=0, stride=1):
    """Cross-correlation of x[n,c_in,h,w] with weight[c_out,c_in,kh,kw]."""
    x, weight = astensor(x), astensor(weight)
    if bias is not None:
        bias = astensor(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and weight")
    n, c_in, h, w = x.shape
    c_out, c_w, kh, kw = weight.shape
    if c_in != c_w:
        raise DimensionError(f"conv2d channel mismatch: input {c_in}, weight {c_w}")
    ph, pw = _pair(padding)
    sh, sw = _pair(stride)
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise DimensionError("kernel larger than padded input")
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1

    if ph or pw:
        xp = np.zeros((n, c_in, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
        xp[:, :, ph:ph + h, pw:pw + w] = x.data
    else:
        xp = x.data

    if kh == 1 and kw == 1 and sh == 1 and sw == 1:
        cols = xp.reshape(n, c_in, oh * ow)
    else:
        cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    wmat = weight.data.reshape(c_out, -1)
    out = np.matmul(wmat, cols).reshape(n, c_out, oh, ow)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def vjp():
        padded_shape = xp.shape

        def back(g):
            go = g.reshape(n, c_out, oh * ow)
            gw = np.tensordot(go, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
            gcols = np.matmul(wmat.T, go)  # [n, c_in*kh*kw, L]
            gxp = np.zeros(padded_shape, dtype=g.dtype)
            gpatch = gcols.reshape(n, c_in, kh, kw, oh, ow)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gpatch[:, :, i, j]
            gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
            gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
            return (gx, gw) if bias is None else (gx, gw, gb)

        return back

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, vjp)


def maxpool2d(x):
    """2x2 max pooling with stride 2; h and w must be even.

    Gradient routes to the first maximal cell of each window (row-major
    within the window).
    """
    x = astensor(x)
    if x.ndim != 4:
        raise DimensionError("maxpool2d expects 4-d input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2d needs even spatial extents, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    out = win.max(axis=(3, 5))

    def vjp():
        # window cells flattened row-major so argmax picks the first tie
        flat = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        arg = np.argmax(flat, axis=-1)

        def back(g):
            gfull = np.zeros(flat.shape, dtype=g.dtype)
            np.put_along_axis(gfull, arg[..., None], g[..., None], axis=-1)
            gx = gfull.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            return (gx.reshape(n, c, h, w),)

        return back

    return _make(out, (x,), vjp)


def fully_connected(x, weight, bias=None):
    """Affine map rows of x[n,d_in] through weight[d_out,d_in]."""
    x, weight = astensor(x), astensor(weight)
    if x.shape[-1] != weight.shape[-1]:
        raise DimensionError(
            f"fully_connected inner dims disagree: {x.shape[-1]} vs {weight.shape[-1]}"
        )
    out = np.matmul(x.data, weight.data.T)
    if bias is not None:
        bias = astensor(bias)
        out = out + bias.data

    def vjp():
        def back(g):
            gx = np.matmul(g, weight.data)
            gw = np.tensordot(g, x.data, axes=(tuple(range(g.ndim - 1)),) * 2)
            if bias is None:
                return (gx, gw)
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
            return (gx, gw, gb)

        return back

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, vjp)


class RunningStats:
    """Mutable mean/variance buffers for batch norm (not differentiated)."""

    def __init__(self, dim, dtype=np.float32):
        self.mean = np.zeros(dim, dtype=dtype)
        self.var = np.ones(dim, dtype=dtype)


def batch_norm1d(x, gamma, beta, running, mode, eps=1e-5, momentum=0.1):
    """Normalize features of x[n,d]; train mode uses batch statistics."""
    x, gamma, beta = astensor(x), astensor(gamma), astensor(beta)
    n = x.shape[0]
    if mode == "train":
        if n < 2:
            raise ConfigError("batch_norm1d train mode needs a batch of at least 2")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        # in-place so aliased checkpoint buffers see the update
        running.mean *= 1 - momentum
        running.mean += momentum * mu
        running.var *= 1 - momentum
        running.var += momentum * var
    elif mode == "eval":
        mu = running.mean
        var = running.var
    else:
        raise ConfigError(f"unknown batch norm mode {mode!r}")
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * ivar
    out = gamma.data * xhat + beta.data

    def vjp():
        def back(g):
            ggamma = (g * xhat).sum(axis=0)
            gbeta = g.sum(axis=0)
            if mode == "eval":
                return (g * (gamma.data * ivar), ggamma, gbeta)
            gi = g * gamma.data
            gx = ivar / n * (n * gi - gi.sum(axis=0) - xhat * (gi * xhat).sum(axis=0))
            return (gx, ggamma, gbeta)

        return back

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), vjp)


def dropout(x, rate, mode, rng):
    """Zero each element with probability `rate` in train mode, rescale survivors."""
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = astensor(x)
    if mode == "eval" or rate == 0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = x.dtype.type(1.0 / (1.0 - rate))

    def vjp():
        return lambda g: (g * mask * scale,)

    return _make(x.data * mask * scale, (x,), vjp)


def log_softmax(x, axis=-1):
    x = astensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp():
        soft = np.exp(out)
        return lambda g: (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), vjp)


def pick_class(logp, labels):
    """Select logp[b, :, labels[b]] from [B,R,C] log-probabilities -> [B,R]."""
    logp = astensor(logp)
    b, r, _ = logp.shape
    bi = np.arange(b)[:, None]
    ri = np.arange(r)[None, :]
    li = np.asarray(labels)[:, None]

    def vjp():
        shape = logp.shape

        def back(g):
            out = np.zeros(shape, dtype=g.dtype)
            out[bi, ri, li] = g
            return (out,)

        return back

    return _make(logp.data[bi, ri, li], (logp,), vjp)


def xavier_uniform(shape, rng, dtype=np.float32):
    """Glorot-uniform init; fan sizes follow conv/linear conventions."""
    if len(shape) == 4:  # conv weight [out, in, kh, kw]
        receptive = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    elif len(shape) == 3:  # per-strip linear stack [strips, out, in]
        fan_in, fan_out = shape[2], shape[1]
    elif len(shape) == 2:  # linear weight [out, in]
        fan_in, fan_out = shape[1], shape[0]
    else:
        fan_in = fan_out = int(np.prod(shape))
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def grad_check(fn, inputs, step=1e-5, sample=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    `fn` maps the given tensors to a scalar Tensor. Runs in float64; pass
    float64 inputs. When `sample` is set, only that many elements per input
    are probed (chosen by `rng`), which keeps large graphs tractable.
    """
    arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
    inputs = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    with precision("float64"):
        loss = fn(*inputs)
        loss.backward()
        worst = 0.0
        for t in inputs:
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            idxs = range(flat.size)
            if sample is not None and flat.size > sample:
                if rng is None:
                    rng = np.random.default_rng(0)
                idxs = rng.choice(flat.size, size=sample, replace=False)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + step
                with no_grad():
                    hi = fn(*inputs).item()
                flat[i] = orig - step
                with no_grad():
                    lo = fn(*inputs).item()
                flat[i] = orig
                numeric = (hi - lo) / (2 * step)
                a = analytic.reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
                worst = max(worst, err)
    return worst
