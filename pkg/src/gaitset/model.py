"""The set-embedding network.

Per-frame backbone (three conv blocks), set pooling after every block, a
parallel global branch that re-processes the pooled maps with its own
conv weights, and two independent horizontal-pyramid heads whose strip
projections form the embedding matrix. A 64x44 silhouette becomes a 16x11
map after the backbone, so up to five pyramid scales divide its height.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import CompatibilityError, ConfigError, DimensionError
from .nn import conv2d, maxpool2d, xavier_uniform
from .tensor import leaky_relu
from .params import ParamStore
from .pooling import STRATEGIES, apply_pool, pool_param_shapes

INPUT_H, INPUT_W = 64, 44
_DTYPE_CODE = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_CODE_DTYPE = {0: np.float32, 1: np.float64}


@dataclass
class BackboneConfig:
    channels: tuple = (32, 64, 128)  # channels of block 1/2/3 (both convs of a block match)
    scales: int = 5
    strip_dim: int = 256
    set_pooling: str = "max"
    lrelu_slope: float = 0.01

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 3 or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be three positive ints, got {self.channels}")
        if self.scales < 1:
            raise ConfigError("scales must be >= 1")
        height = INPUT_H // 4  # two 2x2 pools
        if height % (2 ** (self.scales - 1)) != 0:
            raise ConfigError(
                f"backbone height {height} not divisible by 2^{self.scales - 1}; "
                f"scales must be <= {int(np.log2(height)) + 1}"
            )
        if self.strip_dim < 1:
            raise ConfigError("strip_dim must be >= 1")
        if self.set_pooling not in STRATEGIES:
            raise ConfigError(f"unknown set_pooling {self.set_pooling!r}")

    @property
    def strips_per_head(self):
        return 2 ** self.scales - 1

    @property
    def rows(self):
        return 2 * self.strips_per_head


class GaitSet:
    """Embeds an unordered silhouette set into a [rows, strip_dim] matrix."""

    def __init__(self, config, seed=0, dtype=np.float32, store=None):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = store if store is not None else ParamStore(seed)
        c1, c3, c5 = config.channels
        # (c_in, c_out, first kernel, pooled); the second conv is always 3x3
        self._block_plan = {
            "block1": (1, c1, 5, True),
            "block2": (c1, c3, 3, True),
            "block3": (c3, c5, 3, False),
            "mgp.block2": (c1, c3, 3, True),
            "mgp.block3": (c3, c5, 3, False),
        }
        self._register_config()
        for name, (cin, cout, k, _) in self._block_plan.items():
            self._add_conv(f"{name}.a", cin, cout, k)
            self._add_conv(f"{name}.b", cout, cout, 3)
        for depth, c in zip((1, 2, 3), (c1, c3, c5)):
            for pname, shape in pool_param_shapes(config.set_pooling, c).items():
                init = (
                    xavier_uniform(shape, self.params.rng, self.dtype)
                    if pname == "weight"
                    else np.zeros(shape, dtype=self.dtype)
                )
                self.params.add(f"pool{depth}.{pname}", init)
        for head in ("hpm.main", "hpm.mgp"):
            shape = (config.strips_per_head, config.strip_dim, c5)
            self.params.add(f"{head}.weight", xavier_uniform(shape, self.params.rng, self.dtype))

    def _register_config(self):
        cfg = self.config
        entries = {
            "config.channels": np.asarray(cfg.channels, dtype=np.uint64),
            "config.scales": np.asarray([cfg.scales], dtype=np.uint64),
            "config.strip_dim": np.asarray([cfg.strip_dim], dtype=np.uint64),
            "config.set_pooling": np.asarray([STRATEGIES.index(cfg.set_pooling)], dtype=np.uint64),
            "config.lrelu_slope": np.asarray([cfg.lrelu_slope], dtype=np.float64),
            "config.dtype": np.asarray([_DTYPE_CODE[self.dtype]], dtype=np.uint64),
        }
        for path, arr in entries.items():
            self.params.add(path, arr, requires_grad=False)

    def _add_conv(self, name, cin, cout, k):
        self.params.add(f"{name}.weight", xavier_uniform((cout, cin, k, k), self.params.rng, self.dtype))
        self.params.add(f"{name}.bias", np.zeros(cout, dtype=self.dtype))

    # ------------------------------------------------------------------
    # forward pieces

    def backbone_block(self, x, name):
        """Two padded convs with leaky-relu; blocks 1 and 2 end in a 2x2 pool."""
        _, _, k, pooled = self._block_plan[name]
        pad = k // 2
        slope = self.config.lrelu_slope
        x = leaky_relu(conv2d(x, self.params[f"{name}.a.weight"],
                              self.params[f"{name}.a.bias"], padding=pad), slope)
        x = leaky_relu(conv2d(x, self.params[f"{name}.b.weight"],
                              self.params[f"{name}.b.bias"], padding=1), slope)
        return maxpool2d(x) if pooled else x

    def _pool(self, frames, depth, b, n):
        c, h, w = frames.shape[-3:]
        stack = T.reshape(frames, (b, n, c, h, w))
        weight = bias = None
        if f"pool{depth}.weight" in self.params:
            weight = self.params[f"pool{depth}.weight"]
            bias = self.params[f"pool{depth}.bias"]
        return apply_pool(self.config.set_pooling, stack, weight, bias)

    def mgp_forward(self, pooled1, pooled2, pooled3):
        """Re-process pooled maps with the branch convs, injecting additively."""
        m = self.backbone_block(pooled1, "mgp.block2") + pooled2
        m = self.backbone_block(m, "mgp.block3") + pooled3
        return m

    def hpm(self, feature_map, head):
        """Multi-scale strip features of [b, c, h, w] -> [b, strips, d]."""
        b, c, h, w = feature_map.shape
        if h % (2 ** (self.config.scales - 1)) != 0:
            raise DimensionError(f"height {h} not divisible by 2^{self.config.scales - 1}")
        per_scale = []
        for s in range(1, self.config.scales + 1):
            k = 2 ** (s - 1)
            strips = T.reshape(feature_map, (b, c, k, (h // k) * w))
            pooled = T.amax(strips, axis=-1) + T.tmean(strips, axis=-1)  # [b, c, k]
            per_scale.append(T.transpose(pooled, (0, 2, 1)))
        feats = T.concat(per_scale, axis=1)  # [b, strips, c], scale-major
        weight = self.params[f"hpm.{head}.weight"]  # [strips, d, c]
        strips_n = weight.shape[0]
        x = T.reshape(feats, (b, strips_n, 1, c))
        out = T.matmul(x, T.transpose(weight, (0, 2, 1)))  # [b, strips, 1, d]
        return T.reshape(out, (b, strips_n, self.config.strip_dim))

    def embed_batch(self, frames):
        """Full differentiable forward of [b, n, 1, 64, 44] -> [b, rows, d]."""
        frames = T.astensor(frames)
        if frames.ndim != 5:
            raise DimensionError("embed_batch expects [b, n, 1, h, w]")
        b, n = frames.shape[:2]
        if n < 1:
            raise DimensionError("empty silhouette set")
        if frames.shape[-2:] != (INPUT_H, INPUT_W):
            raise DimensionError(
                f"silhouettes must be {INPUT_H}x{INPUT_W}, got {frames.shape[-2:]}"
            )
        x = T.reshape(frames, (b * n,) + frames.shape[2:])
        f1 = self.backbone_block(x, "block1")
        p1 = self._pool(f1, 1, b, n)
        f2 = self.backbone_block(f1, "block2")
        p2 = self._pool(f2, 2, b, n)
        f3 = self.backbone_block(f2, "block3")
        p3 = self._pool(f3, 3, b, n)
        m = self.mgp_forward(p1, p2, p3)
        main = self.hpm(p3, "main")
        branch = self.hpm(m, "mgp")
        return T.concat([main, branch], axis=1)

    def embed(self, frames):
        """Inference embedding of one set -> [rows, d] (no gradient tape)."""
        if hasattr(frames, "as_array"):
            frames = frames.as_array()
        frames = np.asarray(frames, dtype=self.dtype)
        if frames.ndim == 3:
            frames = frames[:, None]
        with T.no_grad():
            out = self.embed_batch(frames[None])
        return T.reshape(out, out.shape[1:])


# ----------------------------------------------------------------------
# checkpoint plumbing

def config_from_store(store):
    cfg = BackboneConfig(
        channels=tuple(int(v) for v in store["config.channels"].data),
        scales=int(store["config.scales"].data[0]),
        strip_dim=int(store["config.strip_dim"].data[0]),
        set_pooling=STRATEGIES[int(store["config.set_pooling"].data[0])],
        lrelu_slope=float(store["config.lrelu_slope"].data[0]),
    )
    dtype = _CODE_DTYPE[int(store["config.dtype"].data[0])]
    return cfg, dtype


def save_model(path, model):
    model.params.save(path)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, raw store)."""
    raw = ParamStore.load(path)
    if "config.scales" not in raw:
        raise CompatibilityError("checkpoint carries no model configuration")
    cfg, dtype = config_from_store(raw)
    model = GaitSet(cfg, seed=raw.seed, dtype=dtype)
    model.params.copy_values_from(raw)
    return model, raw
