"""The acoustic model: conv front end feeding a stack of memory blocks.

Each block projects its input through a linear bottleneck and relu, expands
back to the block width, and applies a two-sided strided tap memory:

    out[t] = skip_in[t] + sum_i a_i * h[t - s1*i] + sum_j c_j * h[t + s2*j]

with zero padding outside the utterance and i, j running from 0, so the
current frame enters through the order-0 taps. In the default pyramidal
variant skip_in is the output of an earlier block, connected only where the
tap orders change between consecutive blocks; the plain variant adds the
current hidden vector at every block and chains skips depth by depth.

Two affine heads share the last block's output: one emits the unnormalized
pseudo log-likelihoods consumed by the sequence criterion and the decoder
(no softmax), the other emits logits for the frame-level CE branch.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .errors import ConfigurationError, FormatError
from .ops import Affine, Conv2d, Relu, glorot_uniform, he_uniform
from .rng import Rng
from .tensor import Tensor, read_tensor, write_tensor

_CKPT_MAGIC = b"PFM1"


@dataclass(frozen=True)
class MemoryBlockSpec:
    """Tap geometry of one memory block.

    n1/n2: past/future tap orders (counts beyond the order-0 tap);
    s1/s2: strides between taps; hidden_dim: block width; skip_depth: how
    many blocks below this one the skip connection reaches when the block
    sits at a junction.
    """

    n1: int
    n2: int
    s1: int
    s2: int
    hidden_dim: int
    skip_depth: int = 1

    def __post_init__(self):
        if self.n1 < 0 or self.n2 < 0:
            raise ConfigurationError(f"tap orders must be >= 0, got n1={self.n1} n2={self.n2}")
        if self.s1 < 1 or self.s2 < 1:
            raise ConfigurationError(f"tap strides must be >= 1, got s1={self.s1} s2={self.s2}")
        if self.hidden_dim < 1:
            raise ConfigurationError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.skip_depth < 1:
            raise ConfigurationError(f"skip_depth must be >= 1, got {self.skip_depth}")


@dataclass(frozen=True)
class BlockConfig:
    mem: MemoryBlockSpec
    proj_dim: int
    relu_dim: int

    def __post_init__(self):
        if self.proj_dim < 1 or self.relu_dim < 1:
            raise ConfigurationError(
                f"block dims must be >= 1, got proj={self.proj_dim} relu={self.relu_dim}"
            )
        if self.proj_dim != self.relu_dim:
            raise ConfigurationError(
                f"a single linear bottleneck feeds the relu, so proj_dim must equal "
                f"relu_dim (got {self.proj_dim} and {self.relu_dim})"
            )


@dataclass(frozen=True)
class ConvLayerConfig:
    kernel: int
    channels: int
    subsample: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError(f"conv kernel must be odd and >= 1, got {self.kernel}")
        if self.channels < 1:
            raise ConfigurationError(f"conv channels must be >= 1, got {self.channels}")


@dataclass(frozen=True)
class FrontEndConfig:
    """Stack of 2-D conv layers over a (1, time, frequency) map.

    Subsampling layers halve the frequency axis only; time resolution is
    preserved throughout so frame alignment with the graphs survives. A
    residual shortcut (1x1 projection when shape or stride differs,
    identity otherwise) wraps each layer whose kernel size changes from
    the previous layer's.
    """

    layers: tuple[ConvLayerConfig, ...]

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("front end needs at least one conv layer")

    @property
    def subsample_factor(self) -> int:
        return 2 ** sum(1 for l in self.layers if l.subsample)

    def min_feature_dim(self) -> int:
        return self.subsample_factor

    def shortcut_positions(self) -> tuple[int, ...]:
        pos = []
        for i in range(1, len(self.layers)):
            if self.layers[i].kernel != self.layers[i - 1].kernel:
                pos.append(i)
        return tuple(pos)

    def output_dim(self, feature_dim: int) -> int:
        if feature_dim < self.min_feature_dim():
            raise ConfigurationError(
                f"feature dim {feature_dim} below the minimum {self.min_feature_dim()} "
                f"for a front end that subsamples frequency "
                f"{int(math.log2(self.subsample_factor))} times"
            )
        f = feature_dim
        for l in self.layers:
            if l.subsample:
                f = -(-f // 2)
        return self.layers[-1].channels * f


@dataclass(frozen=True)
class NetworkConfig:
    feature_dim: int
    output_dim: int
    blocks: tuple[BlockConfig, ...]
    front_end: FrontEndConfig | None = None
    variant: str = "pyramidal"
    l2_coefficient: float = 0.0

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ConfigurationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.output_dim < 1:
            raise ConfigurationError(f"output_dim must be >= 1, got {self.output_dim}")
        if not self.blocks:
            raise ConfigurationError("network needs at least one block")
        if self.variant not in ("pyramidal", "dfsmn"):
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.l2_coefficient < 0:
            raise ConfigurationError("l2_coefficient must be >= 0")
        widths = {b.mem.hidden_dim for b in self.blocks}
        if len(widths) != 1:
            raise ConfigurationError(
                f"all blocks must share one hidden width, got {sorted(widths)}"
            )
        skip_sources(self)  # raises if a junction reaches below block 0

    @property
    def hidden_dim(self) -> int:
        return self.blocks[0].mem.hidden_dim

    def block_input_dim(self, index: int) -> int:
        if index > 0:
            return self.hidden_dim
        if self.front_end is None:
            return self.feature_dim
        return self.front_end.output_dim(self.feature_dim)


def skip_sources(cfg: NetworkConfig) -> list[int]:
    """Skip source block index per block; -1 means no skip input.

    Pyramidal variant: block i is a junction when its tap orders differ
    from block i-1's, and then reads the output of block i - skip_depth.
    Plain variant: every block after the first reads its predecessor.
    """
    sources = []
    for i, blk in enumerate(cfg.blocks):
        if cfg.variant == "dfsmn":
            sources.append(i - 1 if i > 0 else -1)
            continue
        if i == 0:
            sources.append(-1)
            continue
        prev = cfg.blocks[i - 1].mem
        cur = blk.mem
        if (cur.n1, cur.n2) != (prev.n1, prev.n2):
            src = i - cur.skip_depth
            if src < 0:
                raise ConfigurationError(
                    f"block {i} skip_depth {cur.skip_depth} reaches below the first block"
                )
            sources.append(src)
        else:
            sources.append(-1)
    return sources


# ---------------------------------------------------------------------------
# Layers.


class MemoryBlock:
    """Two-sided strided tap memory with an optional additive skip input."""

    def __init__(self, spec: MemoryBlockSpec, rng: Rng | None = None,
                 include_current: bool = False):
        self.spec = spec
        self.include_current = include_current
        h = spec.hidden_dim
        self.a = Tensor.full((spec.n1 + 1, h), 1.0 / (spec.n1 + 1))
        self.c = Tensor.full((spec.n2 + 1, h), 1.0 / (spec.n2 + 1))
        self._cache = None

    def forward(self, h: np.ndarray, skip: np.ndarray | None) -> np.ndarray:
        spec = self.spec
        if h.ndim != 2 or h.shape[1] != spec.hidden_dim:
            raise ConfigurationError(
                f"memory block expects (T, {spec.hidden_dim}) input, got {h.shape}"
            )
        if skip is not None and skip.shape != h.shape:
            raise ConfigurationError(
                f"skip input shape {skip.shape} does not match hidden shape {h.shape}"
            )
        t = h.shape[0]
        out = np.zeros_like(h) if skip is None else skip.copy()
        if self.include_current:
            out += h
        av, cv = self.a.values, self.c.values
        for i in range(spec.n1 + 1):
            shift = spec.s1 * i
            if shift >= t:
                break
            out[shift:] += av[i] * h[: t - shift]
        for j in range(spec.n2 + 1):
            shift = spec.s2 * j
            if shift >= t:
                break
            out[: t - shift] += cv[j] * h[shift:]
        self._cache = (h, skip is not None, t)
        return out

    def backward(self, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        h, had_skip, t = self._cache
        spec = self.spec
        g = np.asarray(grad_out, dtype=np.float64)
        dh = g.copy() if self.include_current else np.zeros_like(g)
        da = self.a.ensure_grad()
        dc = self.c.ensure_grad()
        av, cv = self.a.values, self.c.values
        for i in range(spec.n1 + 1):
            shift = spec.s1 * i
            if shift >= t:
                break
            da[i] += (g[shift:] * h[: t - shift]).sum(axis=0)
            dh[: t - shift] += av[i] * g[shift:]
        for j in range(spec.n2 + 1):
            shift = spec.s2 * j
            if shift >= t:
                break
            dc[j] += (g[: t - shift] * h[shift:]).sum(axis=0)
            dh[shift:] += cv[j] * g[: t - shift]
        dskip = g.copy() if had_skip else None
        return dh, dskip

    def params(self):
        return [("a", self.a), ("c", self.c)]


class Block:
    """bottleneck affine -> relu -> expand affine -> memory block."""

    def __init__(self, cfg: BlockConfig, in_dim: int, rng: Rng,
                 include_current: bool = False):
        h = cfg.mem.hidden_dim
        self.affine1 = Affine(
            Tensor(he_uniform(rng, in_dim, (in_dim, cfg.relu_dim)), copy=False),
            Tensor.zeros((cfg.relu_dim,)),
        )
        self.relu = Relu()
        self.affine2 = Affine(
            Tensor(glorot_uniform(rng, cfg.relu_dim, h, (cfg.relu_dim, h)), copy=False),
            Tensor.zeros((h,)),
        )
        self.mem = MemoryBlock(cfg.mem, include_current=include_current)
        self.last_relu_margin = math.inf

    def forward(self, x: np.ndarray, skip: np.ndarray | None,
                track_relu_margin: bool = False) -> np.ndarray:
        pre = self.affine1.forward(x)
        if track_relu_margin:
            self.last_relu_margin = float(np.min(np.abs(pre))) if pre.size else math.inf
        hidden = self.affine2.forward(self.relu.forward(pre))
        return self.mem.forward(hidden, skip)

    def backward(self, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        dh, dskip = self.mem.backward(grad_out)
        dx = self.affine1.backward(self.relu.backward(self.affine2.backward(dh)))
        return dx, dskip

    def params(self):
        out = []
        for name, t in self.affine1.params():
            out.append((f"affine1.{name}", t))
        for name, t in self.affine2.params():
            out.append((f"affine2.{name}", t))
        for name, t in self.mem.params():
            out.append((f"mem.{name}", t))
        return out


class FrontEnd:
    """Residual conv stack over the (1, T, F) feature map."""

    def __init__(self, cfg: FrontEndConfig, feature_dim: int, rng: Rng):
        cfg.output_dim(feature_dim)  # validates the minimum width
        self.cfg = cfg
        self.feature_dim = feature_dim
        shortcut_at = set(cfg.shortcut_positions())
        self.layers: list[tuple[Conv2d, Relu, Conv2d | None]] = []
        in_ch = 1
        for i, lc in enumerate(cfg.layers):
            stride = (1, 2) if lc.subsample else (1, 1)
            k = lc.kernel
            kern = Tensor(
                he_uniform(rng, in_ch * k * k, (lc.channels, in_ch, k, k)),
                copy=False,
            )
            conv = Conv2d(kern, stride=stride, padding="same")
            proj = None
            if i in shortcut_at and (lc.channels != in_ch or stride != (1, 1)):
                pk = Tensor(
                    glorot_uniform(rng, in_ch, lc.channels, (lc.channels, in_ch, 1, 1)),
                    copy=False,
                )
                proj = Conv2d(pk, stride=stride, padding="same")
            self.layers.append((conv, Relu(), proj))
            in_ch = lc.channels
        self.shortcut_at = shortcut_at
        self.last_relu_margin = math.inf
        self._cache = None

    def forward(self, features: np.ndarray, track_relu_margin: bool = False) -> np.ndarray:
        if features.ndim != 2 or features.shape[1] != self.feature_dim:
            raise ConfigurationError(
                f"front end expects (T, {self.feature_dim}) features, got {features.shape}"
            )
        x = features[None, :, :]
        margin = math.inf
        for i, (conv, relu, proj) in enumerate(self.layers):
            pre = conv.forward(x)
            if track_relu_margin and pre.size:
                margin = min(margin, float(np.min(np.abs(pre))))
            y = relu.forward(pre)
            if i in self.shortcut_at:
                y = y + (proj.forward(x) if proj is not None else x)
            x = y
        self.last_relu_margin = margin
        c, t, f = x.shape
        self._cache = (c, t, f)
        return x.transpose(1, 0, 2).reshape(t, c * f)

    def backward(self, grad_flat: np.ndarray) -> np.ndarray:
        c, t, f = self._cache
        g = np.asarray(grad_flat, dtype=np.float64).reshape(t, c, f).transpose(1, 0, 2)
        for i in range(len(self.layers) - 1, -1, -1):
            conv, relu, proj = self.layers[i]
            dx = conv.backward(relu.backward(g))
            if i in self.shortcut_at:
                dx = dx + (proj.backward(g) if proj is not None else g)
            g = dx
        return g[0]

    def params(self):
        out = []
        for i, (conv, _, proj) in enumerate(self.layers):
            out.append((f"conv{i}.kernels", conv.kernels))
            if proj is not None:
                out.append((f"conv{i}.shortcut.kernels", proj.kernels))
        return out


@dataclass
class NetOutput:
    chain: np.ndarray
    ce_logits: np.ndarray


class Network:
    """Full model; parameters are initialized deterministically from an Rng."""

    def __init__(self, cfg: NetworkConfig, rng: Rng | None = None):
        if rng is None:
            rng = Rng(0)
        self.cfg = cfg
        self.skip_sources = skip_sources(cfg)
        include_current = cfg.variant == "dfsmn"
        self.front = (
            FrontEnd(cfg.front_end, cfg.feature_dim, rng) if cfg.front_end else None
        )
        self.blocks = [
            Block(b, cfg.block_input_dim(i), rng, include_current=include_current)
            for i, b in enumerate(cfg.blocks)
        ]
        h, p = cfg.hidden_dim, cfg.output_dim
        self.chain_head = Affine(
            Tensor(glorot_uniform(rng, h, p, (h, p)), copy=False), Tensor.zeros((p,))
        )
        self.ce_head = Affine(
            Tensor(glorot_uniform(rng, h, p, (h, p)), copy=False), Tensor.zeros((p,))
        )
        self._block_outs: list[np.ndarray] | None = None
        self.last_relu_margin = math.inf

    def forward(self, features: np.ndarray, track_relu_margin: bool = False) -> NetOutput:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.cfg.feature_dim:
            raise ConfigurationError(
                f"expected (T, {self.cfg.feature_dim}) features, got {features.shape}"
            )
        if features.shape[0] < 1:
            raise ConfigurationError("utterance must contain at least one frame")
        x = self.front.forward(features, track_relu_margin) if self.front else features
        outs: list[np.ndarray] = []
        for i, blk in enumerate(self.blocks):
            src = self.skip_sources[i]
            skip = outs[src] if src >= 0 else None
            x = blk.forward(x, skip, track_relu_margin)
            outs.append(x)
        self._block_outs = outs
        if track_relu_margin:
            margins = [b.last_relu_margin for b in self.blocks]
            if self.front:
                margins.append(self.front.last_relu_margin)
            self.last_relu_margin = min(margins)
        return NetOutput(
            chain=self.chain_head.forward(x), ce_logits=self.ce_head.forward(x)
        )

    def backward(self, d_chain: np.ndarray | None, d_ce: np.ndarray | None) -> np.ndarray | None:
        outs = self._block_outs
        d_outs = [np.zeros_like(o) for o in outs]
        if d_chain is not None:
            d_outs[-1] += self.chain_head.backward(d_chain)
        if d_ce is not None:
            d_outs[-1] += self.ce_head.backward(d_ce)
        d_front = None
        for i in range(len(self.blocks) - 1, -1, -1):
            dx, dskip = self.blocks[i].backward(d_outs[i])
            if dskip is not None:
                d_outs[self.skip_sources[i]] += dskip
            if i > 0:
                d_outs[i - 1] += dx
            else:
                d_front = dx
        if self.front is not None:
            return self.front.backward(d_front)
        return d_front

    def params(self) -> list[tuple[str, Tensor]]:
        out = []
        if self.front is not None:
            for name, t in self.front.params():
                out.append((f"front.{name}", t))
        for i, blk in enumerate(self.blocks):
            for name, t in blk.params():
                out.append((f"blocks.{i}.{name}", t))
        for name, t in self.chain_head.params():
            out.append((f"chain_head.{name}", t))
        for name, t in self.ce_head.params():
            out.append((f"ce_head.{name}", t))
        return out

    def zero_grad(self) -> None:
        for _, t in self.params():
            t.zero_grad()


# ---------------------------------------------------------------------------
# Config arithmetic.


def receptive_field(cfg: NetworkConfig) -> tuple[int, int]:
    """(past, future) frame reach of one output frame, by construction."""
    past = sum(b.mem.n1 * b.mem.s1 for b in cfg.blocks)
    future = sum(b.mem.n2 * b.mem.s2 for b in cfg.blocks)
    if cfg.front_end is not None:
        conv_reach = sum((l.kernel - 1) // 2 for l in cfg.front_end.layers)
        past += conv_reach
        future += conv_reach
    return past, future


def param_count(cfg: NetworkConfig) -> int:
    """Exact number of scalar parameters, computed from the config alone."""
    total = 0
    if cfg.front_end is not None:
        in_ch = 1
        shortcut_at = set(cfg.front_end.shortcut_positions())
        for i, l in enumerate(cfg.front_end.layers):
            total += l.channels * in_ch * l.kernel * l.kernel
            if i in shortcut_at and (l.channels != in_ch or l.subsample):
                total += l.channels * in_ch
            in_ch = l.channels
    for i, b in enumerate(cfg.blocks):
        in_dim = cfg.block_input_dim(i)
        h = b.mem.hidden_dim
        total += in_dim * b.relu_dim + b.relu_dim
        total += b.relu_dim * h + h
        total += (b.mem.n1 + 1 + b.mem.n2 + 1) * h
    total += 2 * (cfg.hidden_dim * cfg.output_dim + cfg.output_dim)
    return total


# ---------------------------------------------------------------------------
# Presets.


def desk_front_end(max_channels: int = 32) -> FrontEndConfig:
    c = max_channels
    chans = [c // 4, c // 4, c // 2, c // 2, c, c]
    kernels = [5, 5, 5, 3, 3, 3]
    return FrontEndConfig(
        layers=tuple(
            ConvLayerConfig(kernel=k, channels=ch, subsample=(i % 2 == 1))
            for i, (k, ch) in enumerate(zip(kernels, chans))
        )
    )


def _block_schedule(num_blocks: int, base_order: int, hidden_dim: int,
                    bottleneck_dim: int, stride_second_half: int,
                    skip_depth: int) -> tuple[BlockConfig, ...]:
    blocks = []
    for i in range(num_blocks):
        n1 = base_order * (i // 2 + 1)
        n2 = max(1, n1 // 2)
        s1 = stride_second_half if i >= num_blocks // 2 and stride_second_half > 1 else 1
        blocks.append(
            BlockConfig(
                mem=MemoryBlockSpec(
                    n1=n1, n2=n2, s1=s1, s2=s1, hidden_dim=hidden_dim,
                    skip_depth=skip_depth,
                ),
                proj_dim=bottleneck_dim,
                relu_dim=bottleneck_dim,
            )
        )
    return tuple(blocks)


def desk_config(
    feature_dim: int = 8,
    num_phones: int = 5,
    num_blocks: int = 4,
    hidden_dim: int = 96,
    bottleneck_dim: int = 32,
    use_front_end: bool = True,
    variant: str = "pyramidal",
    l2_coefficient: float = 1e-4,
) -> NetworkConfig:
    """Downscaled preset sized for synthetic-corpus runs on one core."""
    return NetworkConfig(
        feature_dim=feature_dim,
        output_dim=2 * num_phones,
        blocks=_block_schedule(num_blocks, 2, hidden_dim, bottleneck_dim, 1, 2),
        front_end=desk_front_end(32) if use_front_end else None,
        variant=variant,
        l2_coefficient=l2_coefficient,
    )


def flagship_config(
    feature_dim: int = 40,
    output_dim: int = 9004,
    variant: str = "pyramidal",
) -> NetworkConfig:
    """Full-scale preset: 10 blocks, orders 4..20, strides 1 then 2,
    1536-wide blocks with 256-wide bottlenecks, 6-layer conv front end."""
    return NetworkConfig(
        feature_dim=feature_dim,
        output_dim=output_dim,
        blocks=_block_schedule(10, 4, 1536, 256, 2, 2),
        front_end=desk_front_end(128),
        variant=variant,
        l2_coefficient=1e-5,
    )


def preset_config(name: str, **overrides) -> NetworkConfig:
    if name == "desk":
        return desk_config(**overrides)
    if name == "flagship":
        return flagship_config(**overrides)
    raise ConfigurationError(f"unknown preset {name!r} (expected 'desk' or 'flagship')")


# ---------------------------------------------------------------------------
# Config serialization and checkpoints.


def config_to_dict(cfg: NetworkConfig) -> dict:
    d = {
        "feature_dim": cfg.feature_dim,
        "output_dim": cfg.output_dim,
        "variant": cfg.variant,
        "l2_coefficient": cfg.l2_coefficient,
        "blocks": [
            {
                "n1": b.mem.n1,
                "n2": b.mem.n2,
                "s1": b.mem.s1,
                "s2": b.mem.s2,
                "hidden_dim": b.mem.hidden_dim,
                "skip_depth": b.mem.skip_depth,
                "proj_dim": b.proj_dim,
                "relu_dim": b.relu_dim,
            }
            for b in cfg.blocks
        ],
        "front_end": None
        if cfg.front_end is None
        else [
            {"kernel": l.kernel, "channels": l.channels, "subsample": l.subsample}
            for l in cfg.front_end.layers
        ],
    }
    return d


def config_from_dict(d: dict) -> NetworkConfig:
    try:
        blocks = tuple(
            BlockConfig(
                mem=MemoryBlockSpec(
                    n1=b["n1"], n2=b["n2"], s1=b["s1"], s2=b["s2"],
                    hidden_dim=b["hidden_dim"], skip_depth=b.get("skip_depth", 1),
                ),
                proj_dim=b["proj_dim"],
                relu_dim=b["relu_dim"],
            )
            for b in d["blocks"]
        )
        fe = d.get("front_end")
        front = (
            None
            if fe is None
            else FrontEndConfig(
                layers=tuple(
                    ConvLayerConfig(
                        kernel=l["kernel"], channels=l["channels"],
                        subsample=l["subsample"],
                    )
                    for l in fe
                )
            )
        )
        return NetworkConfig(
            feature_dim=d["feature_dim"],
            output_dim=d["output_dim"],
            blocks=blocks,
            front_end=front,
            variant=d.get("variant", "pyramidal"),
            l2_coefficient=d.get("l2_coefficient", 0.0),
        )
    except KeyError as e:
        raise FormatError(f"network config dict missing field {e}") from e


def config_hash(cfg: NetworkConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()


def save_checkpoint(dest: str | BinaryIO, net: Network) -> None:
    """Container: magic, u32 JSON header length, header, named PFT1 blobs."""
    if isinstance(dest, str):
        with open(dest, "wb") as f:
            save_checkpoint(f, net)
        return
    params = net.params()
    header = {
        "config": config_to_dict(net.cfg),
        "config_hash": config_hash(net.cfg),
        "tensors": [name for name, _ in params],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    dest.write(_CKPT_MAGIC)
    dest.write(struct.pack("<I", len(blob)))
    dest.write(blob)
    for _, t in params:
        write_tensor(dest, t.values)


def load_checkpoint(
    src: str | BinaryIO, expected_config: NetworkConfig | None = None
) -> Network:
    """Rebuild a network from a checkpoint, verifying the config hash.

    A corrupted header hash or a mismatch against ``expected_config``
    raises ConfigurationError naming both hashes.
    """
    if isinstance(src, str):
        with open(src, "rb") as f:
            return load_checkpoint(f, expected_config)
    magic = src.read(4)
    if magic != _CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    raw = src.read(4)
    if len(raw) != 4:
        raise FormatError("truncated checkpoint header")
    (hlen,) = struct.unpack("<I", raw)
    blob = src.read(hlen)
    if len(blob) != hlen:
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(blob.decode("utf-8"))
        cfg = config_from_dict(header["config"])
        stored_hash = header["config_hash"]
        tensor_names = header["tensors"]
    except (KeyError, ValueError) as e:
        raise FormatError(f"invalid checkpoint header: {e}") from e
    actual = config_hash(cfg)
    if actual != stored_hash:
        raise ConfigurationError(
            f"checkpoint config hash {stored_hash} does not match its config ({actual})"
        )
    if expected_config is not None:
        want = config_hash(expected_config)
        if want != actual:
            raise ConfigurationError(
                f"checkpoint was built for config {actual}, expected {want}"
            )
    net = Network(cfg, Rng(0))
    by_name = dict(net.params())
    if set(tensor_names) != set(by_name):
        raise FormatError("checkpoint tensor names do not match the config's layers")
    for name in tensor_names:
        values = read_tensor(src)
        if values.shape != by_name[name].shape:
            raise FormatError(
                f"tensor {name} has shape {values.shape}, expected {by_name[name].shape}"
            )
        by_name[name].values[...] = values
    return net
