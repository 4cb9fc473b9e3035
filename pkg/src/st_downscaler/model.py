"""DNNCS: two coarse frames in, three fine frames out, same pixel grid.

head conv (per frame) -> RCAB stack -> spatiotemporal window attention
(horizontal, vertical and depth pixel shuffles of the two frames) ->
feature split & reconstruction on top of the temporal-midpoint baseline.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

AXES = ("h", "v", "d")


class NonFiniteError(RuntimeError):
    def __init__(self, stage: str):
        super().__init__(f"non-finite values after stage {stage!r}")
        self.stage = stage


@dataclass
class ModelConfig:
    feat_channels: int = 32
    n_rcab: int = 4
    reduction: int = 16
    window: int = 8
    n_heads: int = 4
    in_channels: int = 3
    temporal_in: int = 2
    temporal_out: int = 3
    ffn_ratio: int = 2
    use_st_attn: bool = True
    use_fsr: bool = True
    use_pos: bool = True
    attn_axes: tuple[str, ...] = AXES
    # fixed gain on the learned residual; fine-minus-coarse residuals are
    # ~1e-3 of the normalised range, so an unscaled output conv jitters
    # well above the signal under Adam
    res_scale: float = 0.01

    def __post_init__(self) -> None:
        self.attn_axes = tuple(self.attn_axes)
        if not self.res_scale > 0:
            raise ValueError("res_scale must be positive")
        if self.feat_channels % self.n_heads:
            raise ValueError("feat_channels must be divisible by n_heads")
        if self.feat_channels < self.reduction:
            raise ValueError("feat_channels must be >= reduction")
        if self.temporal_in != 2 or self.temporal_out != 3:
            raise ValueError("only two input frames and three output frames are supported")
        if not set(self.attn_axes) <= set(AXES):
            raise ValueError(f"attn_axes must be a subset of {AXES}")

    @classmethod
    def desk(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "ModelConfig":
        return cls(**{"feat_channels": 64, "n_rcab": 8, **kw})

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        return cls(**{"feat_channels": 8, "n_rcab": 1, "reduction": 4, "n_heads": 2, **kw})


# --------------------------------------------------------------------------
# pixel shuffles of the two temporal slices

def _as_batched(z: torch.Tensor) -> torch.Tensor:
    if z.dim() == 4:
        z = z.unsqueeze(0)
    if z.dim() != 5 or z.shape[1] != 2:
        raise ValueError(f"expected [B, 2, F, h, w] (two temporal slices), got {tuple(z.shape)}")
    return z


def shuffle_h(z: torch.Tensor) -> torch.Tensor:
    """``out[b, c, i, 2j + k] = z[b, k, c, i, j]`` -> [B, F, h, 2w]."""
    z = _as_batched(z)
    b, _, c, h, w = z.shape
    return z.permute(0, 2, 3, 4, 1).reshape(b, c, h, 2 * w)


def unshuffle_h(x: torch.Tensor) -> torch.Tensor:
    b, c, h, w2 = x.shape
    return x.reshape(b, c, h, w2 // 2, 2).permute(0, 4, 1, 2, 3)


def shuffle_v(z: torch.Tensor) -> torch.Tensor:
    """``out[b, c, 2i + k, j] = z[b, k, c, i, j]`` -> [B, F, 2h, w]."""
    z = _as_batched(z)
    b, _, c, h, w = z.shape
    return z.permute(0, 2, 3, 1, 4).reshape(b, c, 2 * h, w)


def unshuffle_v(x: torch.Tensor) -> torch.Tensor:
    b, c, h2, w = x.shape
    return x.reshape(b, c, h2 // 2, 2, w).permute(0, 3, 1, 2, 4)


def shuffle_d(z: torch.Tensor) -> torch.Tensor:
    """``out[b, 2c + k, i, j] = z[b, k, c, i, j]`` -> [B, 2F, h, w]."""
    z = _as_batched(z)
    b, _, c, h, w = z.shape
    return z.permute(0, 2, 1, 3, 4).reshape(b, 2 * c, h, w)


def unshuffle_d(x: torch.Tensor) -> torch.Tensor:
    b, c2, h, w = x.shape
    return x.reshape(b, c2 // 2, 2, h, w).permute(0, 2, 1, 3, 4)


SHUFFLES = {"h": (shuffle_h, unshuffle_h), "v": (shuffle_v, unshuffle_v), "d": (shuffle_d, unshuffle_d)}


def window_partition(x: torch.Tensor, win: int) -> torch.Tensor:
    """[B, C, H, W] -> [B * nWin, win * win, C] non-overlapping windows."""
    b, c, h, w = x.shape
    if h % win or w % win:
        raise ValueError(f"window {win} does not divide feature map {h}x{w}")
    x = x.reshape(b, c, h // win, win, w // win, win)
    return x.permute(0, 2, 4, 3, 5, 1).reshape(-1, win * win, c)


def window_reverse(tokens: torch.Tensor, win: int, shape: tuple[int, int, int, int]) -> torch.Tensor:
    b, c, h, w = shape
    x = tokens.reshape(b, h // win, w // win, win, win, c)
    return x.permute(0, 5, 1, 3, 2, 4).reshape(b, c, h, w)


# --------------------------------------------------------------------------
# blocks

class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.squeeze = nn.Conv2d(channels, channels // reduction, 1)
        self.excite = nn.Conv2d(channels // reduction, channels, 1)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        s = x.mean(dim=(-2, -1), keepdim=True)
        return torch.sigmoid(self.excite(F.relu(self.squeeze(s))))

    def forward(self, x):
        return x * self.gate(x)


class RCAB(nn.Module):
    """Residual channel-attention block: ``s * W1(x) + x``."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
        )
        self.ca = ChannelAttention(channels, reduction)

    def forward(self, x):
        return self.ca(self.body(x)) + x


class WindowAttention(nn.Module):
    """Multi-head self-attention plus FFN over window tokens.

    Queries and keys are layer-normalised per head before the scaled dot
    product.  Positional codes enter the attention input but not the
    residual stream.
    """

    def __init__(self, dim: int, n_heads: int, ffn_ratio: int = 2):
        super().__init__()
        if dim % n_heads:
            raise ValueError("dim must be divisible by n_heads")
        self.dim, self.n_heads = dim, n_heads
        self.head_dim = dim // n_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.q_norm = nn.LayerNorm(self.head_dim)
        self.k_norm = nn.LayerNorm(self.head_dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_ratio * dim), nn.GELU(), nn.Linear(ffn_ratio * dim, dim))

    def _heads(self, t: torch.Tensor) -> torch.Tensor:
        n, L, _ = t.shape
        return t.reshape(n, L, self.n_heads, self.head_dim).transpose(1, 2)

    def attention_map(self, x: torch.Tensor, pos: torch.Tensor | None = None) -> torch.Tensor:
        """Softmax weights ``[n, heads, L, L]``."""
        if x.dim() != 3 or x.shape[-1] != self.dim:
            raise ValueError(f"expected tokens [n, L, {self.dim}], got {tuple(x.shape)}")
        if pos is not None:
            if pos.shape != x.shape[-2:]:
                raise ValueError(f"positional code {tuple(pos.shape)} does not match tokens {tuple(x.shape[-2:])}")
            x = x + pos
        q = self.q_norm(self._heads(self.q(x)))
        k = self.k_norm(self._heads(self.k(x)))
        return torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)

    def delta(self, x: torch.Tensor, pos: torch.Tensor | None = None) -> torch.Tensor:
        """Residual increment: ``forward(x) - x``."""
        attn = self.attention_map(x, pos)
        xv = x + pos if pos is not None else x
        heads = attn @ self._heads(self.v(xv))
        a = self.o(heads.transpose(1, 2).reshape(x.shape))
        return a + self.ffn(x + a)

    def forward(self, x: torch.Tensor, pos: torch.Tensor | None = None) -> torch.Tensor:
        return x + self.delta(x, pos)


class SpatioTemporalAttention(nn.Module):
    """Sequential h -> v -> d attention over pixel-shuffled frame pairs.

    One attention block is shared by all axes; the depth axis folds its
    2F channels to F before attention and expands back afterwards.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        f, w = cfg.feat_channels, cfg.window
        self.window = w
        self.axes = [a for a in AXES if a in cfg.attn_axes]
        self.use_pos = cfg.use_pos
        self.g = WindowAttention(f, cfg.n_heads, cfg.ffn_ratio)
        self.pos = nn.ParameterDict({a: nn.Parameter(torch.zeros(f, w, w)) for a in AXES})
        self.fold = nn.Conv2d(2 * f, f, 1)
        self.unfold = nn.Conv2d(f, 2 * f, 1, bias=False)

    def branch(self, z: torch.Tensor, axis: str) -> torch.Tensor:
        shuffle, unshuffle = SHUFFLES[axis]
        fused = shuffle(z)
        if axis == "d":
            fused = self.fold(fused)
        tokens = window_partition(fused, self.window)
        pos = self.pos[axis].flatten(1).t() if self.use_pos else None
        d = window_reverse(self.g.delta(tokens, pos), self.window, tuple(fused.shape))
        if axis == "d":
            d = self.unfold(d)
        return z + unshuffle(d)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        z = _as_batched(z)
        for axis in self.axes:
            z = self.branch(z, axis)
        return z


class FeatureSplitReconstruction(nn.Module):
    """Frequency enhancement, split into three temporal residuals, add to
    the (first, midpoint, second) base frames through a shared output conv."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        f, c = cfg.feat_channels, cfg.in_channels
        self.use_freq = cfg.use_fsr
        self.freq = nn.Conv2d(2 * f, 2 * f, 1)
        self.merge = nn.Conv2d(4 * f, 2 * f, 3, padding=1)
        self.expand = nn.Conv2d(2 * f, 3 * c, 3, padding=1)
        self.out_conv = nn.Conv2d(c, c, 3, padding=1)

    def forward(self, feats: torch.Tensor, x: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
        b, _, _, h, w = feats.shape
        c = x.shape[2]
        a = feats.reshape(b, -1, h, w)
        if self.use_freq:
            p = self.freq(a)
            a = self.merge(torch.cat([torch.cos(p), torch.sin(p)], dim=1)) + a
        r = self.expand(a).reshape(b * 3, c, h, w)
        base = interpolation_baseline(x)
        return base + scale * self.out_conv(r).reshape(b, 3, c, h, w)


def interpolation_baseline(x: torch.Tensor) -> torch.Tensor:
    """(X0, (X0 + X1) / 2, X1) for ``x`` of shape [..., 2, C, h, w]."""
    x0, x1 = x[..., 0, :, :, :], x[..., 1, :, :, :]
    return torch.stack([x0, 0.5 * (x0 + x1), x1], dim=-4)


class DNNCS(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = ModelConfig() if cfg is None else cfg
        self.cfg = cfg
        f, c = cfg.feat_channels, cfg.in_channels
        self.head = nn.Conv2d(c, f, 3, padding=1)
        self.body = nn.Sequential(*[RCAB(f, cfg.reduction) for _ in range(cfg.n_rcab)])
        self.body_tail = nn.Conv2d(f, f, 3, padding=1)
        self.st_attn = SpatioTemporalAttention(cfg) if cfg.use_st_attn else None
        self.fsr = FeatureSplitReconstruction(cfg)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)
        # start exactly at the interpolation baseline
        nn.init.zeros_(self.fsr.out_conv.weight)
        nn.init.zeros_(self.fsr.out_conv.bias)

    @staticmethod
    def _check(t: torch.Tensor, stage: str) -> torch.Tensor:
        if not torch.isfinite(t).all():
            raise NonFiniteError(stage)
        return t

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """[B, 2, C, h, w] -> [B, 3, C, h, w]."""
        if x.dim() != 5 or x.shape[1] != 2 or x.shape[2] != self.cfg.in_channels:
            raise ValueError(f"expected input [B, 2, {self.cfg.in_channels}, h, w], got {tuple(x.shape)}")
        b, t, c, h, w = x.shape
        if h % self.cfg.window or w % self.cfg.window:
            raise ValueError(f"spatial size {h}x{w} not divisible by window {self.cfg.window}")
        self._check(x, "input")
        f = self.head(x.reshape(b * t, c, h, w))
        f = self._check(f + self.body_tail(self.body(f)), "feature_extraction")
        z = f.reshape(b, t, -1, h, w)
        if self.st_attn is not None:
            z = self._check(self.st_attn(z), "st_attention")
        return self._check(self.fsr(z, x, self.cfg.res_scale), "reconstruction")


def build_model(cfg: ModelConfig | None = None, seed: int = 0) -> DNNCS:
    """Deterministically initialised model."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return DNNCS(cfg)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def model_summary(model: DNNCS) -> str:
    lines = [f"{'module':<32}{'params':>12}"]
    for name, child in model.named_children():
        lines.append(f"{name:<32}{parameter_count(child):>12,}")
    lines.append(f"{'total':<32}{parameter_count(model):>12,}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# checkpoints: magic, u64 header length, JSON header, raw float32 blobs

MAGIC = b"STDSCKP1"


def save_checkpoint(path, model: DNNCS, seed: int = 0, iteration: int = 0, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors, blobs, offset = [], [], 0
    for name, t in model.state_dict().items():
        arr = t.detach().cpu().numpy().astype("<f4")
        raw = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    cfg = asdict(model.cfg)
    cfg["attn_axes"] = list(cfg["attn_axes"])
    header = json.dumps({"config": cfg, "seed": seed, "iteration": iteration,
                         "dtype": "f32", "endianness": "little", "tensors": tensors,
                         "extra": extra or {}}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    return path


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a DNNCS checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n))


def load_checkpoint(path) -> tuple[DNNCS, dict]:
    """Return the model and the checkpoint header."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a DNNCS checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        payload = fh.read()
    model = DNNCS(ModelConfig(**header["config"]))
    state = {}
    for t in header["tensors"]:
        arr = np.frombuffer(payload, dtype="<f4", count=int(np.prod(t["shape"])), offset=t["offset"])
        state[t["name"]] = torch.from_numpy(arr.reshape(t["shape"]).copy())
    model.load_state_dict(state)
    return model, header
