"""3D attention W-Net: an attention U-Net segmenter chained into an attention U-Net reconstructor.

Tensors carry an explicit batch axis of one: ``(1, C, D, H, W)``.

Parameter names (used verbatim as checkpoint keys)::

    {encoder,decoder}.down.<l>.{conv1_w,conv1_b,prelu1_alpha,norm1_scale,norm1_shift,
                                conv2_w,conv2_b,prelu2_alpha,norm2_scale,norm2_shift}
    {encoder,decoder}.up.<l>.<same ten names>
    {encoder,decoder}.gates.<l>.{W_x,W_g,b_g,psi,b_psi}
    {encoder,decoder}.{head_w,head_b}

``down.<depth>`` is the bottleneck module; ``up.<l>`` and ``gates.<l>`` join
level ``l`` of the expanding path to its skip connection.
"""
from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_FORMAT = "attnwnet-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointVersionError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 4
    base_channels: int = 64
    K: int = 15
    kernel_size: int = 3
    prelu_init: float = 0.25
    norm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.kernel_size != 3:
            raise ValueError("kernel_size is fixed at 3")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level


def instance_norm(x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor,
                  eps: float = 1e-5) -> torch.Tensor:
    """Per-channel standardization over the spatial axes, then ``scale * x + shift``."""
    mean = x.mean(dim=(2, 3, 4), keepdim=True)
    var = x.var(dim=(2, 3, 4), keepdim=True, unbiased=False)
    view = (1, -1, 1, 1, 1)
    return scale.view(view) * (x - mean) / torch.sqrt(var + eps) + shift.view(view)


def prelu(x: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    return torch.where(x >= 0, x, alpha.view(1, -1, 1, 1, 1) * x)


def maxpool_with_memory(x: torch.Tensor):
    """2x2x2 max pool (floor on odd sizes); also returns the pre-pool spatial size."""
    size = tuple(x.shape[2:])
    if min(size) < 2:
        raise ValueError(f"cannot pool spatial size {size}: every axis needs >= 2 voxels")
    return F.max_pool3d(x, kernel_size=2, stride=2), size


def upsample_trilinear(x: torch.Tensor, size) -> torch.Tensor:
    """Trilinear resize to exactly ``size`` with cell-centred sampling (align_corners=False)."""
    size = tuple(int(s) for s in size)
    if any(s < c for s, c in zip(size, x.shape[2:])):
        raise ValueError(f"target size {size} is smaller than input {tuple(x.shape[2:])}")
    return F.interpolate(x, size=size, mode="trilinear", align_corners=False)


class ConvModule(nn.Module):
    """Two rounds of 3x3x3 conv, PReLU, instance norm."""

    def __init__(self, cin: int, cout: int, prelu_init: float = 0.25, eps: float = 1e-5):
        super().__init__()
        self.cin, self.cout, self.eps = cin, cout, eps
        for i, c in ((1, cin), (2, cout)):
            setattr(self, f"conv{i}_w", nn.Parameter(torch.empty(cout, c, 3, 3, 3)))
            setattr(self, f"conv{i}_b", nn.Parameter(torch.zeros(cout)))
            setattr(self, f"prelu{i}_alpha", nn.Parameter(torch.full((cout,), float(prelu_init))))
            setattr(self, f"norm{i}_scale", nn.Parameter(torch.ones(cout)))
            setattr(self, f"norm{i}_shift", nn.Parameter(torch.zeros(cout)))

    def forward(self, x):
        if x.shape[1] != self.cin:
            raise ValueError(f"conv module expects {self.cin} channels, got {x.shape[1]}")
        for i in (1, 2):
            x = F.conv3d(x, getattr(self, f"conv{i}_w"), getattr(self, f"conv{i}_b"), padding=1)
            x = prelu(x, getattr(self, f"prelu{i}_alpha"))
            x = instance_norm(x, getattr(self, f"norm{i}_scale"), getattr(self, f"norm{i}_shift"),
                              self.eps)
        return x


class AttentionGate(nn.Module):
    """Additive attention on a skip connection, gated by the coarser level.

    ``q = relu(W_x x' + W_g g + b_g)`` where ``x'`` is ``x`` sampled with
    stride 2 onto ``g``'s grid; ``a = sigmoid(psi . q + b_psi)`` is then
    resized trilinearly to ``x``'s grid and multiplies every channel of ``x``.
    """

    def __init__(self, skip_channels: int, gate_channels: int):
        super().__init__()
        f_int = max(1, skip_channels // 2)
        self.W_x = nn.Parameter(torch.empty(f_int, skip_channels, 1, 1, 1))
        self.W_g = nn.Parameter(torch.empty(f_int, gate_channels, 1, 1, 1))
        self.b_g = nn.Parameter(torch.zeros(f_int))
        self.psi = nn.Parameter(torch.empty(1, f_int, 1, 1, 1))
        self.b_psi = nn.Parameter(torch.zeros(1))

    def coefficients(self, x, g):
        gsize = tuple(g.shape[2:])
        if any(gs != xs // 2 for gs, xs in zip(gsize, x.shape[2:])):
            raise ValueError(f"gating grid {gsize} is not the pooled grid of {tuple(x.shape[2:])}")
        xs = x[:, :, ::2, ::2, ::2][:, :, :gsize[0], :gsize[1], :gsize[2]]
        q = F.relu(F.conv3d(xs, self.W_x) + F.conv3d(g, self.W_g, self.b_g))
        a = torch.sigmoid(F.conv3d(q, self.psi, self.b_psi))
        return upsample_trilinear(a, x.shape[2:])

    def forward(self, x, g):
        return self.coefficients(x, g) * x


class AttentionUNet(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, cfg: NetworkConfig, head: str):
        super().__init__()
        if head not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown head {head!r}")
        self.depth, self.head = cfg.depth, head
        ch = cfg.channels
        mod = lambda a, b: ConvModule(a, b, cfg.prelu_init, cfg.norm_eps)
        self.down = nn.ModuleList(
            [mod(in_channels if l == 0 else ch(l - 1), ch(l)) for l in range(cfg.depth + 1)])
        self.gates = nn.ModuleList([AttentionGate(ch(l), ch(l + 1)) for l in range(cfg.depth)])
        self.up = nn.ModuleList([mod(ch(l) + ch(l + 1), ch(l)) for l in range(cfg.depth)])
        self.head_w = nn.Parameter(torch.empty(out_channels, ch(0), 1, 1, 1))
        self.head_b = nn.Parameter(torch.zeros(out_channels))

    def forward(self, x):
        skips, sizes = [], []
        for l in range(self.depth):
            x = self.down[l](x)
            skips.append(x)
            x, size = maxpool_with_memory(x)
            sizes.append(size)
        x = self.down[self.depth](x)
        for l in reversed(range(self.depth)):
            gated = self.gates[l](skips[l], x)
            x = self.up[l](torch.cat([gated, upsample_trilinear(x, sizes[l])], dim=1))
        x = F.conv3d(x, self.head_w, self.head_b)
        return torch.softmax(x, dim=1) if self.head == "softmax" else torch.sigmoid(x)


class WNet(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.config = cfg
        self.encoder = AttentionUNet(1, cfg.K, cfg, "softmax")
        self.decoder = AttentionUNet(cfg.K, 1, cfg, "sigmoid")

    def forward(self, x):
        """Returns ``(assignment (1, K, ...), reconstruction (1, 1, ...))``."""
        p = self.encoder(x)
        return p, self.decoder(p)

    def segment(self, x):
        return self.encoder(x)


_FAN_IN = ("conv1_w", "conv2_w", "head_w", "W_x", "W_g", "psi")


def reset_parameters(net: WNet, seed: int) -> WNet:
    """Fan-in scaled normal weights from a private generator; constants elsewhere."""
    gen = torch.Generator().manual_seed(int(seed))
    cfg = net.config
    with torch.no_grad():
        for name, p in net.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf in _FAN_IN:
                fan_in = p[0].numel()
                std = math.sqrt(2.0 / fan_in) if leaf.startswith("conv") else math.sqrt(1.0 / fan_in)
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * std)
            elif leaf.endswith("alpha"):
                p.fill_(cfg.prelu_init)
            elif leaf.endswith("scale"):
                p.fill_(1.0)
            else:
                p.zero_()
    return net


def init_params(cfg: NetworkConfig, dtype=torch.float32) -> WNet:
    return reset_parameters(WNet(cfg).to(dtype), cfg.seed)


def wnet_forward(net: WNet, volume) -> tuple[torch.Tensor, torch.Tensor]:
    """Run both U-Nets on a ``(D, H, W)`` array; returns ``(K, D, H, W)`` and ``(D, H, W)``."""
    x = _as_input(net, volume)
    p, rec = net(x)
    return p[0], rec[0, 0]


def _as_input(net, volume):
    data = getattr(volume, "data", volume)
    dtype = next(net.parameters()).dtype
    x = torch.as_tensor(np.asarray(data), dtype=dtype)
    return x.reshape((1, 1) + tuple(x.shape[-3:]))


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


def _zip_add(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_FIXED_TIME)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def checkpoint_bytes(net: WNet) -> bytes:
    """Zip archive: ``meta.json`` plus one ``params/<name>.npy`` per parameter."""
    params = [(n, p.detach().cpu().numpy()) for n, p in net.named_parameters()]
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(net.config),
        "dtype": str(params[0][1].dtype),
        "params": [n for n, _ in params],
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _zip_add(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode())
        for name, arr in params:
            b = io.BytesIO()
            np.lib.format.write_array(b, np.ascontiguousarray(arr), allow_pickle=False)
            _zip_add(zf, f"params/{name}.npy", b.getvalue())
    return buf.getvalue()


def save_params(net: WNet, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(net))


def load_params(path) -> WNet:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"{path}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, "
                f"found {meta.get('format')} v{meta.get('version')}")
        cfg = NetworkConfig(**meta["config"])
        net = WNet(cfg).to(getattr(torch, meta["dtype"]))
        own = dict(net.named_parameters())
        if sorted(own) != sorted(meta["params"]):
            raise CheckpointVersionError(f"{path}: parameter names do not match the network layout")
        with torch.no_grad():
            for name in meta["params"]:
                arr = np.lib.format.read_array(io.BytesIO(zf.read(f"params/{name}.npy")),
                                               allow_pickle=False)
                if arr.shape != tuple(own[name].shape):
                    raise CheckpointVersionError(f"{path}: shape mismatch for {name}")
                own[name].copy_(torch.from_numpy(arr))
    return net
