"""Generator, Styling Network and multi-branch Discriminator.

All networks take NCHW tensors in [-1, 1]. The generator injects a style code
through adaptive instance normalization in every decoder block.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_VERSION = 1


class ContractError(ValueError):
    """Input violates a forward-function contract (shape, domain index, ...)."""


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class NetConfig:
    num_domains: int = 3
    style_dim: int = 16
    resolution: int = 32
    channels: int = 1
    width: int = 16
    max_width: int = 64
    gen_blocks: int = 3
    enc_blocks: int = 4

    def __post_init__(self):
        if self.num_domains < 1 or self.style_dim < 1:
            raise ValueError("num_domains and style_dim must be positive")
        if self.resolution % (2 ** max(self.gen_blocks, self.enc_blocks)) != 0:
            raise ValueError(f"resolution {self.resolution} not divisible by 2^blocks")

    def widths(self, n: int) -> list[int]:
        return [min(self.width * 2 ** i, self.max_width) for i in range(n + 1)]


def _he_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class AdaIN(nn.Module):
    """Instance norm whose scale and shift are affine functions of the style code."""

    def __init__(self, style_dim: int, channels: int):
        super().__init__()
        self.norm = nn.InstanceNorm2d(channels, affine=False)
        self.fc = nn.Linear(style_dim, 2 * channels)

    def reset_parameters(self) -> None:
        # scale = 1 + gamma starts near 1 and shift near 0, but stays style-dependent
        nn.init.normal_(self.fc.weight, std=0.1 / math.sqrt(self.fc.in_features))
        nn.init.zeros_(self.fc.bias)

    def forward(self, x, s):
        gamma, beta = self.fc(s).chunk(2, dim=1)
        return (1 + gamma[:, :, None, None]) * self.norm(x) + beta[:, :, None, None]


class DownBlock(nn.Module):
    def __init__(self, cin: int, cout: int, norm: bool):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm = nn.InstanceNorm2d(cout, affine=True) if norm else nn.Identity()

    def forward(self, x):
        return F.avg_pool2d(F.leaky_relu(self.norm(self.conv(x)), 0.2), 2)


class UpBlock(nn.Module):
    def __init__(self, cin: int, cout: int, style_dim: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.adain = AdaIN(style_dim, cout)

    def forward(self, x, s):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.leaky_relu(self.adain(self.conv(x), s), 0.2)


class Generator(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths(cfg.gen_blocks)
        self.stem = nn.Conv2d(cfg.channels, w[0], 3, padding=1)
        self.encoder = nn.ModuleList(DownBlock(w[i], w[i + 1], norm=True) for i in range(cfg.gen_blocks))
        self.decoder = nn.ModuleList(UpBlock(w[i + 1], w[i], cfg.style_dim)
                                     for i in reversed(range(cfg.gen_blocks)))
        self.to_img = nn.Conv2d(w[0], cfg.channels, 1)
        _he_init(self)
        for m in self.modules():
            if isinstance(m, AdaIN):
                m.reset_parameters()

    def forward(self, x, s):
        h = self.stem(x)
        for blk in self.encoder:
            h = blk(h)
        for blk in self.decoder:
            h = blk(h, s)
        return torch.tanh(self.to_img(h))


class _Trunk(nn.Module):
    """Shared conv stack ending in global average pooling."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        w = cfg.widths(cfg.enc_blocks)
        self.stem = nn.Conv2d(cfg.channels, w[0], 3, padding=1)
        self.blocks = nn.Sequential(*(DownBlock(w[i], w[i + 1], norm=False) for i in range(cfg.enc_blocks)))
        self.out_dim = w[-1]

    def forward(self, x):
        h = self.blocks(self.stem(x))
        return F.leaky_relu(h.mean(dim=(2, 3)), 0.2)


class StylingNetwork(nn.Module):
    """Shared trunk with one style head per domain and a softmax domain classifier."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = _Trunk(cfg)
        self.style_heads = nn.ModuleList(nn.Linear(self.trunk.out_dim, cfg.style_dim)
                                         for _ in range(cfg.num_domains))
        self.cls_head = nn.Linear(self.trunk.out_dim, cfg.num_domains)
        _he_init(self)

    def forward(self, x):
        """Returns (codes, logits) with codes of shape (N, num_domains, style_dim)."""
        h = self.trunk(x)
        codes = torch.stack([head(h) for head in self.style_heads], dim=1)
        return codes, self.cls_head(h)

    def style(self, x, domains):
        codes, _ = self(x)
        return codes[torch.arange(len(domains)), domains]


class Discriminator(nn.Module):
    """Shared trunk emitting one real/synthetic logit per domain branch."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = _Trunk(cfg)
        self.branches = nn.Linear(self.trunk.out_dim, cfg.num_domains)
        _he_init(self)

    def forward(self, x):
        return self.branches(self.trunk(x))


class CITGAN(nn.Module):
    """Container for the three networks built from one config."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.G = Generator(cfg)
        self.S = StylingNetwork(cfg)
        self.D = Discriminator(cfg)


# -- contract-checked forward functions --------------------------------------

def _check_images(x: torch.Tensor, cfg: NetConfig) -> None:
    expect = (cfg.channels, cfg.resolution, cfg.resolution)
    if x.dim() != 4 or tuple(x.shape[1:]) != expect:
        raise ContractError(f"expected images of shape (N, {expect[0]}, {expect[1]}, {expect[2]}), "
                            f"got {tuple(x.shape)}")


def check_domains(d: torch.Tensor, num_domains: int) -> None:
    if d.numel() and (int(d.min()) < 0 or int(d.max()) >= num_domains):
        raise ContractError(f"domain index out of range [0, {num_domains}): {d.tolist()}")


def generator_forward(G: Generator, x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    _check_images(x, G.cfg)
    if s.dim() != 2 or s.shape[0] != x.shape[0] or s.shape[1] != G.cfg.style_dim:
        raise ContractError(f"style codes must have shape ({x.shape[0]}, {G.cfg.style_dim}), got {tuple(s.shape)}")
    return G(x, s)


def styling_forward(S: StylingNetwork, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-domain style codes (N, |D|, style_dim) and class probabilities (N, |D|)."""
    _check_images(x, S.cfg)
    codes, logits = S(x)
    return codes, torch.softmax(logits, dim=1)


def discriminator_forward(D: Discriminator, x: torch.Tensor) -> torch.Tensor:
    _check_images(x, D.cfg)
    return D(x)


def to_network_range(pixels) -> torch.Tensor:
    """(N, H, W, C) array in [0, 1] -> (N, C, H, W) tensor in [-1, 1]."""
    t = torch.as_tensor(pixels, dtype=torch.float32)
    if t.dim() == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2).contiguous() * 2.0 - 1.0


def to_pixel_range(x: torch.Tensor):
    """(N, C, H, W) tensor in [-1, 1] -> (N, H, W, C) numpy array in [0, 1]."""
    return ((x.detach().permute(0, 2, 3, 1) + 1.0) / 2.0).clamp(0.0, 1.0).cpu().numpy()


# -- checkpoints ---------------------------------------------------------------

def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, model: CITGAN, optimizers: dict | None = None, step: int = 0,
                    extra: dict | None = None) -> None:
    """Write networks, optimizer moments, step counter and any extra state to ``path``."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "net_config": asdict(model.cfg),
        "config_hash": config_hash(asdict(model.cfg) | (extra or {}).get("train_config", {})),
        "step": step,
        "model": model.state_dict(),
        "optimizers": {k: o.state_dict() for k, o in (optimizers or {}).items()},
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def read_checkpoint(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint (no format_version)")
    v = payload["format_version"]
    if v != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} has checkpoint format version {v}; "
                              f"this build reads version {CHECKPOINT_VERSION}")
    return payload


def load_checkpoint(path) -> tuple[CITGAN, dict]:
    """Rebuild the model from ``path``. The raw payload (optimizer state, extras) is returned too."""
    payload = read_checkpoint(path)
    model = CITGAN(NetConfig(**payload["net_config"]))
    dtype = next(iter(payload["model"].values())).dtype
    model.to(dtype)
    model.load_state_dict(payload["model"])
    return model, payload
