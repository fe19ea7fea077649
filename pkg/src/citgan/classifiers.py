"""Small CNN classifiers: the toy domain classifier and the reference PAD classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .networks import CheckpointError, NetConfig, _Trunk, _he_init, to_network_range

CLASSIFIER_VERSION = 1


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int = 2
    resolution: int = 32
    channels: int = 1
    width: int = 16
    steps: int = 600
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    balanced: bool = False


class SmallCNN(nn.Module):
    """Conv trunk + one linear layer. ``features`` exposes the penultimate activations."""

    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = _Trunk(NetConfig(num_domains=max(cfg.num_classes, 1), resolution=cfg.resolution,
                                      channels=cfg.channels, width=cfg.width))
        out = 1 if cfg.num_classes == 2 else cfg.num_classes
        self.head = nn.Linear(self.trunk.out_dim, out)
        _he_init(self)

    @property
    def feature_dim(self) -> int:
        return self.trunk.out_dim

    def features(self, x):
        return self.trunk(x)

    def forward(self, x):
        return self.head(self.trunk(x))


def train_classifier(pixels: np.ndarray, labels: np.ndarray, cfg: ClassifierConfig) -> SmallCNN:
    """Minibatch Adam on (N, H, W, C) pixels in [0, 1]. Deterministic given ``cfg.seed``.

    With ``balanced`` set, minibatches draw each class equally often.
    """
    labels = np.asarray(labels, dtype=np.int64)
    present = set(np.unique(labels).tolist())
    missing = sorted(set(range(cfg.num_classes)) - present)
    if missing:
        raise ValueError(f"no training samples for class(es) {missing}")
    x_all = to_network_range(pixels)
    y_all = torch.as_tensor(labels)
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        model = SmallCNN(cfg)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    members = [torch.nonzero(y_all == c).flatten() for c in range(cfg.num_classes)]
    for _ in range(cfg.steps):
        if cfg.balanced:
            cls = torch.randint(cfg.num_classes, (cfg.batch_size,), generator=gen)
            idx = torch.stack([members[c][torch.randint(len(members[c]), (1,), generator=gen)][0]
                               for c in cls.tolist()])
        else:
            idx = torch.randint(len(y_all), (cfg.batch_size,), generator=gen)
        out = model(x_all[idx])
        if cfg.num_classes == 2:
            loss = F.binary_cross_entropy_with_logits(out.squeeze(1), y_all[idx].to(out.dtype))
        else:
            loss = F.cross_entropy(out, y_all[idx])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    model.eval()
    return model


@torch.no_grad()
def _batched(fn, pixels: np.ndarray, batch: int = 256) -> np.ndarray:
    outs = [fn(to_network_range(pixels[i:i + batch])) for i in range(0, len(pixels), batch)]
    return torch.cat(outs).double().numpy() if outs else np.zeros((0,))


def predict_proba(model: SmallCNN, pixels: np.ndarray) -> np.ndarray:
    """Class probabilities (N, K); for a binary model, the probability of class 1 (N,)."""
    if model.cfg.num_classes == 2:
        return _batched(lambda x: torch.sigmoid(model(x)).squeeze(1), pixels)
    return _batched(lambda x: torch.softmax(model(x), dim=1), pixels)


def extract_features(model: SmallCNN, pixels: np.ndarray) -> np.ndarray:
    return _batched(model.features, pixels)


def save_classifier(path, model: SmallCNN, meta: dict | None = None) -> None:
    torch.save({"format_version": CLASSIFIER_VERSION, "config": asdict(model.cfg),
                "state": model.state_dict(), "meta": meta or {}}, path)


def load_classifier(path) -> tuple[SmallCNN, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as e:
        raise CheckpointError(f"cannot read classifier {path}: {e}") from e
    v = payload.get("format_version") if isinstance(payload, dict) else None
    if v != CLASSIFIER_VERSION:
        raise CheckpointError(f"{path} has classifier format version {v}; expected {CLASSIFIER_VERSION}")
    model = SmallCNN(ClassifierConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload["meta"]
