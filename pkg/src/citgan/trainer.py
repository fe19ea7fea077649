"""Alternating min-max training of D against G and S."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import losses as L
from .data import ConfigError, DomainRegistry, ImageSample, stack_pixels
from .networks import CITGAN, NetConfig, load_checkpoint, save_checkpoint, to_network_range

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    d_steps: int = 1
    lambda_style: float = 1.0
    lambda_cls: float = 1.0
    lambda_cycle: float = 1.0
    norm: str = "l1"
    style_dim: int = 16
    resolution: int = 32
    channels: int = 1
    width: int = 16
    seed: int = 0
    checkpoint_interval: int = 500
    log_interval: int = 1

    def __post_init__(self):
        for name in ("batch_size", "d_steps", "style_dim", "resolution", "channels", "width",
                     "checkpoint_interval", "log_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        # lr == 0 is accepted so a side can be frozen
        for name in ("lr_g", "lr_d"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"norm must be l1 or l2, got {self.norm!r}")
        self.weights  # validates lambdas

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights(self.lambda_style, self.lambda_cls, self.lambda_cycle)

    def net_config(self, num_domains: int) -> NetConfig:
        return NetConfig(num_domains=num_domains, style_dim=self.style_dim, resolution=self.resolution,
                         channels=self.channels, width=self.width)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Batch:
    x: torch.Tensor         # source images
    d: torch.Tensor         # source domains
    y: torch.Tensor         # reference images
    d_prime: torch.Tensor   # reference (target) domains


class Trainer:
    """Owns the networks, both optimizers and the sampling RNG."""

    def __init__(self, config: TrainConfig, samples: Sequence[ImageSample], registry: DomainRegistry,
                 dtype=torch.float32):
        self.config = config
        self.registry = registry
        train = [s for s in samples if s.split == "train"]
        counts = np.bincount([s.domain for s in train], minlength=registry.count)
        for i, c in enumerate(counts):
            if c == 0:
                raise ConfigError(f"domain {registry.name(i)!r} has no training samples")
        self.images = to_network_range(stack_pixels(train)).to(dtype)
        expect = (config.channels, config.resolution, config.resolution)
        if tuple(self.images.shape[1:]) != expect:
            raise ConfigError(f"training images have shape {tuple(self.images.shape[1:])}, config expects {expect}")
        self.domains = torch.tensor([s.domain for s in train], dtype=torch.long)
        self.domain_members = [torch.nonzero(self.domains == i).flatten() for i in range(registry.count)]

        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            self.model = CITGAN(config.net_config(registry.count)).to(dtype)
        self.rng = torch.Generator().manual_seed(config.seed + 1)
        b = (config.beta1, config.beta2)
        self.opt_d = torch.optim.Adam(self.model.D.parameters(), lr=config.lr_d, betas=b)
        self.opt_gs = torch.optim.Adam(list(self.model.G.parameters()) + list(self.model.S.parameters()),
                                       lr=config.lr_g, betas=b)
        self.step = 0

    # -- sampling ------------------------------------------------------------

    def sample_batch(self) -> Batch:
        """Uniform source images; per source a uniform target domain and a reference from it."""
        n = self.config.batch_size
        src = torch.randint(len(self.domains), (n,), generator=self.rng)
        d_prime = torch.randint(self.registry.count, (n,), generator=self.rng)
        ref = torch.empty(n, dtype=torch.long)
        for i, dp in enumerate(d_prime.tolist()):
            members = self.domain_members[dp]
            ref[i] = members[torch.randint(len(members), (1,), generator=self.rng)]
        return Batch(self.images[src], self.domains[src], self.images[ref], d_prime)

    # -- one iteration -------------------------------------------------------

    def discriminator_step(self, b: Batch) -> float:
        G, S, D = self.model.G, self.model.S, self.model.D
        with torch.no_grad():
            fake = G(b.x, S.style(b.y, b.d_prime))
        objective = L.adversarial_loss(D(b.x), b.d, D(fake), b.d_prime)
        self.opt_d.zero_grad(set_to_none=True)
        (-objective).backward()  # ascent
        self.opt_d.step()
        return objective.item()

    def generator_step(self, b: Batch) -> L.LossReport:
        cfg = self.config
        G, S, D = self.model.G, self.model.S, self.model.D
        n = len(b.x)
        idx = torch.arange(n)
        D.requires_grad_(False)
        try:
            codes, cls_logits = S(torch.cat([b.x, b.y]))
            s_src = codes[:n][idx, b.d]
            s_ref = codes[n:][idx, b.d_prime]
            fake = G(b.x, s_ref)
            fake_logits = D(fake)
            adv_g = L.generator_adversarial_loss(fake_logits, b.d_prime)
            style = L.style_loss(s_ref, S.style(fake, b.d_prime), cfg.norm)
            cls = L.domain_classification_loss(cls_logits[:n], b.d)
            cycle = L.cycle_loss(b.x, G(fake, s_src), cfg.norm)
            with torch.no_grad():
                adv = L.adversarial_loss(D(b.x), b.d, fake_logits, b.d_prime)
            report = L.total_loss(adv, style, cls, cycle, cfg.weights, step=self.step)
            objective = L.weighted_objective(adv_g, style, cls, cycle, cfg.weights)
            self.opt_gs.zero_grad(set_to_none=True)
            objective.backward()
            self.opt_gs.step()
        finally:
            D.requires_grad_(True)
        return report

    def train_step(self, batch: Batch | None = None) -> L.LossReport:
        """One D ascent step (repeated ``d_steps`` times) then one joint G+S descent step."""
        batch = batch if batch is not None else self.sample_batch()
        for _ in range(self.config.d_steps):
            self.discriminator_step(batch)
        report = self.generator_step(batch)
        self.step += 1
        return report

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.model, {"d": self.opt_d, "gs": self.opt_gs}, step=self.step,
                        extra={"train_config": asdict(self.config), "registry": list(self.registry.names),
                               "rng_state": self.rng.get_state()})

    @classmethod
    def resume(cls, path, samples: Sequence[ImageSample], config: TrainConfig | None = None) -> "Trainer":
        model, payload = load_checkpoint(path)
        extra = payload["extra"]
        saved = TrainConfig.from_dict(extra["train_config"])
        config = config or saved
        if config.net_config(model.cfg.num_domains) != model.cfg:
            raise ConfigError("network settings in the config differ from the checkpoint")
        dtype = next(model.parameters()).dtype
        t = cls(config, samples, DomainRegistry(extra["registry"]), dtype=dtype)
        t.model.load_state_dict(model.state_dict())
        t.opt_d.load_state_dict(payload["optimizers"]["d"])
        t.opt_gs.load_state_dict(payload["optimizers"]["gs"])
        for opt, lr in ((t.opt_d, config.lr_d), (t.opt_gs, config.lr_g)):
            for g in opt.param_groups:
                g["lr"] = lr
        t.rng.set_state(extra["rng_state"])
        t.step = payload["step"]
        return t


def _open_loss_log(path: Path, append: bool):
    fresh = not (append and path.exists())
    fh = open(path, "w" if fresh else "a", newline="")
    w = csv.writer(fh, lineterminator="\n")
    if fresh:
        w.writerow(L.LOSS_CSV_HEADER)
    return fh, w


def train(config: TrainConfig, samples: Sequence[ImageSample], registry: DomainRegistry, out_dir,
          resume_from=None, until_step: int | None = None) -> Trainer:
    """Run training to ``config.steps`` (or ``until_step``), writing checkpoints and ``losses.csv``.

    Checkpoints go to ``checkpoint_<step>.pt`` every ``checkpoint_interval``
    steps; ``checkpoint.pt`` always holds the latest state.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        trainer = Trainer.resume(resume_from, samples, config)
    else:
        trainer = Trainer(config, samples, registry)
    end = config.steps if until_step is None else until_step
    fh, writer = _open_loss_log(out_dir / "losses.csv", append=resume_from is not None)
    if trainer.step == 0:
        trainer.save(out_dir / f"checkpoint_{0:06d}.pt")
    t0 = time.perf_counter()
    try:
        while trainer.step < end:
            report = trainer.train_step()
            if trainer.step % config.log_interval == 0:
                writer.writerow(report.csv_row(trainer.step))
            if trainer.step % config.checkpoint_interval == 0:
                trainer.save(out_dir / f"checkpoint_{trainer.step:06d}.pt")
            if trainer.step % 500 == 0:
                log.info("step %d  total=%.4f cycle=%.4f  (%.1fs)", trainer.step, report.total,
                         report.cycle, time.perf_counter() - t0)
    finally:
        fh.close()
    trainer.save(out_dir / "checkpoint.pt")
    return trainer


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def mean_window(values: Sequence[float], first: bool, n: int = 50) -> float:
    vals = list(values)[:n] if first else list(values)[-n:]
    return float(np.mean(vals)) if vals else math.nan



