"""The four training loss terms and their weighted combination."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import torch
import torch.nn.functional as F

from .networks import ContractError, check_domains

LOSS_CSV_HEADER = ["step", "adv", "style", "cls", "cycle", "total"]


class TrainingDivergence(RuntimeError):
    def __init__(self, step, components: dict):
        self.step = step
        self.components = components
        parts = ", ".join(f"{k}={v}" for k, v in components.items())
        super().__init__(f"non-finite loss at step {step}: {parts}")


@dataclass(frozen=True)
class LossWeights:
    lambda_style: float = 1.0
    lambda_cls: float = 1.0
    lambda_cycle: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossReport:
    adv: float
    style: float
    cls: float
    cycle: float
    total: float

    def csv_row(self, step: int) -> list[str]:
        return [str(step)] + [repr(float(v)) for v in astuple(self)]


def _distance(a, b, norm: str):
    if norm == "l1":
        return (a - b).abs().mean()
    if norm == "l2":
        return ((a - b) ** 2).mean()
    raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")


def adversarial_terms(real_logits, d, fake_logits, d_prime):
    """Per-batch means of log sigma(D_d(x)) and log(1 - sigma(D_d'(fake))).

    ``real_logits``/``fake_logits`` are the full (N, |D|) branch outputs; the
    branch for each sample is selected by ``d`` / ``d_prime``.
    """
    for logits, dom in ((real_logits, d), (fake_logits, d_prime)):
        if logits.dim() != 2 or logits.shape[0] != len(dom):
            raise ContractError(f"logits {tuple(logits.shape)} do not match {len(dom)} domain labels")
        check_domains(dom, logits.shape[1])
    lr = real_logits.gather(1, d.view(-1, 1)).squeeze(1)
    lf = fake_logits.gather(1, d_prime.view(-1, 1)).squeeze(1)
    # log(1 - sigmoid(z)) == logsigmoid(-z)
    return F.logsigmoid(lr).mean(), F.logsigmoid(-lf).mean()


def adversarial_loss(real_logits, d, fake_logits, d_prime):
    """E[log sigma(D_d(x_real))] + E[log(1 - sigma(D_d'(x_fake)))]; the discriminator ascends this."""
    real_term, fake_term = adversarial_terms(real_logits, d, fake_logits, d_prime)
    return real_term + fake_term


def generator_adversarial_loss(fake_logits, d_prime):
    """Non-saturating generator objective: -E[log sigma(D_d'(fake))]."""
    check_domains(d_prime, fake_logits.shape[1])
    lf = fake_logits.gather(1, d_prime.view(-1, 1)).squeeze(1)
    return -F.logsigmoid(lf).mean()


def style_loss(s_prime, recovered, norm: str = "l1"):
    """Mean distance between the target style code and the one recovered from the fake image.

    ``recovered`` is S_{d'}(G(x, s')), i.e. the d'-head output on the generated image.
    """
    if s_prime.shape != recovered.shape:
        raise ContractError(f"style code shapes differ: {tuple(s_prime.shape)} vs {tuple(recovered.shape)}")
    return _distance(s_prime, recovered, norm)


def domain_classification_loss(cls_logits, d):
    """Cross-entropy of the Styling Network's softmax head at the true domain."""
    check_domains(d, cls_logits.shape[1])
    return F.cross_entropy(cls_logits, d)


def cycle_loss(x, reconstructed, norm: str = "l1"):
    """Mean distance between x and G(G(x, s'), s)."""
    if x.shape != reconstructed.shape:
        raise ContractError(f"image shapes differ: {tuple(x.shape)} vs {tuple(reconstructed.shape)}")
    return _distance(x, reconstructed, norm)


def _scalar(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def total_loss(adv, style, cls, cycle, weights: LossWeights, step=None) -> LossReport:
    comps = {k: _scalar(v) for k, v in (("adv", adv), ("style", style), ("cls", cls), ("cycle", cycle))}
    if not all(math.isfinite(v) for v in comps.values()):
        raise TrainingDivergence(step, comps)
    total = (comps["adv"] + weights.lambda_style * comps["style"] + weights.lambda_cls * comps["cls"]
             + weights.lambda_cycle * comps["cycle"])
    return LossReport(total=total, **comps)


def weighted_objective(adv, style, cls, cycle, weights: LossWeights):
    """Differentiable counterpart of :func:`total_loss` for backpropagation."""
    return adv + weights.lambda_style * style + weights.lambda_cls * cls + weights.lambda_cycle * cycle


# -- network-level forms ------------------------------------------------------

def adversarial_loss_nets(D, x_real, d, x_fake, d_prime):
    return adversarial_loss(D(x_real), d, D(x_fake), d_prime)


def style_loss_nets(G, S, x, s_prime, d_prime, norm: str = "l1"):
    return style_loss(s_prime, S.style(G(x, s_prime), d_prime), norm)


def domain_classification_loss_nets(S, x, d):
    _, logits = S(x)
    return domain_classification_loss(logits, d)


def cycle_loss_nets(G, x, s, s_prime, norm: str = "l1"):
    return cycle_loss(x, G(G(x, s_prime), s), norm)
