"""Post-training synthesis and the training-set compositions of the four PAD experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch

from .data import ConfigError, DomainRegistry, ImageSample, by_domain, stack_pixels
from .networks import CITGAN, ContractError, to_network_range, to_pixel_range

BONAFIDE = "bonafide"


def _check_resolution(model: CITGAN, samples: Sequence[ImageSample]) -> None:
    cfg = model.cfg
    for s in samples:
        if s.pixels.shape != (cfg.resolution, cfg.resolution, cfg.channels):
            raise ContractError(f"image shape {s.pixels.shape} does not match the checkpoint's "
                                f"{(cfg.resolution, cfg.resolution, cfg.channels)}")


@torch.no_grad()
def translate_batch(model: CITGAN, sources: Sequence[ImageSample], references: Sequence[ImageSample],
                    batch_size: int = 128) -> list[ImageSample]:
    """G(source, S_{d'}(reference)) for aligned source/reference lists."""
    if len(sources) != len(references):
        raise ValueError("sources and references must have equal length")
    _check_resolution(model, sources)
    _check_resolution(model, references)
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(sources), batch_size):
        src, ref = sources[i:i + batch_size], references[i:i + batch_size]
        x = to_network_range(stack_pixels(src)).to(dtype)
        y = to_network_range(stack_pixels(ref)).to(dtype)
        dp = torch.tensor([r.domain for r in ref])
        fake = to_pixel_range(model.G(x, model.S.style(y, dp)).float())
        for px, s, r in zip(fake, src, ref):
            out.append(ImageSample.from_array(px, r.domain, split="train", pa_class=r.pa_class,
                                              provenance="synthetic", channels=r.channels,
                                              meta={"source": s, "reference": r}))
    return out


def translate(model: CITGAN, source: ImageSample, reference: ImageSample) -> ImageSample:
    """Translate one source image into the reference's domain."""
    return translate_batch(model, [source], [reference])[0]


def pair_schedule(n_sources: int, references: Mapping[int, Sequence[int]], targets: Mapping[int, int],
                  rng: np.random.Generator) -> list[tuple[int, int]]:
    """(source index, reference index) pairs meeting ``targets`` per domain.

    Sources are consumed without replacement from a shuffled order and
    reshuffled once exhausted; references are drawn uniformly within the
    target domain.
    """
    if n_sources < 1:
        raise ConfigError("no source images to translate")
    order = rng.permutation(n_sources)
    pos = 0
    pairs = []
    for dom in sorted(targets):
        count = targets[dom]
        if count < 0:
            raise ValueError(f"negative target for domain {dom}")
        if count == 0:
            continue
        refs = references.get(dom, ())
        if len(refs) == 0:
            raise ConfigError(f"no reference images for domain index {dom}")
        for _ in range(count):
            if pos == n_sources:
                order, pos = rng.permutation(n_sources), 0
            pairs.append((int(order[pos]), int(refs[rng.integers(len(refs))])))
            pos += 1
    return pairs


def synthesize_set(model: CITGAN, sources: Sequence[ImageSample], references: Sequence[ImageSample],
                   targets: Mapping[int, int], seed: int = 0,
                   registry: DomainRegistry | None = None) -> list[ImageSample]:
    """Generate ``targets[d]`` synthetic images for every domain ``d``."""
    ref_groups = {d: [i for i, r in enumerate(references) if r.domain == d] for d in targets}
    for d, c in targets.items():
        if c > 0 and not ref_groups[d]:
            name = registry.name(d) if registry else str(d)
            raise ConfigError(f"requested {c} synthetic images for domain {name!r} but it has no references")
    pairs = pair_schedule(len(sources), ref_groups, targets, np.random.default_rng(seed))
    return translate_batch(model, [sources[i] for i, _ in pairs], [references[j] for _, j in pairs])


# -- experiment compositions ------------------------------------------------------

@dataclass(frozen=True)
class DomainPlan:
    real: int
    synthetic: int

    @property
    def total(self) -> int:
        return self.real + self.synthetic


def plan_experiment(experiment_id: int, counts: Mapping[str, int], target: int | None = None) -> dict[str, DomainPlan]:
    """Per-PA-domain (real kept, synthetic added) counts for one experiment.

    1: all real. 2: ceil(n/2) real kept, floor(n/2) synthetic made from the
    held-out half. 3: n synthetic, no real. 4: real capped at ``target`` and
    topped up with synthetic to ``target`` (default: the largest count).
    """
    if experiment_id == 1:
        return {k: DomainPlan(n, 0) for k, n in counts.items()}
    if experiment_id == 2:
        return {k: DomainPlan(math.ceil(n / 2), n // 2) for k, n in counts.items()}
    if experiment_id == 3:
        return {k: DomainPlan(0, n) for k, n in counts.items()}
    if experiment_id == 4:
        t = max(counts.values(), default=0) if target is None else target
        if t < 0:
            raise ValueError("target must be >= 0")
        return {k: DomainPlan(min(n, t), t - min(n, t)) for k, n in counts.items()}
    raise ValueError(f"experiment_id must be 1, 2, 3 or 4, got {experiment_id}")


@dataclass
class ExperimentSet:
    experiment_id: int
    train: list[ImageSample]
    test: list[ImageSample]
    plan: dict[str, DomainPlan]
    notes: list[str] = field(default_factory=list)


def build_experiment_set(experiment_id: int, samples: Sequence[ImageSample], registry: DomainRegistry,
                         model: CITGAN | None = None, seed: int = 0, target: int | None = None) -> ExperimentSet:
    """Train/test composition for one experiment.

    The test list is every test-split sample in input order, so it is the same
    for all four experiments. Bonafide training samples are kept as-is and
    also serve as translation sources; PA domains follow :func:`plan_experiment`.
    """
    train = [s for s in samples if s.split == "train"]
    test = [s for s in samples if s.split == "test"]
    groups = by_domain(train)
    bona_dom = {s.domain for s in train if s.pa_class == BONAFIDE}
    pa_doms = [d for d in range(registry.count) if d not in bona_dom]
    counts = {registry.name(d): len(groups.get(d, [])) for d in pa_doms}
    plan = plan_experiment(experiment_id, counts, target)
    rng = np.random.default_rng(seed)
    sources = [s for s in train if s.domain in bona_dom]

    out = list(sources)
    synth_refs: list[ImageSample] = []
    targets: dict[int, int] = {}
    for d in pa_doms:
        members = groups.get(d, [])
        p = plan[registry.name(d)]
        perm = [members[i] for i in rng.permutation(len(members))]
        kept = perm[:p.real]
        out.extend(kept)
        # experiment 2 draws references only from the held-out part
        synth_refs.extend(perm[p.real:] if experiment_id == 2 else members)
        targets[d] = p.synthetic

    if any(targets.values()):
        if model is None:
            raise ConfigError(f"experiment {experiment_id} needs a trained GAN checkpoint")
        if not sources:
            raise ConfigError("no bonafide training images to use as translation sources")
        out.extend(synthesize_set(model, sources, synth_refs, targets, seed=seed + 1, registry=registry))

    notes = [f"experiment {experiment_id}"]
    if experiment_id == 2:
        odd = [k for k, n in counts.items() if n % 2]
        notes.append("real kept = ceil(n/2), synthetic = floor(n/2)"
                     + (f"; odd counts in {','.join(odd)}" if odd else ""))
    notes.extend(f"{k}: real={v.real} synthetic={v.synthetic}" for k, v in plan.items())
    return ExperimentSet(experiment_id, out, test, plan, notes)
