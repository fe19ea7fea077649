"""Frechet distance between Gaussian fits of feature sets, with bootstrap distributions."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

EIG_TOL = 1e-8


class NumericalError(ArithmeticError):
    pass


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if self.sigma.shape != (self.mu.size, self.mu.size):
            raise ValueError(f"sigma shape {self.sigma.shape} does not match mean length {self.mu.size}")

    @property
    def dim(self) -> int:
        return self.mu.size


class RunningStats:
    """Mean and scatter matrix accumulated batch by batch.

    Batches are combined with the pairwise update of Chan et al., so the
    result does not depend on how the stream is chunked.
    """

    def __init__(self, dim: int | None = None):
        self.n = 0
        self.mean = None if dim is None else np.zeros(dim)
        self.m2 = None if dim is None else np.zeros((dim, dim))

    def update(self, batch: np.ndarray) -> "RunningStats":
        x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if x.shape[0] == 0:
            return self
        mean = x.mean(axis=0)
        c = x - mean
        return self.merge_moments(x.shape[0], mean, c.T @ c)

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.n == 0:
            return self
        return self.merge_moments(other.n, other.mean, other.m2)

    def merge_moments(self, n_b: int, mean_b: np.ndarray, m2_b: np.ndarray) -> "RunningStats":
        if self.n == 0:
            self.n, self.mean, self.m2 = n_b, mean_b.copy(), m2_b.copy()
            return self
        if mean_b.shape != self.mean.shape:
            raise ValueError(f"feature dimension changed: {self.mean.size} -> {mean_b.size}")
        n = self.n + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / n)
        self.m2 = self.m2 + m2_b + np.outer(delta, delta) * (self.n * n_b / n)
        self.n = n
        return self

    def finalize(self) -> GaussianStats:
        if self.n < 2:
            raise ValueError(f"need at least 2 samples for a covariance, got {self.n}")
        sigma = self.m2 / (self.n - 1)
        return GaussianStats(self.mean.copy(), (sigma + sigma.T) / 2, self.n)


@dataclass
class FeatureExtractor:
    """Maps an (N, H, W, C) pixel batch to (N, F) features."""

    fn: Callable[[np.ndarray], np.ndarray]
    identifier: str

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(pixels), dtype=np.float64)


def pixel_extractor(pool: int = 4) -> FeatureExtractor:
    """Average-pooled raw pixels; a crude extractor that needs no training."""

    def fn(px):
        n, h, w, c = px.shape
        return px.reshape(n, h // pool, pool, w // pool, pool, c).mean(axis=(2, 4)).reshape(n, -1)

    return FeatureExtractor(fn, f"pixels-pool{pool}")


def classifier_extractor(model, identifier: str = "domain-classifier") -> FeatureExtractor:
    from .classifiers import extract_features

    return FeatureExtractor(lambda px: extract_features(model, px), identifier)


def accumulate_stats(extractor: FeatureExtractor, images: Iterable[np.ndarray], chunk: int = 256) -> GaussianStats:
    """Stream images (each H x W x C, or batches of them) through ``extractor``."""
    stats = RunningStats()
    buf: list[np.ndarray] = []
    seen = 0

    def flush():
        nonlocal seen
        feats = extractor(np.stack(buf))
        bad = np.nonzero(~np.isfinite(feats).all(axis=1))[0]
        if bad.size:
            raise NumericalError(f"non-finite feature for image #{seen + int(bad[0])}")
        stats.update(feats)
        seen += len(buf)
        buf.clear()

    for img in images:
        img = np.asarray(img)
        batch = img if img.ndim == 4 else img[None]
        for one in batch:
            buf.append(one)
            if len(buf) == chunk:
                flush()
    if buf:
        flush()
    if stats.n < 2:
        raise ValueError(f"need at least 2 images, got {stats.n}")
    return stats.finalize()


def stats_from_features(features: np.ndarray) -> GaussianStats:
    return RunningStats().update(features).finalize()


def _psd_eigvals(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh((m + m.T) / 2)
    if w.size and w.min() < -EIG_TOL:
        raise NumericalError(f"{what} has eigenvalue {w.min():.3e} below -{EIG_TOL:g}")
    return np.clip(w, 0.0, None), v


def sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition."""
    w, v = _psd_eigvals(np.asarray(m, dtype=np.float64), "matrix")
    return (v * np.sqrt(w)) @ v.T


def trace_sqrt_product(sigma_r: np.ndarray, sigma_s: np.ndarray) -> float:
    """Tr sqrt(sigma_r sigma_s), evaluated as Tr sqrt(R^1/2 sigma_s R^1/2) with R^1/2 = sqrt(sigma_r)."""
    root = sqrtm_psd(sigma_r)
    w, _ = _psd_eigvals(root @ sigma_s @ root, "sqrt(sigma_r) sigma_s sqrt(sigma_r)")
    return float(np.sqrt(w).sum())


def fid(r: GaussianStats, s: GaussianStats) -> float:
    if r.dim != s.dim:
        from .networks import ContractError

        raise ContractError(f"feature dimensions differ: {r.dim} vs {s.dim}")
    diff = r.mu - s.mu
    value = diff @ diff + np.trace(r.sigma) + np.trace(s.sigma) - 2.0 * trace_sqrt_product(r.sigma, s.sigma)
    return max(float(value), 0.0)


# -- bootstrap distributions ----------------------------------------------------

@dataclass
class FidDistribution:
    domain: str
    values: np.ndarray
    bins: int = 10
    hist: tuple[np.ndarray, np.ndarray] = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.hist = np.histogram(self.values, bins=self.bins)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std(ddof=1)) if self.values.size > 1 else 0.0


def bootstrap_fid(real_features: np.ndarray, synth_features: np.ndarray, bootstrap: int, subset_size: int,
                  rng: np.random.Generator) -> np.ndarray:
    """FID of ``bootstrap`` random synthetic subsets (drawn without replacement) against all real features."""
    if subset_size < 2:
        raise ValueError("subset_size must be >= 2")
    if subset_size > len(synth_features):
        raise ValueError(f"subset_size {subset_size} exceeds synthetic set size {len(synth_features)}")
    real = stats_from_features(real_features)
    out = np.empty(bootstrap)
    for b in range(bootstrap):
        idx = rng.choice(len(synth_features), size=subset_size, replace=False)
        out[b] = fid(real, stats_from_features(synth_features[idx]))
    return out


def fid_distribution(extractor: FeatureExtractor, real_sets: Mapping[str, np.ndarray],
                     synthetic_sets: Mapping[str, np.ndarray], bootstrap: int = 20, subset_size: int | None = None,
                     seed: int = 0, bins: int = 10) -> dict[str, FidDistribution]:
    """Per-domain bootstrap FID distributions; ``subset_size`` defaults to the full synthetic set."""
    rng = np.random.default_rng(seed)
    out = {}
    for name in sorted(synthetic_sets):
        if name not in real_sets:
            raise KeyError(f"no real images for domain {name!r}")
        rf = extractor(real_sets[name])
        sf = extractor(synthetic_sets[name])
        k = len(sf) if subset_size is None else subset_size
        out[name] = FidDistribution(name, bootstrap_fid(rf, sf, bootstrap, k, rng), bins=bins)
    return out


def noise_floor(extractor: FeatureExtractor, real: np.ndarray, subset_size: int, bootstrap: int = 200,
                seed: int = 0, margin: float = 0.5) -> float:
    """Self-comparison FID level: (1 + margin) times the largest FID of random real subsets vs the full real set.

    Subset FIDs are right-skewed, so the band is multiplicative rather than a
    mean-plus-std rule.
    """
    f = extractor(real)
    vals = bootstrap_fid(f, f, bootstrap, subset_size, np.random.default_rng(seed))
    return float((1.0 + margin) * vals.max())


def write_fid_report(out_dir, dists: Mapping[str, FidDistribution]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "fid_report.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "mean_fid", "std_fid", "n_bootstrap"])
        for name, d in dists.items():
            w.writerow([name, f"{d.mean:.6f}", f"{d.std:.6f}", d.values.size])
    for name, d in dists.items():
        counts, edges = d.hist
        with open(out_dir / f"fid_hist_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([f"{lo:.6f}", f"{hi:.6f}", int(c)])
    return path
