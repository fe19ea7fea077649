"""Domain registry, CSV manifests, image I/O and procedural toy domains."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

MANIFEST_HEADER = ["path", "domain", "split", "pa_class"]
PROVENANCE_HEADER = MANIFEST_HEADER + ["provenance"]
SPLITS = ("train", "test")
TOY_DOMAINS = ("stripes", "checker", "blobs")
TOY_BONAFIDE = "rings"

_RESAMPLE = {
    "nearest": Image.Resampling.NEAREST,
    "bilinear": Image.Resampling.BILINEAR,
    "bicubic": Image.Resampling.BICUBIC,
    "lanczos": Image.Resampling.LANCZOS,
}


class ConfigError(Exception):
    """Fatal problem with an input file or configuration value."""


class ManifestError(ConfigError):
    pass


class DomainRegistry:
    """Ordered set of domain names with one-hot label encoding."""

    def __init__(self, names: Iterable[str]):
        names = [str(n) for n in names]
        if not names:
            raise ValueError("registry needs at least one domain")
        if any(not n for n in names):
            raise ValueError("domain names must be nonempty")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate domain names in {names}")
        self.names = tuple(names)
        self._index = {n: i for i, n in enumerate(self.names)}

    @property
    def count(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, DomainRegistry) and self.names == other.names

    def __repr__(self) -> str:
        return f"DomainRegistry({list(self.names)!r})"

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown domain {name!r}; registry has {list(self.names)}") from None

    def name(self, index: int) -> str:
        if not 0 <= index < self.count:
            raise IndexError(f"domain index {index} out of range for {self.count} domains")
        return self.names[index]

    def one_hot(self, index: int) -> np.ndarray:
        self.name(index)
        v = np.zeros(self.count, dtype=np.float32)
        v[index] = 1.0
        return v


@dataclass(eq=False)
class ImageSample:
    """One image plus labels.

    ``pixels`` is channel-last (H, W, C) float32 in [0, 1]. When a sample is
    built from a manifest the file is only decoded on first access.
    """

    domain: int
    split: str = "train"
    pa_class: str = ""
    path: str | None = None
    provenance: str = "real"
    resolution: int | None = None
    channels: int = 1
    resize: str = "bilinear"
    meta: dict = field(default_factory=dict, repr=False)
    _pixels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self._pixels is not None:
            self._pixels = _check_pixels(self._pixels)

    @classmethod
    def from_array(cls, pixels: np.ndarray, domain: int, **kw) -> "ImageSample":
        return cls(domain=domain, _pixels=np.asarray(pixels, dtype=np.float32), **kw)

    @property
    def pixels(self) -> np.ndarray:
        if self._pixels is None:
            if self.path is None:
                raise ValueError("sample has neither pixels nor a path")
            self._pixels = read_image(self.path, self.resolution, self.channels, self.resize)
        return self._pixels

    def with_pixels(self, pixels: np.ndarray, **changes) -> "ImageSample":
        fields = dict(domain=self.domain, split=self.split, pa_class=self.pa_class,
                      path=None, provenance=self.provenance, channels=self.channels)
        fields.update(changes)
        return ImageSample.from_array(pixels, **fields)

    def descriptor(self) -> tuple:
        return (self.path, self.domain, self.split, self.pa_class)


def _check_pixels(px: np.ndarray) -> np.ndarray:
    px = np.asarray(px, dtype=np.float32)
    if px.ndim == 2:
        px = px[:, :, None]
    if px.ndim != 3:
        raise ValueError(f"expected H x W x C pixels, got shape {px.shape}")
    if px.size and (px.min() < 0.0 or px.max() > 1.0 or not np.isfinite(px).all()):
        raise ValueError("pixel values must lie in [0, 1]")
    return px


def read_image(path: str | os.PathLike, resolution: int | None = None, channels: int = 1,
               resize: str = "bilinear") -> np.ndarray:
    """Decode an image file to channel-last float32 in [0, 1]."""
    with Image.open(path) as im:
        im = im.convert("L" if channels == 1 else "RGB")
        if resolution is not None and im.size != (resolution, resolution):
            im = im.resize((resolution, resolution), _RESAMPLE[resize])
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def write_image(path: str | os.PathLike, pixels: np.ndarray) -> None:
    px = np.clip(np.asarray(pixels), 0.0, 1.0)
    px = np.rint(px * 255.0).astype(np.uint8)
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[:, :, 0]
    Image.fromarray(px).save(path)


def load_manifest(path: str | os.PathLike, registry: DomainRegistry, resolution: int | None = None,
                  channels: int = 1, resize: str = "bilinear", check_files: bool = True) -> list[ImageSample]:
    """Parse a manifest CSV into lazily-decoded samples.

    Relative image paths are resolved against the manifest's directory. Rows
    whose image cannot be opened are skipped with a warning.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    if resize not in _RESAMPLE:
        raise ConfigError(f"unknown resize method {resize!r}; choose from {sorted(_RESAMPLE)}")
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ManifestError(f"{path}: missing header row")
    header = rows[0]
    if header not in (MANIFEST_HEADER, PROVENANCE_HEADER):
        raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}")
    has_prov = len(header) == len(PROVENANCE_HEADER)

    samples = []
    for rownum, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ManifestError(f"{path}: row {rownum} has {len(row)} fields, expected {len(header)}")
        img, dom, split, pa = row[:4]
        if dom not in registry:
            raise ManifestError(f"{path}: row {rownum}: unknown domain {dom!r}")
        if split not in SPLITS:
            raise ManifestError(f"{path}: row {rownum}: split must be train or test, got {split!r}")
        full = img if os.path.isabs(img) else str(base / img)
        if check_files and not _readable_image(full):
            log.warning("skipping row %d: cannot read image %s", rownum, full)
            continue
        samples.append(ImageSample(domain=registry.index(dom), split=split, pa_class=pa, path=full,
                                   provenance=row[4] if has_prov else "real",
                                   resolution=resolution, channels=channels, resize=resize))
    if not samples:
        log.warning("manifest %s contains no usable rows", path)
    return samples


def _readable_image(path: str) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (OSError, ValueError, SyntaxError):
        return False


def write_manifest(path: str | os.PathLike, samples: Sequence[ImageSample], registry: DomainRegistry,
                   provenance: bool = False, comments: Sequence[str] = ()) -> None:
    """Write samples as a manifest. Paths are stored relative to the manifest when possible."""
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROVENANCE_HEADER if provenance else MANIFEST_HEADER)
        for s in samples:
            if s.path is None:
                raise ValueError("cannot write a manifest row for a sample without a file path")
            if "," in s.path:
                raise ValueError(f"commas are not allowed in manifest paths: {s.path}")
            p = Path(s.path).resolve()
            rel = os.path.relpath(p, base) if p.is_relative_to(base) else str(p)
            row = [rel, registry.name(s.domain), s.split, s.pa_class]
            if provenance:
                row.append(s.provenance)
            w.writerow(row)


def save_samples(samples: Sequence[ImageSample], out_dir: str | os.PathLike, registry: DomainRegistry,
                 prefix: str = "") -> list[ImageSample]:
    """Write each sample's pixels as PNG under ``out_dir/<domain>/`` and attach the path."""
    out_dir = Path(out_dir)
    counters: dict[str, int] = {}
    for s in samples:
        name = registry.name(s.domain)
        k = counters.get(name, 0)
        counters[name] = k + 1
        d = out_dir / name
        d.mkdir(parents=True, exist_ok=True)
        p = d / f"{prefix}{name}_{s.split}_{k:05d}.png"
        write_image(p, s.pixels)
        s.path = str(p)
    return list(samples)


# -- procedural toy domains -------------------------------------------------

def stripe_pattern(resolution: int, period: int, phase: int) -> np.ndarray:
    """Horizontal stripes: blocks of ``period`` rows alternating 1 and 0."""
    rows = (np.arange(resolution) + phase) // period % 2 == 0
    return np.repeat(rows.astype(np.float32)[:, None], resolution, axis=1)


def checker_pattern(resolution: int, cell: int, offset_y: int, offset_x: int) -> np.ndarray:
    """Checkerboard with cells of 1.0 and 0.6, so its mean brightness sits above the stripes."""
    r = (np.arange(resolution) + offset_y) // cell
    c = (np.arange(resolution) + offset_x) // cell
    on = (r[:, None] + c[None, :]) % 2 == 0
    return np.where(on, 1.0, 0.6).astype(np.float32)


def blob_pattern(resolution: int, centers: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float32)
    img = np.zeros((resolution, resolution), dtype=np.float32)
    for (cy, cx), sg in zip(centers, sigmas):
        img += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sg * sg))
    return np.clip(img, 0.0, 1.0)


def ring_pattern(resolution: int, center: tuple[float, float], wavelength: float, phase: float) -> np.ndarray:
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float32)
    r = np.hypot(yy - center[0], xx - center[1])
    return (0.5 + 0.5 * np.cos(2 * np.pi * r / wavelength + phase)).astype(np.float32)


def _contrast(pattern: np.ndarray, c: float) -> np.ndarray:
    # scale about mid-gray so that every value stays inside [0, 1]
    return (0.5 + c * (pattern - 0.5)).astype(np.float32)


def _toy_image(kind: str, rng: np.random.Generator, res: int) -> np.ndarray:
    if kind == "stripes":
        period = int(rng.choice([3, 4, 5]))
        pat = stripe_pattern(res, period, int(rng.integers(0, 2 * period)))
    elif kind == "checker":
        cell = int(rng.choice([3, 4, 5]))
        pat = checker_pattern(res, cell, int(rng.integers(0, 2 * cell)), int(rng.integers(0, 2 * cell)))
    elif kind == "blobs":
        n = int(rng.integers(2, 6))
        centers = rng.uniform(0, res, size=(n, 2))
        sigmas = rng.uniform(0.06 * res, 0.1 * res, size=n)
        pat = blob_pattern(res, centers, sigmas)
    elif kind == "rings":
        center = tuple(rng.uniform(0.35 * res, 0.65 * res, size=2))
        pat = ring_pattern(res, center, float(rng.uniform(0.15 * res, 0.3 * res)),
                           float(rng.uniform(0, 2 * np.pi)))
    else:
        raise ValueError(f"unknown toy domain {kind!r}")
    return _contrast(pat, float(rng.uniform(0.6, 1.0)))


def generate_toy_domains(seed: int, per_domain: int, resolution: int = 32, include_bonafide: bool = False,
                         split: str = "train", noise: float = 0.0) -> list[ImageSample]:
    """Procedural stand-ins for image domains.

    Produces ``per_domain`` images for each of stripes, checker and blobs (in
    that order of domain index), plus a leading ``rings`` bonafide domain when
    ``include_bonafide`` is set. ``noise`` adds clipped Gaussian pixel noise.
    """
    if per_domain < 1:
        raise ValueError("per_domain must be >= 1")
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    kinds = ([TOY_BONAFIDE] if include_bonafide else []) + list(TOY_DOMAINS)
    rng = np.random.default_rng(seed)
    out = []
    for d, kind in enumerate(kinds):
        for _ in range(per_domain):
            img = _toy_image(kind, rng, resolution)
            if noise > 0:
                img = np.clip(img + rng.normal(0.0, noise, img.shape), 0.0, 1.0).astype(np.float32)
            pa = "bonafide" if kind == TOY_BONAFIDE else kind
            out.append(ImageSample.from_array(img[:, :, None], d, split=split, pa_class=pa))
    return out


def toy_registry(include_bonafide: bool = False) -> DomainRegistry:
    return DomainRegistry(([TOY_BONAFIDE] if include_bonafide else []) + list(TOY_DOMAINS))


def stack_pixels(samples: Sequence[ImageSample]) -> np.ndarray:
    """(N, H, W, C) float32 array of the samples' pixels."""
    return np.stack([s.pixels for s in samples]).astype(np.float32)


def by_domain(samples: Iterable[ImageSample]) -> dict[int, list[ImageSample]]:
    groups: dict[int, list[ImageSample]] = {}
    for s in samples:
        groups.setdefault(s.domain, []).append(s)
    return groups
