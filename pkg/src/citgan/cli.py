"""Command-line entry point: ``citgan {toydata,train,generate,fid,pad,report}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .classifiers import ClassifierConfig, load_classifier, save_classifier, train_classifier
from .config import DEFAULTS, format_config, load_config, train_config
from .data import (ConfigError, DomainRegistry, by_domain, generate_toy_domains, load_manifest, save_samples,
                   stack_pixels, toy_registry, write_manifest)
from .fid import FidDistribution, classifier_extractor, fid_distribution, pixel_extractor, write_fid_report
from .networks import CheckpointError, ContractError, config_hash, load_checkpoint
from .pad import collect_results, run_experiment, write_results, write_roc
from .trainer import train
from .translate import synthesize_set

log = logging.getLogger("citgan")


def write_run_record(out_dir: Path, command: str, record: dict) -> dict:
    rec = {
        "command": command,
        "config_hash": config_hash(record),
        "seed": record.get("seed"),
        "versions": {"citgan": __version__, "python": platform.python_version(), "torch": torch.__version__,
                     "numpy": np.__version__},
        "inputs": record,
    }
    (out_dir / "run.json").write_text(json.dumps(rec, indent=2, sort_keys=True, default=str) + "\n")
    return rec


def _registry_for(cfg, *manifests) -> DomainRegistry:
    if cfg["data"]["domains"]:
        return DomainRegistry(n.strip() for n in str(cfg["data"]["domains"]).split(","))
    names: list[str] = []
    for m in manifests:
        with open(m, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(ln for ln in fh if not ln.startswith("#")):
                if row.get("domain") and row["domain"] not in names:
                    names.append(row["domain"])
    if not names:
        raise ConfigError("cannot infer domains: manifests are empty and [data] domains is unset")
    return DomainRegistry(names)


def _manifest_registry(*manifests) -> DomainRegistry:
    return _registry_for({"data": {"domains": ""}}, *manifests)


# -- subcommands ----------------------------------------------------------------

def cmd_toydata(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    registry = toy_registry(args.bonafide)
    samples = generate_toy_domains(args.seed, args.per_domain, args.resolution, include_bonafide=args.bonafide,
                                   noise=args.noise)
    if args.test_per_domain:
        samples += generate_toy_domains(args.seed + 10_000, args.test_per_domain, args.resolution,
                                        include_bonafide=args.bonafide, split="test", noise=args.noise)
    save_samples(samples, out / "images", registry)
    write_manifest(out / "manifest.csv", samples, registry)
    write_run_record(out, "toydata", vars(args) | {"func": None})
    print(f"wrote {len(samples)} images and {out / 'manifest.csv'}")


def cmd_train(args, cfg) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d = cfg["data"]
    if not d["manifest"]:
        raise ConfigError("[data] manifest is required for train")
    registry = _registry_for(cfg, d["manifest"])
    samples = load_manifest(d["manifest"], registry, d["resolution"], d["channels"], d["resize"])
    tc = train_config(cfg)
    trainer = train(tc, samples, registry, out, resume_from=args.resume)
    train_samples = [s for s in samples if s.split == "train"]
    e = cfg["extractor"]
    ecfg = ClassifierConfig(num_classes=registry.count, resolution=tc.resolution, channels=tc.channels,
                            width=e["width"], steps=e["steps"], batch_size=e["batch_size"], lr=e["lr"],
                            seed=tc.seed)
    clf = train_classifier(stack_pixels(train_samples), np.array([s.domain for s in train_samples]), ecfg)
    save_classifier(out / "extractor.pt", clf, {"registry": list(registry.names)})
    write_run_record(out, "train", {"config": cfg, "seed": tc.seed, "resume": args.resume})
    print(f"trained {trainer.step} steps -> {out / 'checkpoint.pt'}")


def parse_targets(text: str, registry: DomainRegistry) -> dict[int, int]:
    targets = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, _, count = part.partition("=")
        if not count:
            raise ConfigError(f"bad target {part!r}; expected name=count")
        try:
            targets[registry.index(name.strip())] = int(count)
        except KeyError as e:
            raise ConfigError(str(e).strip('"')) from None
    return targets


def cmd_generate(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, payload = load_checkpoint(args.checkpoint)
    registry = DomainRegistry(payload["extra"]["registry"])
    res, ch = model.cfg.resolution, model.cfg.channels
    sources = load_manifest(args.sources, registry, res, ch)
    refs = [s for s in load_manifest(args.references, registry, res, ch) if s.split == "train"]
    targets = parse_targets(args.targets, registry)
    synth = synthesize_set(model, sources, refs, targets, seed=args.seed, registry=registry)
    save_samples(synth, out / "images", registry, prefix="syn_")
    write_manifest(out / "manifest.csv", synth, registry, provenance=True)
    write_run_record(out, "generate", vars(args) | {"func": None})
    print(f"wrote {len(synth)} synthetic images and {out / 'manifest.csv'}")


def cmd_fid(args) -> None:
    out = Path(args.out)
    registry = _manifest_registry(args.real, args.synthetic)
    if args.extractor == "pixels":
        extractor, res, ch = pixel_extractor(), args.resolution, 1
    else:
        model, _ = load_classifier(args.extractor)
        extractor = classifier_extractor(model, f"classifier:{Path(args.extractor).name}")
        res, ch = model.cfg.resolution, model.cfg.channels
    real = by_domain(load_manifest(args.real, registry, res, ch))
    synth = by_domain(load_manifest(args.synthetic, registry, res, ch))
    real_sets = {registry.name(d): stack_pixels(v) for d, v in real.items()}
    synth_sets = {registry.name(d): stack_pixels(v) for d, v in synth.items()}
    dists = fid_distribution(extractor, real_sets, synth_sets, bootstrap=args.bootstrap, subset_size=args.subset,
                             seed=args.seed)
    path = write_fid_report(out, dists)
    write_run_record(out, "fid", vars(args) | {"func": None, "extractor_id": extractor.identifier})
    _print_fid(dists)
    print(f"report: {path}")


def _print_fid(dists: dict[str, FidDistribution]) -> None:
    print(f"{'domain':<16}{'mean_fid':>12}{'std_fid':>12}{'n':>6}")
    for name, d in dists.items():
        print(f"{name:<16}{d.mean:>12.4f}{d.std:>12.4f}{d.values.size:>6}")


def cmd_pad(args, cfg) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d, p = cfg["data"], cfg["pad"]
    if not d["manifest"]:
        raise ConfigError("[data] manifest is required for pad")
    gan = None
    if p["gan_checkpoint"]:
        gan, payload = load_checkpoint(p["gan_checkpoint"])
        registry = DomainRegistry(payload["extra"]["registry"])
    else:
        registry = _registry_for(cfg, d["manifest"])
    samples = load_manifest(d["manifest"], registry, d["resolution"], d["channels"], d["resize"])
    ccfg = ClassifierConfig(width=p["width"], steps=p["steps"], batch_size=p["batch_size"], lr=p["lr"],
                            balanced=p["balanced"])
    result, exp = run_experiment(args.experiment, samples, registry, gan, ccfg, seed=p["seed"],
                                 target=p["target"] or None)
    synth = [s for s in exp.train if s.provenance == "synthetic"]
    if synth:
        save_samples(synth, out / "synthetic", registry, prefix="syn_")
    write_manifest(out / "train_manifest.csv", exp.train, registry, provenance=True, comments=exp.notes)
    write_manifest(out / "test_manifest.csv", exp.test, registry, provenance=True)
    write_results(out / "pad_results.csv", [result])
    write_roc(out / "roc.csv", result)
    write_run_record(out, "pad", {"config": cfg, "experiment": args.experiment, "seed": p["seed"]})
    print(",".join(result.row()))


def cmd_report(args) -> None:
    runs = Path(args.runs)
    rows = collect_results(runs)
    if not rows:
        raise ConfigError(f"no pad_results.csv found under {runs}")
    cols = ["run", "experiment", "classifier", "tdr_at_0.1", "tdr_at_0.2", "tdr_at_1.0"]
    with open(runs / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(" | ".join(cols))
    for r in rows:
        print(" | ".join(r[c] for c in cols))


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="citgan", description=__doc__)
    ap.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("toydata", help="write procedural toy-domain images and a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-domain", type=int, default=100)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--test-per-domain", type=int, default=0)
    p.add_argument("--bonafide", action="store_true", help="add the bonafide 'rings' domain")
    p.add_argument("--noise", type=float, default=0.0)

    p = sub.add_parser("train", help="train the GAN and the feature-extractor classifier")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("generate", help="translate sources into reference domains")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sources", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--targets", required=True, help="name=count,name=count,...")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fid", help="per-domain bootstrap FID report")
    p.add_argument("--extractor", required=True, help="classifier checkpoint, or 'pixels'")
    p.add_argument("--real", required=True)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--bootstrap", type=int, default=20)
    p.add_argument("--subset", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=32, help="resize target for the pixel extractor")
    p.add_argument("--out", default=".")

    p = sub.add_parser("pad", help="run one PAD experiment")
    p.add_argument("--experiment", type=int, choices=[1, 2, 3, 4], required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="consolidate pad results across runs")
    p.add_argument("--runs", required=True)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_defaults:
        print(format_config(DEFAULTS))
        return 0
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    try:
        if args.command in ("train", "pad"):
            cfg = load_config(args.config)
            {"train": cmd_train, "pad": cmd_pad}[args.command](args, cfg)
        else:
            {"toydata": cmd_toydata, "generate": cmd_generate, "fid": cmd_fid, "report": cmd_report}[args.command](args)
    except (ConfigError, CheckpointError, ContractError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"citgan {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
