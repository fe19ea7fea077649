"""End-to-end acceptance checks, one test per criterion.

Each test records a verdict through the ``criterion`` fixture; the run ends
with one PASS/FAIL line per criterion. The two training-based checks (5, 8)
take several minutes on a CPU.
"""

import math
import time

import numpy as np
import pytest
import torch

from citgan import losses as L
from citgan.classifiers import ClassifierConfig, extract_features, predict_proba, train_classifier
from citgan.data import by_domain, generate_toy_domains, save_samples, stack_pixels, toy_registry, write_manifest
from citgan.fid import GaussianStats, RunningStats, fid, stats_from_features
from citgan.networks import CITGAN, NetConfig
from citgan.pad import ScoreSet, roc_points, run_experiment, tdr_at_fdr
from citgan.trainer import TrainConfig, Trainer, read_loss_log, train
from citgan.translate import build_experiment_set, plan_experiment, translate_batch
from helpers import fd_relative_errors, mp_fid

pytestmark = pytest.mark.slow


def test_criterion_1_loss_analytics(criterion):
    z = torch.zeros(1, 3, dtype=torch.float64)
    s = torch.randn(2, 16, dtype=torch.float64)
    checks = {
        "style identity": (float(L.style_loss(s, s.clone())), 0.0),
        "cls uniform": (float(L.domain_classification_loss(z, torch.tensor([1]))), math.log(3)),
        "cycle ones/zeros": (float(L.cycle_loss(torch.ones(1, 1, 4, 4), torch.zeros(1, 1, 4, 4))), 1.0),
        "adv zero logits": (float(L.adversarial_loss(z, torch.tensor([0]), z, torch.tensor([2]))), 2 * math.log(0.5)),
        "total (1,1,1,1)": (L.total_loss(1.0, 1.0, 1.0, 1.0, L.LossWeights(1, 1, 1)).total, 4.0),
    }
    worst = max(abs(got - want) for got, want in checks.values())
    assert abs(2 * math.log(0.5) + 1.3863) < 1e-4
    assert criterion(1, worst <= 1e-9, f"max abs error {worst:.1e} over {len(checks)} cases")


def test_criterion_2_gradients(criterion):
    torch.manual_seed(0)
    nets = CITGAN(NetConfig(num_domains=3)).double()
    g = torch.Generator().manual_seed(1)
    x = torch.rand(2, 1, 32, 32, generator=g, dtype=torch.float64) * 2 - 1
    y = torch.rand(2, 1, 32, 32, generator=g, dtype=torch.float64) * 2 - 1
    d, dp = torch.tensor([0, 1]), torch.tensor([2, 1])
    G, S, D = nets.G, nets.S, nets.D

    def fake():
        return G(x, S.style(y, dp))

    losses = {
        "adversarial": (lambda: L.adversarial_loss_nets(D, x, d, fake(), dp), "GSD"),
        "generator adversarial": (lambda: L.generator_adversarial_loss(D(fake()), dp), "GS"),
        "style": (lambda: L.style_loss_nets(G, S, x, S.style(y, dp), dp), "GS"),
        "classification": (lambda: L.domain_classification_loss_nets(S, x, d), "S"),
        "cycle": (lambda: L.cycle_loss_nets(G, x, S.style(x, d), S.style(y, dp)), "GS"),
    }
    n = 50
    worst, checked = 0.0, 0
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    for name, (fn, nets_used) in losses.items():
        for key in nets_used:
            errs = fd_relative_errors(fn, list(getattr(nets, key).parameters()), n, rng)
            worst = max(worst, float(errs.max()))
            checked += errs.size
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-3 and elapsed < 120
    assert criterion(2, ok, f"{checked} parameter checks, max rel error {worst:.2e}, {elapsed:.0f}s")


def _psd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T / n + 0.01 * np.eye(n)


def test_criterion_3_fid_oracles(criterion):
    rng = np.random.default_rng(0)
    p = GaussianStats(rng.normal(size=8), _psd(rng, 8), 100)
    self_err = abs(fid(p, p))
    one_d = max(abs(fid(GaussianStats([0.0], [[1.0]], 2), GaussianStats([3.0], [[1.0]], 2)) - 9),
                abs(fid(GaussianStats([0.0], [[4.0]], 2), GaussianStats([0.0], [[1.0]], 2)) - 1))
    rel, sym = 0.0, 0.0
    for _ in range(10):
        r = GaussianStats(rng.normal(size=8), _psd(rng, 8), 50)
        s = GaussianStats(rng.normal(size=8), _psd(rng, 8), 50)
        ref = mp_fid(r, s)
        a, b = fid(r, s), fid(s, r)
        rel = max(rel, abs(a - ref) / abs(ref))
        sym = max(sym, abs(a - b) / abs(a))
    x = rng.normal(size=(2000, 8)) * 2 + 3
    single = stats_from_features(x)
    chunked = RunningStats()
    for i in range(0, len(x), 97):
        chunked.update(x[i:i + 97])
    chunked = chunked.finalize()
    chunk_err = max(np.abs(single.mu - chunked.mu).max(), np.abs(single.sigma - chunked.sigma).max())
    ok = self_err <= 1e-8 and one_d <= 1e-10 and rel <= 1e-6 and sym <= 1e-6 and chunk_err <= 1e-10
    assert criterion(3, ok, f"self {self_err:.1e}, 1-D {one_d:.1e}, oracle rel {rel:.1e}, "
                            f"symmetry {sym:.1e}, chunking {chunk_err:.1e}")


def _brute_tdr_vec(bona, pa, f):
    cands = np.concatenate([bona, pa, [np.inf]])
    fdr = (bona[None, :] >= cands[:, None]).mean(axis=1)
    t = cands[fdr <= f].min()
    return float((pa >= t).mean())


def test_criterion_4_tdr_oracle(criterion):
    rng = np.random.default_rng(0)
    targets = [0.001, 0.002, 0.01, 0.05, 0.1, 0.5]
    mismatches = nonmonotone = 0
    t0 = time.perf_counter()
    for k in range(200):
        size = int(rng.integers(2, 1001))
        nb = int(rng.integers(1, size))
        raw = rng.normal(size=size)
        if k % 2:
            raw = np.round(raw * 4) / 4  # ties
        bona, pa = raw[:nb], raw[nb:] + rng.uniform(0, 2)
        got = tdr_at_fdr(ScoreSet(bona, pa), targets)
        mismatches += got != [_brute_tdr_vec(bona, pa, f) for f in targets]
        fdr, tdr = zip(*roc_points(ScoreSet(bona, pa)))
        nonmonotone += list(fdr) != sorted(fdr) or list(tdr) != sorted(tdr)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and nonmonotone == 0 and elapsed < 30
    assert criterion(4, ok, f"200 score sets: {mismatches} mismatches, {nonmonotone} non-monotone ROCs, {elapsed:.1f}s")


@pytest.fixture(scope="module")
def toy_gan():
    reg = toy_registry()
    data = generate_toy_domains(0, 300, 32)
    cfg = TrainConfig(steps=1500, seed=0)
    t0 = time.perf_counter()
    trainer = Trainer(cfg, data, reg)
    reports = [trainer.train_step() for _ in range(cfg.steps)]
    return reg, data, trainer.model, reports, time.perf_counter() - t0


def test_criterion_5_translation_quality(criterion, toy_gan):
    reg, data, model, reports, elapsed = toy_gan
    # judge trained on its own draw of the domains, never on GAN output
    judge_data = generate_toy_domains(77, 300, 32)
    judge = train_classifier(stack_pixels(judge_data), np.array([s.domain for s in judge_data]),
                             ClassifierConfig(num_classes=3, steps=400, seed=123))
    held = by_domain(generate_toy_domains(99, 100, 32, split="test"))
    rng = np.random.default_rng(0)

    # 300 translations: 50 for each ordered pair of distinct domains
    fids, accs = {}, []
    real = {d: stats_from_features(extract_features(judge, stack_pixels([s for s in data if s.domain == d])))
            for d in range(3)}
    for a in range(3):
        for b in range(3):
            if a == b:
                continue
            srcs = [held[a][i] for i in rng.permutation(100)[:50]]
            refs = [held[b][i] for i in rng.integers(0, 100, 50)]
            out = stack_pixels(translate_batch(model, srcs, refs))
            accs.append(predict_proba(judge, out).argmax(1) == b)
            fids[a, b] = (fid(real[b], stats_from_features(extract_features(judge, out))),
                          fid(real[b], stats_from_features(extract_features(judge, stack_pixels(srcs)))))
    acc = float(np.concatenate(accs).mean())
    cycle = [r.cycle for r in reports]
    first, last = float(np.mean(cycle[:50])), float(np.mean(cycle[-50:]))
    fid_ok = all(t < s for t, s in fids.values())
    ok = acc >= 0.8 and fid_ok and last < first and elapsed <= 1800
    pairs = " ".join(f"{a}>{b}:{t:.1f}/{s:.1f}" for (a, b), (t, s) in fids.items())
    assert criterion(5, ok, f"accuracy {acc:.3f}; FID translated/source {pairs}; "
                            f"cycle {first:.3f}->{last:.3f}; training {elapsed:.0f}s")


def test_criterion_6_determinism(criterion, tmp_path):
    reg = toy_registry()
    data = generate_toy_domains(0, 20, 32)
    cfg = TrainConfig(steps=20, batch_size=4, width=8, style_dim=8, checkpoint_interval=10, seed=5)
    t0 = time.perf_counter()
    a = train(cfg, data, reg, tmp_path / "a")
    b = train(cfg, data, reg, tmp_path / "b")
    train(cfg, data, reg, tmp_path / "c", until_step=10)
    c = train(cfg, data, reg, tmp_path / "c", resume_from=tmp_path / "c" / "checkpoint_000010.pt")
    logs = [read_loss_log(tmp_path / k / "losses.csv") for k in "abc"]
    sa, sb, sc = (m.model.state_dict() for m in (a, b, c))
    same_params = all(torch.equal(sa[k], sb[k]) and torch.equal(sa[k], sc[k]) for k in sa)
    ok = logs[0] == logs[1] == logs[2] and len(logs[0]) == 20 and same_params
    elapsed = time.perf_counter() - t0
    assert criterion(6, ok and elapsed < 300, f"repeat and 10+10 resume equal to 20 straight steps: "
                                              f"losses {logs[0] == logs[1] == logs[2]}, params {same_params}")


def test_criterion_7_protocol_arithmetic(criterion, tmp_path):
    plan = plan_experiment(4, {"artificial": 276, "contact": 4014, "printed": 6016}, target=5000)
    reported = [(p.real, p.synthetic) for p in plan.values()] == [(276, 4724), (4014, 986), (5000, 0)]

    # the same pattern on scaled-down toy counts, through the full builder
    reg = toy_registry(True)
    pool = generate_toy_domains(0, 60, 32, include_bonafide=True)
    keep = {0: 20, 1: 3, 2: 40, 3: 60}
    groups = by_domain(pool)
    train_set = [s for d, k in keep.items() for s in groups[d][:k]]
    test_set = save_samples(generate_toy_domains(1, 5, 32, include_bonafide=True, split="test"), tmp_path / "img", reg)
    torch.manual_seed(0)
    gan = CITGAN(NetConfig(num_domains=4, width=8, style_dim=8))
    exp4 = build_experiment_set(4, train_set + test_set, reg, gan, target=50)
    counts = {reg.name(d): (sum(s.domain == d and s.provenance == "real" for s in exp4.train),
                            sum(s.domain == d and s.provenance == "synthetic" for s in exp4.train)) for d in (1, 2, 3)}
    scaled = counts == {"stripes": (3, 47), "checker": (40, 10), "blobs": (50, 0)}
    exp2 = build_experiment_set(2, train_set + test_set, reg, gan)
    halves = {k: (v.real, v.synthetic) for k, v in exp2.plan.items()} == {
        "stripes": (2, 1), "checker": (20, 20), "blobs": (30, 30)}
    exp3 = build_experiment_set(3, train_set + test_set, reg, gan)
    no_real = not any(s.provenance == "real" and s.domain != 0 for s in exp3.train)

    blobs = []
    for e in (1, 2, 3, 4):
        exp = build_experiment_set(e, train_set + test_set, reg, gan, seed=e, target=50)
        write_manifest(tmp_path / f"test_{e}.csv", exp.test, reg, provenance=True)
        blobs.append((tmp_path / f"test_{e}.csv").read_bytes())
    identical = len(set(blobs)) == 1
    ok = reported and scaled and halves and no_real and identical
    assert criterion(7, ok, f"276+4724=5000 {reported}, toy top-up {counts}, halves {halves}, "
                            f"exp3 synthetic-only {no_real}, test manifests identical {identical}")


def _rigged_run(seed):
    """One PA domain (blobs) at 5% of its siblings' count; Exp 1 vs Exp 4 TDR at 1% FDR."""
    reg = toy_registry(True)
    full = generate_toy_domains(seed, 200, 32, include_bonafide=True, noise=0.1)
    blobs = reg.index("blobs")
    train_set = [s for s in full if s.domain != blobs] + [s for s in full if s.domain == blobs][:10]
    test_set = generate_toy_domains(seed + 1000, 100, 32, include_bonafide=True, split="test", noise=0.1)
    trainer = Trainer(TrainConfig(steps=800, seed=seed), train_set, reg)
    for _ in range(800):
        trainer.train_step()
    cfg = ClassifierConfig(steps=300)
    out = []
    for e in (1, 4):
        result, _ = run_experiment(e, train_set + test_set, reg, trainer.model, cfg, seed=seed)
        out.append(result.tdr[0.01])
    return tuple(out)


def test_criterion_8_rebalancing_direction(criterion):
    runs = {seed: _rigged_run(seed) for seed in range(5)}
    wins = sum(e4 >= e1 for e1, e4 in runs.values())
    ties = sum(e4 == e1 for e1, e4 in runs.values())
    values = "; ".join(f"seed {s}: exp1 {e1:.4f} exp4 {e4:.4f}" for s, (e1, e4) in runs.items())
    detail = f"exp4 >= exp1 in {wins}/5 seeds ({ties} ties) [{values}]"
    assert criterion(8, wins >= 4, detail)
