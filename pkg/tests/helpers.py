import contextlib
import math

import mpmath as mp
import numpy as np
import torch
import torch.nn.functional as F


@contextlib.contextmanager
def record_kinks(log):
    """Record the sign pattern of every input to leaky_relu and Tensor.abs while active."""
    orig_lrelu, orig_abs = F.leaky_relu, torch.Tensor.abs

    def lrelu(x, *a, **kw):
        log.append(x.detach() > 0)
        return orig_lrelu(x, *a, **kw)

    def abs_(x):
        log.append(x.detach() > 0)
        return orig_abs(x)

    F.leaky_relu, torch.Tensor.abs = lrelu, abs_
    try:
        yield log
    finally:
        F.leaky_relu, torch.Tensor.abs = orig_lrelu, orig_abs


def _same(a, b):
    return len(a) == len(b) and all(torch.equal(u, v) for u, v in zip(a, b))


def fd_relative_errors(loss_fn, params, n, rng, step=1e-5, max_tries=20):
    """Relative errors between autograd and central differences at ``n`` random scalar parameters.

    ``params`` are double-precision tensors read by ``loss_fn``. A draw whose
    +step and -step evaluations land on different sides of a piecewise-linear
    kink (leaky_relu or abs) is replaced by another draw: central differences
    are not a valid oracle across a kink.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    errs = []
    tried = 0
    with torch.no_grad():
        while len(errs) < n:
            tried += 1
            if tried > max_tries * n:
                raise RuntimeError(f"only {len(errs)} kink-free draws in {tried} tries")
            k = int(rng.integers(sizes.sum()))
            i = int(np.searchsorted(offsets, k, side="right") - 1)
            j = k - int(offsets[i])
            p = params[i].view(-1)
            g = grads[i]
            analytic = 0.0 if g is None else float(g.reshape(-1)[j])
            orig = float(p[j])
            signs_up, signs_down = [], []
            with record_kinks(signs_up):
                p[j] = orig + step
                up = float(loss_fn())
            with record_kinks(signs_down):
                p[j] = orig - step
                down = float(loss_fn())
            p[j] = orig
            if not _same(signs_up, signs_down):
                continue
            numeric = (up - down) / (2 * step)
            scale = max(abs(analytic), abs(numeric))
            errs.append(0.0 if scale < 1e-10 else abs(analytic - numeric) / scale)
    return np.array(errs)


def mp_fid(r, s, dps=50) -> float:
    """Frechet distance in extended precision via symmetric eigendecompositions."""
    with mp.workdps(dps):
        sr, ss = mp.matrix(r.sigma.tolist()), mp.matrix(s.sigma.tolist())
        w, v = mp.eigsy(sr)
        n = sr.rows
        root = v * mp.diag([mp.sqrt(max(w[i], 0)) for i in range(n)]) * v.T
        m = root * ss * root
        m = (m + m.T) / 2
        w2, _ = mp.eigsy(m)
        tr_sqrt = sum(mp.sqrt(max(w2[i], 0)) for i in range(n))
        diff = mp.matrix((r.mu - s.mu).tolist())
        val = (diff.T * diff)[0] + sum(sr[i, i] + ss[i, i] for i in range(n)) - 2 * tr_sqrt
        return float(val)


def brute_tdr(bona, pa, f):
    """Try every observed score and +inf as threshold; keep the smallest one meeting the FDR bound."""
    best = math.inf
    for t in list(bona) + list(pa) + [math.inf]:
        n_b = sum(1 for b in bona if b >= t)
        if n_b / len(bona) <= f and t < best:
            best = t
    return sum(1 for p in pa if p >= best) / len(pa)
