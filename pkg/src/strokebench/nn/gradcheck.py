"""Central-finite-difference verification of every hand-written backward pass.

All checks run in float64. For a layer we fix a random projection R, take the
scalar objective L(inputs) = sum(forward(inputs) * R), compare backward(R)
against elementwise central differences, and report the worst relative error

    |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)

over all inputs and trials. The loss is its own scalar objective.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .layers import LayerSpec

DEFAULT_EPS = 1e-5
DEFAULT_TRIALS = 20


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(f, x: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of scalar-valued f at x, elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def _check_conv3d(rng: np.random.Generator, eps: float) -> float:
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 3))
    f = int(rng.integers(1, 4))
    kt, kh, kw = (int(rng.integers(1, 4)) for _ in range(3))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    # extents that keep every output extent >= 1
    t = kt + int(rng.integers(0, 3))
    h = kh + int(rng.integers(0, 3))
    w = kw + int(rng.integers(0, 3))
    x = rng.standard_normal((n, c, t, h, w))
    wt = rng.standard_normal((f, c, kt, kh, kw))
    b = rng.standard_normal(f)
    r = rng.standard_normal(ops.conv3d_forward(x, wt, b, stride, pad).shape)

    def objective():
        return float(np.sum(ops.conv3d_forward(x, wt, b, stride, pad) * r))

    gx, gw, gb = ops.conv3d_backward(x, wt, r, stride, pad)
    return max(
        max_rel_error(gx, numeric_grad(objective, x, eps)),
        max_rel_error(gw, numeric_grad(objective, wt, eps)),
        max_rel_error(gb, numeric_grad(objective, b, eps)),
    )


def _check_maxpool3d(rng: np.random.Generator, eps: float) -> float:
    window = tuple(int(rng.integers(1, 3)) for _ in range(3))
    n, c = 1, int(rng.integers(1, 3))
    t, h, w = (window[i] * int(rng.integers(1, 3)) for i in range(3))
    # resample until every window's top two values are well separated, so the
    # finite-difference probe cannot flip a winner
    while True:
        x = rng.standard_normal((n, c, t, h, w))
        r = (
            x.reshape(n, c, t // window[0], window[0], h // window[1], window[1],
                      w // window[2], window[2])
            .transpose(0, 1, 2, 4, 6, 3, 5, 7)
            .reshape(-1, window[0] * window[1] * window[2])
        )
        if r.shape[1] == 1:
            break
        part = np.sort(r, axis=1)
        if np.min(part[:, -1] - part[:, -2]) > 1e3 * eps:
            break
    out, winners = ops.maxpool3d(x, window)
    g = rng.standard_normal(out.shape)

    def objective():
        return float(np.sum(ops.maxpool3d(x, window)[0] * g))

    gx = ops.maxpool3d_backward(g, winners, x.shape)
    return max_rel_error(gx, numeric_grad(objective, x, eps))


def _check_linear(rng: np.random.Generator, eps: float) -> float:
    n = int(rng.integers(1, 5))
    fin = int(rng.integers(1, 8))
    fout = int(rng.integers(1, 6))
    x = rng.standard_normal((n, fin))
    w = rng.standard_normal((fout, fin))
    b = rng.standard_normal(fout)
    r = rng.standard_normal((n, fout))

    def objective():
        return float(np.sum(ops.linear_forward(x, w, b) * r))

    gx, gw, gb = ops.linear_backward(x, w, r)
    return max(
        max_rel_error(gx, numeric_grad(objective, x, eps)),
        max_rel_error(gw, numeric_grad(objective, w, eps)),
        max_rel_error(gb, numeric_grad(objective, b, eps)),
    )


def _check_relu(rng: np.random.Generator, eps: float) -> float:
    # keep |x| well away from the kink at 0
    shape = (2, int(rng.integers(3, 9)))
    x = (rng.uniform(0.05, 1.0, shape)) * rng.choice([-1.0, 1.0], shape)
    r = rng.standard_normal(shape)

    def objective():
        return float(np.sum(ops.relu_forward(x) * r))

    return max_rel_error(ops.relu_backward(x, r), numeric_grad(objective, x, eps))


def _check_softmax_cross_entropy(rng: np.random.Generator, eps: float) -> float:
    n = int(rng.integers(1, 4))
    k = int(rng.integers(2, 7))
    # bounded logits keep every softmax entry well away from 0, where the
    # relative error of the difference quotient blows up
    logits = rng.uniform(-1.0, 1.0, (n, k))
    classes = rng.integers(0, k, n)

    def objective():
        return ops.softmax_cross_entropy(logits, classes)[0]

    analytic = ops.softmax_cross_entropy(logits, classes)[1]
    return max_rel_error(analytic, numeric_grad(objective, logits, eps))


_CHECKS = {
    "conv3d": _check_conv3d,
    "maxpool3d": _check_maxpool3d,
    "linear": _check_linear,
    "relu": _check_relu,
    "softmax_cross_entropy": _check_softmax_cross_entropy,
}


def gradcheck(kind: str, trials: int = DEFAULT_TRIALS, eps: float = DEFAULT_EPS,
              seed: int = 0) -> float:
    """Worst relative error over `trials` random instances of one layer kind."""
    if kind not in _CHECKS:
        raise ValueError(f"no gradient check for kind {kind!r}; know {sorted(_CHECKS)}")
    rng = np.random.default_rng(seed)
    return max(_CHECKS[kind](rng, eps) for _ in range(trials))


def gradcheck_layer(spec: LayerSpec, trials: int = DEFAULT_TRIALS,
                    eps: float = DEFAULT_EPS, seed: int = 0) -> float:
    return gradcheck(spec.kind, trials=trials, eps=eps, seed=seed)


def run_all(trials: int = DEFAULT_TRIALS, eps: float = DEFAULT_EPS,
            seed: int = 0) -> dict[str, float]:
    """Max relative error per layer kind plus the loss, in a fixed order."""
    return {kind: gradcheck(kind, trials=trials, eps=eps, seed=seed) for kind in _CHECKS}
