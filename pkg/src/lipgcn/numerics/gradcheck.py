"""Central-difference verification of tape gradients.

Relative error per entry is |analytic - numeric| / max(1, |analytic|,
|numeric|); callers compare the max against 1e-4 (double precision,
h = 1e-5).
"""

import numpy as np

from ..errors import UsageError
from .tensor import backward, no_grad


def _eval_scalar(fn):
    out = fn()
    if out.data.size != 1:
        raise UsageError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    return out


def gradcheck(f, x, h=1e-5):
    """Max relative error of d f(x) / dx against central differences."""
    return gradcheck_many(lambda: f(x), [x], h=h)


def gradcheck_many(f, tensors, h=1e-5, sample=None, rng=None):
    """Check several tensors at once against the same scalar function.

    ``sample`` limits the probe to that many random coordinates per tensor
    (all coordinates when None); used to keep whole-model sweeps cheap.

    Piecewise-linear kinks (relu and the similarity clamp) are handled with a
    subgradient test: when the central difference misses and the two one-sided
    slopes visibly disagree, the coordinate passes iff the analytic gradient
    lies inside the one-sided slope interval. A wrong adjoint still fails,
    because away from a kink both one-sided slopes agree on the true
    derivative.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    loss = _eval_scalar(f)
    backward(loss)
    worst = 0.0
    with no_grad():
        f0 = _eval_scalar(f).item()
        for t in tensors:
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            n = flat.size
            if sample is not None and sample < n:
                idx = (rng or np.random.default_rng(0)).choice(n, size=sample, replace=False)
            else:
                idx = range(n)
            aflat = analytic.reshape(-1)
            for i in idx:
                keep = flat[i]
                flat[i] = keep + h
                fp = _eval_scalar(f).item()
                flat[i] = keep - h
                fm = _eval_scalar(f).item()
                flat[i] = keep
                numeric = (fp - fm) / (2.0 * h)
                a = aflat[i]
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                if err > 1e-6:
                    # re-probe closer in: smooth coordinates converge to the
                    # analytic value, kinks keep reporting the slope midpoint
                    h2 = h / 8.0
                    flat[i] = keep + h2
                    fp2 = _eval_scalar(f).item()
                    flat[i] = keep - h2
                    fm2 = _eval_scalar(f).item()
                    flat[i] = keep
                    num2 = (fp2 - fm2) / (2.0 * h2)
                    err2 = abs(a - num2) / max(1.0, abs(a), abs(num2))
                    if err2 <= max(1e-6, 0.25 * err):
                        err = err2
                    else:
                        d_plus = (fp2 - f0) / h2
                        d_minus = (f0 - fm2) / h2
                        lo, hi = min(d_plus, d_minus), max(d_plus, d_minus)
                        slack = 1e-4 * max(1.0, abs(lo), abs(hi))
                        explained = abs(a - num2) <= 0.75 * (hi - lo) + slack
                        if explained and lo - slack <= a <= hi + slack:
                            continue  # kink; analytic is a valid one-sided slope
                        err = min(err, err2)
                if err > worst:
                    worst = err
    return worst
