"""Central finite-difference gradient checking."""

import numpy as np

from gcad.diffmath.tensor import backward, param


def _evaluate(f, arrays):
    out = f({k: param(v) for k, v in arrays.items()})
    val = out.item()
    if not np.isfinite(val):
        raise FloatingPointError("function value is not finite")
    return val


def grad_check(f, point, h=1e-5):
    """Largest relative error between autodiff and central differences.

    ``f`` maps a dict of parameter nodes to a scalar node; ``point`` is a dict
    of arrays (a bare array is treated as ``{"x": array}``). The error per
    coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    single = not isinstance(point, dict)
    if single:
        point = {"x": point}
        inner = f
        f = lambda p: inner(p["x"])  # noqa: E731
    arrays = {k: np.array(v, dtype=np.float64, ndmin=2) for k, v in point.items()}

    nodes = {k: param(v) for k, v in arrays.items()}
    out = f(nodes)
    if not np.isfinite(out.item()):
        raise FloatingPointError("function value is not finite")
    backward(out)

    worst = 0.0
    for name, base in arrays.items():
        analytic = nodes[name].grad
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + h
            up = _evaluate(f, arrays)
            base[idx] = orig - h
            down = _evaluate(f, arrays)
            base[idx] = orig
            numeric = (up - down) / (2 * h)
            err = abs(analytic[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
