"""Central-difference gradient checking in float64."""
from __future__ import annotations

from typing import Callable, Iterable, Sequence, Union

import numpy as np

from avsv.autodiff.tensor import Tape, Tensor

Steps = Union[float, Sequence[float]]


def _entry_err(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    d = np.asarray(numeric, dtype=np.float64).ravel()
    return np.abs(a - d) / np.maximum(np.maximum(np.abs(a), np.abs(d)), floor)


def _central(values: np.ndarray, evaluate: Callable[[], float], h: float) -> np.ndarray:
    """Central differences of ``evaluate`` w.r.t. each entry of ``values``, nudged in place."""
    flat = values.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = evaluate()
        flat[i] = orig - h
        down = evaluate()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return out


def _ladder_err(analytic, values: np.ndarray, evaluate, h: Steps, floor: float) -> float:
    """Max over entries of the smallest relative error across the step ladder ``h``."""
    if values.size == 0:
        return 0.0
    steps = [h] if np.isscalar(h) else list(h)
    errs = np.min([_entry_err(analytic, _central(values, evaluate, s), floor) for s in steps], axis=0)
    return float(np.max(errs))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: Steps = 1e-6, floor: float = 1e-8) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and central differences.

    ``f`` must be scalar-valued and deterministic. ``x`` is promoted to float64.
    ``h`` may be a sequence of steps: each entry then keeps its best agreement,
    so a step that straddles a kink or drowns in rounding does not mask a
    correct gradient, while a wrong gradient disagrees at every step.
    ``floor`` bounds the denominator for entries whose true gradient is zero.
    """
    base = np.asarray(x.data, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        out = f(xt)
    tape.backward(out)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)
    probe = base.copy()
    return _ladder_err(analytic, probe, lambda: float(f(Tensor(probe.copy(), dtype=np.float64)).data), h, floor)


def grad_check_params(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], h: Steps = 1e-6,
                      floor: float = 1e-8) -> dict:
    """Check every coordinate of every parameter; returns ``{name_or_index: max rel err}``.

    Parameters must already hold float64 data. ``loss_fn`` is re-run with each
    coordinate nudged in place. ``h`` and ``floor`` are as in ``grad_check``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    errors = {}
    for idx, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        errors[p.name or idx] = _ladder_err(analytic, p.data, lambda: float(loss_fn().data), h, floor)
    return errors
