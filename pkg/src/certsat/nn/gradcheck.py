"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    checked: int
    tol: float
    worst: tuple[str, tuple[int, ...]] | None = None
    per_param: dict[str, float] = field(default_factory=dict)
    refined: int = 0
    floor: float = 0.0

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tol


def rel_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps exact zeros comparable."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(closure: Callable[[], tuple[float, dict[str, np.ndarray]]],
               params: dict[str, np.ndarray], eps: float = 1e-5, tol: float = 1e-4,
               max_per_param: int | None = 20, rng: np.random.Generator | None = None,
               floor: float | None = 1e-8, refine: bool = False) -> GradCheckReport:
    """Compare ``closure``'s gradients with central differences.

    ``closure()`` evaluates the loss at the current contents of ``params``
    (arrays are perturbed in place and restored) and returns
    ``(loss, grads)``. Tensors larger than ``max_per_param`` entries are
    sampled with ``rng``. ``floor=None`` sets the relative-error floor to the
    smallest gradient central differences resolve to ``tol`` given rounding
    in the loss, ``10 * machine_eps * max(1, |loss|) / (eps * tol)``.

    With ``refine`` every entry is also differenced at ``eps / 10``. When the
    two estimates disagree by more than ``tol`` and by more than a hundred
    times the rounding noise of the narrow stencil, a ReLU kink lies inside
    ``[x - eps, x + eps]``. Second-order one-sided stencils over each half are
    then formed and the one closer to the narrow estimate is kept, since only
    the half containing the kink is biased. Such entries are counted in
    ``refined``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    loss0, grads = closure()
    ulp = np.finfo(np.float64).eps * max(1.0, abs(loss0))
    noise = 100 * ulp / (eps / 10)
    if floor is None:
        floor = 10 * ulp / (eps * tol)
    grads = {k: np.array(v, copy=True) for k, v in grads.items()}
    report = GradCheckReport(0.0, 0.0, 0, tol, floor=floor)
    for name, arr in params.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = rng.choice(flat.size, size=max_per_param, replace=False)
        g = grads.get(name, np.zeros_like(arr)).reshape(-1)
        worst = 0.0
        for i in idx:
            num, lp, lm = _central(closure, flat, i, eps)
            if refine:
                fine = _central(closure, flat, i, eps / 10)[0]
                if rel_error(num, fine, floor) >= tol and abs(num - fine) > noise:
                    hp, hm = _central(closure, flat, i, eps / 2)[1:]
                    fwd = (-3 * loss0 + 4 * hp - lp) / eps
                    bwd = (3 * loss0 - 4 * hm + lm) / eps
                    num = fwd if abs(fwd - fine) <= abs(bwd - fine) else bwd
                    report.refined += 1
            err = rel_error(float(g[i]), num, floor)
            report.checked += 1
            report.max_abs_error = max(report.max_abs_error, abs(float(g[i]) - num))
            worst = max(worst, err)
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (name, np.unravel_index(int(i), arr.shape))
        report.per_param[name] = worst
    return report


def _central(closure, flat: np.ndarray, i: int, eps: float) -> tuple[float, float, float]:
    old = flat[i]
    flat[i] = old + eps
    lp, _ = closure()
    flat[i] = old - eps
    lm, _ = closure()
    flat[i] = old
    return (lp - lm) / (2 * eps), lp, lm
