"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    """Outcome of one gradient check.

    ``excluded`` lists (input name, flat index) coordinates where the closure
    is locally non-smooth (one-sided slopes disagree, e.g. relu probed at its
    kink); those are reported, not failed.
    """

    max_rel_error: float
    tol: float
    n_checked: int
    excluded: list = field(default_factory=list)
    worst: tuple = ()

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    closure: Callable[..., Tensor],
    inputs: Mapping[str, Tensor],
    tol: float = 1e-4,
    step: float = 1e-5,
    max_coords_per_input: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of a scalar closure with central
    finite differences.

    Args:
        closure: called as ``closure(**inputs)``, returns a scalar Tensor;
            must be a pure function of the inputs.
        inputs: named tensors; those with ``requires_grad`` are checked.
        tol: pass threshold on the max relative error.
        step: finite-difference half-step.
        max_coords_per_input: if set, check a seeded random subset of
            coordinates per input instead of all of them.
        rng: generator for coordinate subsampling.

    Relative error per coordinate is |analytic - fd| / max(|analytic|, |fd|,
    1e-3); the floor keeps roundoff noise on near-zero gradients from
    registering as failure.
    """
    for t in inputs.values():
        t.zero_grad()
    out = closure(**inputs)
    out.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in inputs.items()
        if t.requires_grad
    }

    base = out.item()
    if rng is None:
        rng = np.random.default_rng(0)

    max_rel = 0.0
    worst = ()
    excluded = []
    n_checked = 0
    for name, t in inputs.items():
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords_per_input is not None and flat.size > max_coords_per_input:
            coords = np.sort(rng.choice(flat.size, size=max_coords_per_input, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = closure(**inputs).item()
            flat[i] = orig - step
            f_minus = closure(**inputs).item()
            flat[i] = orig

            slope_plus = (f_plus - base) / step
            slope_minus = (base - f_minus) / step
            scale = abs(slope_plus) + abs(slope_minus) + 1.0
            if abs(slope_plus - slope_minus) > 1e-2 * scale:
                excluded.append((name, int(i)))
                continue

            fd = (f_plus - f_minus) / (2.0 * step)
            an = analytic[name].reshape(-1)[i]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-3)
            n_checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (name, int(i), float(an), float(fd))

    return GradCheckReport(
        max_rel_error=max_rel, tol=tol, n_checked=n_checked, excluded=excluded, worst=worst
    )
