"""Finite-difference verification of analytic gradients.

The checker is deliberately independent of the tape: it only re-evaluates
the loss forward, twice per probed parameter, and compares the central
difference against whatever ``backward`` wrote into ``param.grad``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ModelParams
from .tensor import Tensor, backward, no_grad


@dataclass
class ProbeRecord:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckResult:
    max_rel_error: float
    probes: list[ProbeRecord] = field(default_factory=list)

    def worst(self) -> ProbeRecord:
        return max(self.probes, key=lambda p: p.rel_error)


def finite_difference_check(loss_fn: Callable[[], Tensor],
                            params: ModelParams,
                            n_probes: int,
                            rng: np.random.Generator,
                            h: float = 1e-5,
                            denom_floor: float = 1e-3) -> GradCheckResult:
    """Probe random parameter entries against central finite differences.

    ``loss_fn`` must be a deterministic closure over ``params`` (dropout
    off, inputs fixed). Relative error uses ``|a - n| / max(|a|, |n|,
    denom_floor)``; the floor keeps near-zero gradients from amplifying
    float noise into spurious failures.
    """
    params.zero_grads()
    backward(loss_fn())

    tensors = list(params.items())
    sizes = np.array([t.data.size for _, t in tensors], dtype=np.float64)
    weights = sizes / sizes.sum()

    probes = []
    for _ in range(n_probes):
        which = int(rng.choice(len(tensors), p=weights))
        name, t = tensors[which]
        flat = t.data.reshape(-1)
        idx = int(rng.integers(flat.size))
        saved = flat[idx]
        with no_grad():
            flat[idx] = saved + h
            f_plus = loss_fn().item()
            flat[idx] = saved - h
            f_minus = loss_fn().item()
        flat[idx] = saved
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = float(t.grad.reshape(-1)[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), denom_floor)
        probes.append(ProbeRecord(name, idx, analytic, numeric, rel))
    return GradCheckResult(max(p.rel_error for p in probes), probes)
