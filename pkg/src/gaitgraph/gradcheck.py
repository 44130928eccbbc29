"""Central finite-difference verification of every analytic gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Parameter, Tensor, weighted_sum


@dataclass(frozen=True)
class GradCheckEntry:
    name: str
    rel_error: float


@dataclass(frozen=True)
class GradCheckReport:
    entries: tuple[GradCheckEntry, ...]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def format(self) -> str:
        lines = [f"{e.name:<40s} rel_err={e.rel_error:.3e}" for e in self.entries]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"max rel_err {self.max_rel_error:.3e} "
                     f"(tolerance {self.tolerance:.1e}): {verdict}")
        return "\n".join(lines)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    """Max elementwise deviation over the gradient scale.

    The floor keeps finite-difference noise from dominating the ratio when a
    parameter's true gradient is (near) zero, e.g. affine parameters whose
    effect the next batch norm removes exactly.
    """
    scale = max(float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def grad_check(fn, inputs: list[Tensor], params: list[Parameter],
               tolerance: float = 1e-4, h: float = 1e-5,
               seed: int = 0, floor: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of fn(*inputs) against central differences.

    fn must be a deterministic function of its inputs and of the given
    parameters; its (possibly non-scalar) output is projected to a scalar with
    fixed random weights. Everything must be float64: finite differences at
    h = 1e-5 have no headroom in float32.
    """
    for t in inputs:
        t.requires_grad = True
    targets: list[tuple[str, np.ndarray]] = (
        [(f"input[{i}]", t.data) for i, t in enumerate(inputs)]
        + [(p.name, p.data) for p in params]
    )
    for name, arr in targets:
        if arr.dtype != np.float64:
            raise ValueError(f"grad_check requires float64, {name} is {arr.dtype.name}")
    if not targets:
        return GradCheckReport(entries=(), tolerance=tolerance)

    rng = np.random.default_rng(seed)
    first = fn(*inputs)
    proj = rng.standard_normal(first.shape) / np.sqrt(first.data.size)

    def scalar() -> float:
        return float(weighted_sum(fn(*inputs), proj).data)

    for t in inputs:
        t.grad = None
    for p in params:
        p.tensor.grad = None
    loss = weighted_sum(first, proj)
    loss.backward()

    grads = ([t.grad for t in inputs] + [p.grad for p in params])
    entries = []
    for (name, arr), analytic in zip(targets, grads):
        if analytic is None:
            analytic = np.zeros_like(arr)
        numeric = np.empty_like(arr)
        flat = arr.ravel()
        num_flat = numeric.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = scalar()
            flat[i] = orig - h
            f_minus = scalar()
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2.0 * h)
        entries.append(GradCheckEntry(name, _relative_error(analytic, numeric, floor)))
    return GradCheckReport(entries=tuple(entries), tolerance=tolerance)
