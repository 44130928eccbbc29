"""Adam with L2 weight decay and the 1-cycle learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


class OptimizerError(RuntimeError):
    """Raised when an update is requested without a gradient."""


class ScheduleError(ValueError):
    """Raised for schedule queries outside [0, total_steps]."""


@dataclass
class AdamState:
    """First/second moment buffers and step counter for one parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_parameter(cls, param: Parameter) -> "AdamState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data))


def adam_step(param: Parameter, state: AdamState, lr: float,
              weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Classic Adam update with bias correction, in place.

    Weight decay is folded into the gradient (g <- g + lambda * theta) unless
    the parameter is decay-exempt.
    """
    if param.grad is None:
        raise OptimizerError(f"parameter {param.name!r} has no gradient")
    g = param.grad
    if weight_decay != 0.0 and not param.weight_decay_exempt:
        g = g + weight_decay * param.data
    state.step += 1
    state.m += (1.0 - beta1) * (g - state.m)
    state.v += (1.0 - beta2) * (g * g - state.v)
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    param.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.data.dtype)


@dataclass(frozen=True)
class OneCycleSchedule:
    """Cosine ramp to max_lr over pct_up of the run, then cosine anneal down.

    Starts at max_lr / div_factor and finishes at
    max_lr / (div_factor * final_div_factor).
    """

    max_lr: float
    total_steps: int
    pct_up: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e3

    def __post_init__(self):
        if not 0.0 < self.pct_up < 1.0:
            raise ScheduleError(f"pct_up must be in (0, 1), got {self.pct_up}")
        if self.div_factor <= 1.0 or self.final_div_factor <= 1.0:
            raise ScheduleError("div factors must be > 1")
        if self.total_steps < 1:
            raise ScheduleError(f"total_steps must be >= 1, got {self.total_steps}")

    @property
    def initial_lr(self) -> float:
        return self.max_lr / self.div_factor

    @property
    def final_lr(self) -> float:
        return self.max_lr / (self.div_factor * self.final_div_factor)


def onecycle_lr(schedule: OneCycleSchedule, step: int) -> float:
    """Learning rate at an integer step in [0, total_steps]."""
    if not 0 <= step <= schedule.total_steps:
        raise ScheduleError(f"step {step} outside [0, {schedule.total_steps}]")
    up_steps = max(1, round(schedule.pct_up * schedule.total_steps))
    up_steps = min(up_steps, schedule.total_steps - 1) or 1
    if step <= up_steps:
        frac = step / up_steps
        lo, hi = schedule.initial_lr, schedule.max_lr
    else:
        frac = (step - up_steps) / (schedule.total_steps - up_steps)
        lo, hi = schedule.final_lr, schedule.max_lr
        frac = 1.0 - frac
    # cosine interpolation between lo (frac=0) and hi (frac=1)
    return lo + (hi - lo) * 0.5 * (1.0 - math.cos(math.pi * frac))


class Adam:
    """Per-parameter Adam states plus bookkeeping for checkpoint sidecars."""

    def __init__(self, params: list[Parameter], weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        names = [p.name for p in params]
        if len(names) != len(set(names)):
            raise ValueError("parameter names must be unique within a model")
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.states: dict[str, AdamState] = {
            p.name: AdamState.for_parameter(p) for p in params
        }

    def step(self, lr: float) -> None:
        for p in self.params:
            adam_step(p, self.states[p.name], lr, self.weight_decay,
                      self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, st in self.states.items():
            out[f"m/{name}"] = st.m
            out[f"v/{name}"] = st.v
            out[f"step/{name}"] = np.asarray(st.step, dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, st in self.states.items():
            st.m[...] = arrays[f"m/{name}"]
            st.v[...] = arrays[f"v/{name}"]
            st.step = int(arrays[f"step/{name}"])
