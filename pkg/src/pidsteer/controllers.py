"""Steering functions and discrete P / PI / PID steering laws."""

from dataclasses import dataclass, replace

import numpy as np

from . import plant as _plant
from .errors import DegenerateDirectionError, DivergenceError, InvalidInputError
from .trace import Trace

STEER_KINDS = ("add", "directional-ablation")
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class Gains:
    """Scalar gains; each multiplies the identity."""

    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val < 0:
                raise InvalidInputError(f"gain {name} must be finite and >= 0, got {val}")
            object.__setattr__(self, name, val)

    @property
    def kind(self):
        if self.kd > 0:
            return "PID" if self.ki > 0 else "PD"
        return "PI" if self.ki > 0 else "P"

    @classmethod
    def from_config(cls, cfg):
        unknown = set(cfg) - {"kp", "ki", "kd"}
        if unknown:
            raise InvalidInputError(f"unknown gain keys: {sorted(unknown)}")
        return cls(cfg.get("kp", 0.0), cfg.get("ki", 0.0), cfg.get("kd", 0.0))

    def to_dict(self):
        return {"kp": self.kp, "ki": self.ki, "kd": self.kd}


@dataclass(frozen=True, eq=False)
class ControllerState:
    gains: Gains
    integrator: np.ndarray
    prev_error: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, gains, dim):
        # e(-1) = 0, so the first derivative term is kd * e(0)
        return cls(gains, np.zeros(dim), np.zeros(dim), 0)

    @property
    def dim(self):
        return self.integrator.shape[0]


@dataclass(frozen=True)
class SteerFn:
    kind: str = "add"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in STEER_KINDS:
            raise InvalidInputError(f"unknown steer kind {self.kind!r}")
        object.__setattr__(self, "alpha", float(self.alpha))

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.get("kind", "add"), cfg.get("alpha", 1.0))

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha}


def control(state, e):
    """One PID step: u(k) = kp e(k) + ki sum_{j<k} e(j) + kd (e(k) - e(k-1))."""
    e = np.asarray(e, dtype=float)
    if e.shape != (state.dim,):
        raise InvalidInputError(f"error has shape {e.shape}, controller expects ({state.dim},)")
    if not np.all(np.isfinite(e)):
        raise InvalidInputError("non-finite error fed to controller")
    g = state.gains
    u = g.kp * e + g.ki * state.integrator + g.kd * (e - state.prev_error)
    nxt = replace(state, integrator=state.integrator + e, prev_error=e, step=state.step + 1)
    return u, nxt


def apply_steer(fn, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != u.shape:
        raise InvalidInputError(f"x and u shapes differ: {x.shape} vs {u.shape}")
    if fn.kind == "add":
        return x + fn.alpha * u
    n = np.linalg.norm(u)
    if n < DEGENERATE_NORM:
        raise DegenerateDirectionError(f"ablation direction has norm {n:.3g}")
    uh = u / n
    return x - uh * (uh @ x)


def steering_vectors_nonsequential(plus_traj, minus_traj):
    """Per-layer difference-in-means r(k) from unsteered recordings.

    Each trajectory is indexable as ``traj[k]`` -> (N, d) states.
    """
    plus = np.asarray(plus_traj, dtype=float)
    minus = np.asarray(minus_traj, dtype=float)
    if plus.ndim != 3 or minus.ndim != 3:
        raise InvalidInputError("trajectories must have shape (layers, pairs, dim)")
    if plus.shape[0] != minus.shape[0]:
        raise InvalidInputError(f"trajectory lengths differ: {plus.shape[0]} vs {minus.shape[0]}")
    if plus.shape[2] != minus.shape[2]:
        raise InvalidInputError("trajectory dims differ")
    return [plus[k].mean(axis=0) - minus[k].mean(axis=0) for k in range(plus.shape[0])]


def controls_from_vectors(gains, r):
    """Feed a recorded r-history through the controller; returns u(0..K)."""
    state = ControllerState.initial(gains, len(r[0]))
    out = []
    for rk in r:
        u, state = control(state, rk)
        out.append(u)
    return out


def steering_vectors_sequential(plant, controller, steer_fn=None):
    """Closed-loop steering: r(k) is recomputed from the already steered minus branch.

    Returns ``(r, trace)`` where ``r`` holds K + 1 vectors r(0..K). The trace
    records, per layer, the mean Jacobian and total disturbance of the local
    model at the states actually visited.
    """
    steer_fn = steer_fn or SteerFn()
    gains = controller.gains if isinstance(controller, ControllerState) else controller
    state = controller if isinstance(controller, ControllerState) else ControllerState.initial(gains, plant.dim)
    if state.dim != plant.dim:
        raise InvalidInputError(f"controller dim {state.dim} != plant dim {plant.dim}")

    plus, minus = plant.initial_plus, plant.initial_minus
    zero = np.zeros(plant.dim)
    r = [_plant.average_error(plus, minus)]
    us, ss, des, As, ws = [], [], [], [], []
    for k in range(plant.layer_count):
        local = _plant.local_model(plant, plus, minus, k)
        ss.append(state.integrator)
        des.append(r[-1] - state.prev_error)
        u, state = control(state, r[-1])
        steered = np.array([apply_steer(steer_fn, x, u) for x in minus])
        plus, minus = _plant.step_exact(plant, plus, steered, zero, k)
        rk = _plant.average_error(plus, minus)
        if not (np.all(np.isfinite(rk)) and np.all(np.isfinite(minus))):
            raise DivergenceError(k + 1)
        r.append(rk)
        us.append(u)
        As.append(local.mean_jacobian)
        ws.append(local.total_disturbance)
    ss.append(state.integrator)
    des.append(r[-1] - state.prev_error)
    trace = Trace(np.array(r), np.array(us), np.array(ss), np.array(des),
                  np.array(As), np.array(ws), gains)
    return r, trace
