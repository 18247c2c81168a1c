"""Two-branch contrastive layer dynamics.

Each of ``N`` contrastive pairs runs a desired (plus) and an undesired
(minus) activation through per-pair layer maps. Steering only touches the
minus branch. The plus branch is never steered, so its trajectory and the
Jacobians evaluated along it are fixed properties of the plant.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DivergenceError, InvalidInputError
from .trace import Trace

KINDS = ("linear", "tanh-residual")
PLANT_FORMAT = "pidsteer-plant"
PLANT_VERSION = 1
POSITIVE_EIG_FLOOR = 0.3


@dataclass(frozen=True, eq=False)
class LayerMap:
    kind: str
    weight: np.ndarray
    bias: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown layer kind {self.kind!r}")
        w = linalg.as_square(self.weight, "weight")
        b = linalg.as_vec(self.bias, "bias")
        if b.shape[0] != w.shape[0]:
            raise InvalidInputError("bias dim does not match weight")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def dim(self):
        return self.weight.shape[0]

    def __call__(self, x):
        z = self.weight @ x + self.bias
        if self.kind == "linear":
            return z
        return x + self.scale * np.tanh(z)

    def jacobian(self, x):
        if self.kind == "linear":
            return self.weight.copy()
        t = np.tanh(self.weight @ x + self.bias)
        return np.eye(self.dim) + self.scale * (1.0 - t * t)[:, None] * self.weight

    def to_dict(self):
        return {
            "kind": self.kind,
            "weight": self.weight.tolist(),
            "bias": self.bias.tolist(),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], np.array(d["weight"], dtype=float),
                   np.array(d["bias"], dtype=float), d.get("scale", 1.0))


@dataclass(frozen=True, eq=False)
class ContrastivePlant:
    """``layers[k][i]`` is the map applied to pair ``i`` at layer ``k``.

    ``injection`` (K x d, optional) is an external disturbance subtracted
    from every minus-branch state after layer k, which adds ``injection[k]``
    to the average error.
    """

    layers: tuple
    initial_plus: np.ndarray
    initial_minus: np.ndarray
    injection: np.ndarray = None
    seed: int = None
    _plus_cache: list = field(default=None, init=False, repr=False)

    def __post_init__(self):
        layers = tuple(tuple(row) for row in self.layers)
        if not layers or not layers[0]:
            raise InvalidInputError("plant needs at least one layer and one pair")
        n_pairs = len(layers[0])
        dim = layers[0][0].dim
        for k, row in enumerate(layers):
            if len(row) != n_pairs:
                raise InvalidInputError(f"layer {k} has {len(row)} maps, expected {n_pairs}")
            for lm in row:
                if lm.dim != dim:
                    raise InvalidInputError(f"layer {k} map has dim {lm.dim}, expected {dim}")
        plus = np.array(self.initial_plus, dtype=float)
        minus = np.array(self.initial_minus, dtype=float)
        for name, arr in (("initial_plus", plus), ("initial_minus", minus)):
            if arr.shape != (n_pairs, dim) or not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} must be a finite ({n_pairs}, {dim}) array")
        inj = None
        if self.injection is not None:
            inj = np.array(self.injection, dtype=float)
            if inj.shape != (len(layers), dim) or not np.all(np.isfinite(inj)):
                raise InvalidInputError(f"injection must be a finite ({len(layers)}, {dim}) array")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "initial_plus", plus)
        object.__setattr__(self, "initial_minus", minus)
        object.__setattr__(self, "injection", inj)

    @property
    def dim(self):
        return self.layers[0][0].dim

    @property
    def pairs(self):
        return len(self.layers[0])

    @property
    def layer_count(self):
        return len(self.layers)

    def injection_at(self, k):
        if self.injection is None:
            return np.zeros(self.dim)
        return self.injection[k]

    def plus_trajectory(self):
        """Unsteered plus-branch states, shape (K + 1, N, d)."""
        if self._plus_cache is None:
            xs = [self.initial_plus]
            for k in range(self.layer_count):
                xs.append(np.array([lm(x) for lm, x in zip(self.layers[k], xs[-1])]))
            object.__setattr__(self, "_plus_cache", np.array(xs))
        return self._plus_cache

    def mean_jacobians(self):
        """A_bar(k) along the plus trajectory, shape (K, d, d)."""
        xs = self.plus_trajectory()
        return np.array([
            np.mean([lm.jacobian(x) for lm, x in zip(self.layers[k], xs[k])], axis=0)
            for k in range(self.layer_count)
        ])

    @property
    def m_bound(self):
        return max(linalg.spectral_norm(a) for a in self.mean_jacobians())

    def to_dict(self):
        return {
            "format": PLANT_FORMAT,
            "version": PLANT_VERSION,
            "dim": self.dim,
            "pairs": self.pairs,
            "layer_count": self.layer_count,
            "layers": [[lm.to_dict() for lm in row] for row in self.layers],
            "initial_plus": self.initial_plus.tolist(),
            "initial_minus": self.initial_minus.tolist(),
            "injection": None if self.injection is None else self.injection.tolist(),
            "seeds": {"generator": self.seed},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("format", PLANT_FORMAT) != PLANT_FORMAT:
            raise InvalidInputError(f"not a plant document: format={d.get('format')!r}")
        layers = [[LayerMap.from_dict(m) for m in row] for row in d["layers"]]
        plant = cls(layers, d["initial_plus"], d["initial_minus"],
                    injection=d.get("injection"), seed=(d.get("seeds") or {}).get("generator"))
        for key, got in (("dim", plant.dim), ("pairs", plant.pairs), ("layer_count", plant.layer_count)):
            if key in d and d[key] != got:
                raise InvalidInputError(f"plant document says {key}={d[key]} but layers give {got}")
        return plant

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class PlantStep:
    """Local error model at layer k.

    ``disturbance`` is the heterogeneity term (1/N) sum_i A~_i e~_i only;
    ``injection`` is the plant's external term. The linear model uses their
    sum, ``total_disturbance``.
    """

    k: int
    e_bar: np.ndarray
    per_pair_errors: np.ndarray
    jacobians: np.ndarray
    mean_jacobian: np.ndarray
    disturbance: np.ndarray
    injection: np.ndarray

    @property
    def total_disturbance(self):
        return self.disturbance + self.injection


def _check_states(plant, plus, minus):
    plus = np.asarray(plus, dtype=float)
    minus = np.asarray(minus, dtype=float)
    shape = (plant.pairs, plant.dim)
    if plus.shape != shape or minus.shape != shape:
        raise InvalidInputError(f"states must have shape {shape}, got {plus.shape} and {minus.shape}")
    return plus, minus


def _check_layer(plant, k):
    if not 0 <= k < plant.layer_count:
        raise InvalidInputError(f"layer index {k} outside [0, {plant.layer_count})")


def step_exact(plant, state_plus, state_minus, u, k):
    """Advance both branches through layer k; ``u`` is added on the minus branch only."""
    _check_layer(plant, k)
    plus, minus = _check_states(plant, state_plus, state_minus)
    u = np.asarray(u, dtype=float)
    if u.shape != (plant.dim,):
        raise InvalidInputError(f"u must have dim {plant.dim}, got shape {u.shape}")
    row = plant.layers[k]
    next_plus = np.array([lm(x) for lm, x in zip(row, plus)])
    next_minus = np.array([lm(x + u) for lm, x in zip(row, minus)]) - plant.injection_at(k)
    return next_plus, next_minus


def average_error(state_plus, state_minus):
    plus = np.asarray(state_plus, dtype=float)
    minus = np.asarray(state_minus, dtype=float)
    if plus.shape != minus.shape:
        raise InvalidInputError(f"branch shapes differ: {plus.shape} vs {minus.shape}")
    return np.mean(plus - minus, axis=0)


def local_model(plant, state_plus, state_minus, k):
    _check_layer(plant, k)
    plus, minus = _check_states(plant, state_plus, state_minus)
    errors = plus - minus
    e_bar = errors.mean(axis=0)
    jac = np.array([lm.jacobian(x) for lm, x in zip(plant.layers[k], plus)])
    a_bar = jac.mean(axis=0)
    a_dev = jac - a_bar
    e_dev = errors - e_bar
    w = np.einsum("nij,nj->i", a_dev, e_dev) / plant.pairs
    return PlantStep(k, e_bar, errors, jac, a_bar, w, plant.injection_at(k).copy())


def simulate_linearized(traject, controller, e0, steps=None):
    """Iterate e(k+1) = A(k) e(k) - A(k) u(k) + w(k) under a feedback controller.

    ``traject`` is a sequence of ``(A_bar(k), w(k))`` pairs; ``controller`` is
    a :class:`~pidsteer.controllers.Gains` or a ready ``ControllerState``.
    """
    from .controllers import ControllerState, Gains, control

    e = linalg.as_vec(e0, "e0")
    traject = list(traject)
    steps = len(traject) if steps is None else int(steps)
    if steps < 1 or steps > len(traject):
        raise InvalidInputError(f"steps={steps} needs 1 <= steps <= {len(traject)}")
    state = ControllerState.initial(controller, e.shape[0]) if isinstance(controller, Gains) else controller

    es, us, ss, des, As, ws = [e], [], [], [], [], []
    for k in range(steps):
        a, w = traject[k]
        a = np.asarray(a, dtype=float)
        w = np.asarray(w, dtype=float)
        ss.append(state.integrator)
        des.append(e - state.prev_error)
        u, state = control(state, e)
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            e = a @ e - a @ u + w
        if not np.all(np.isfinite(e)):
            raise DivergenceError(k + 1)
        es.append(e)
        us.append(u)
        As.append(a)
        ws.append(w)
    ss.append(state.integrator)
    des.append(e - state.prev_error)
    return Trace(np.array(es), np.array(us), np.array(ss), np.array(des),
                 np.array(As), np.array(ws), state.gains)


def linearization_residual(plant, states, u, k):
    """Distance between the exact next average error and the local linear model's."""
    plus, minus = states
    u = np.asarray(u, dtype=float)
    nxt_plus, nxt_minus = step_exact(plant, plus, minus, u, k)
    exact = average_error(nxt_plus, nxt_minus)
    st = local_model(plant, plus, minus, k)
    model = st.mean_jacobian @ st.e_bar - st.mean_jacobian @ u + st.total_disturbance
    return float(np.linalg.norm(exact - model))


def make_random_plant(dim, pairs, layers, kind="linear", jacobian_norm_cap=0.9,
                      heterogeneity=0.0, seed=0, *, tied=False, injection=0.0,
                      separation=1.0, tanh_scale=0.5, positive_jacobian=False):
    """Build a seeded synthetic plant whose mean Jacobians have norm ``jacobian_norm_cap``.

    Per-pair maps are a shared map plus ``heterogeneity``-scaled perturbations
    that average to zero across pairs, so A_bar(k) is exactly the shared
    target. Plus-branch initial states are spread by the same factor, so
    ``heterogeneity=0`` makes every pair identical on the plus side and the
    disturbance vanishes identically.

    tanh-residual layers get biases that place each pair's plus state at a
    prescribed pre-activation, which makes A_bar(k) computable before the
    layer is fixed.

    ``tied`` reuses one layer for all depths (linear kind only).
    ``injection`` is the norm of a constant external disturbance.
    ``positive_jacobian`` makes each target symmetric with eigenvalues in
    [POSITIVE_EIG_FLOOR * cap, cap].
    """
    if jacobian_norm_cap <= 0:
        raise InvalidInputError("jacobian_norm_cap must be positive")
    if kind not in KINDS:
        raise InvalidInputError(f"unknown layer kind {kind!r}")
    if dim < 1 or pairs < 1 or layers < 1:
        raise InvalidInputError("dim, pairs and layers must be >= 1")
    if tied and kind != "linear":
        raise InvalidInputError("tied layers are only supported for linear plants")
    rng = np.random.default_rng(seed)
    het = float(heterogeneity)

    def target():
        g = rng.standard_normal((dim, dim))
        if positive_jacobian:
            # eigenvalues in [floor * cap, cap], the largest exactly cap
            basis, _ = np.linalg.qr(g)
            eig = rng.uniform(POSITIVE_EIG_FLOOR, 1.0, dim)
            eig[0] = 1.0
            return jacobian_norm_cap * (basis * eig) @ basis.T
        return jacobian_norm_cap * g / np.linalg.norm(g, 2)

    def centered(shape):
        x = rng.standard_normal((pairs,) + shape)
        return x - x.mean(axis=0)

    center = rng.standard_normal(dim)
    plus0 = center + het * centered((dim,))
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    minus0 = plus0 - separation * (direction + het * centered((dim,)))

    rows = []
    if kind == "linear":
        row = None
        for _ in range(layers):
            if row is None or not tied:
                t = target()
                noise = centered((dim, dim)) / np.sqrt(dim)
                bias = rng.standard_normal(dim) * 0.1
                row = tuple(LayerMap("linear", t + het * jacobian_norm_cap * noise[i], bias)
                            for i in range(pairs))
            rows.append(row)
    else:
        x = plus0
        for _ in range(layers):
            t = target()
            beta = 0.5 * rng.standard_normal(dim) + het * centered((dim,))
            noise = het * centered((dim, dim)) / np.sqrt(dim)
            d = 1.0 / np.cosh(beta) ** 2  # (pairs, dim)
            d_mean = d.mean(axis=0)
            # solve I + s * mean_i(D_i (W + noise_i)) = target for the shared W
            rhs = (t - np.eye(dim)) / tanh_scale - np.mean(d[:, :, None] * noise, axis=0)
            w_shared = rhs / d_mean[:, None]
            row = []
            for i in range(pairs):
                wi = w_shared + noise[i]
                row.append(LayerMap("tanh-residual", wi, beta[i] - wi @ x[i], tanh_scale))
            row = tuple(row)
            rows.append(row)
            x = np.array([lm(xi) for lm, xi in zip(row, x)])

    inj = None
    if injection:
        g = rng.standard_normal(dim)
        inj = np.tile(injection * g / np.linalg.norm(g), (layers, 1))
    return ContrastivePlant(rows, plus0, minus0, injection=inj, seed=seed)
