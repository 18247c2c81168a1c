"""Brute-force reference implementations used to validate the main code paths.

Nothing here imports ``controllers`` or ``analysis``; the rollout keeps its
own integrator and the grid search uses polynomial roots instead of the
linear-algebra kernel.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .trace import Trace


@dataclass(frozen=True)
class FdJacobianConfig:
    step: float = 1e-6
    scheme: str = "central"

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidInputError("finite-difference step must be positive")
        if self.scheme != "central":
            raise InvalidInputError(f"unsupported scheme {self.scheme!r}")


def fd_jacobian(layer_map, x, cfg=None):
    """Central-difference Jacobian of ``layer_map`` at ``x``."""
    cfg = cfg or FdJacobianConfig()
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    jac = np.zeros((n, n))
    for j in range(n):
        dx = np.zeros(n)
        dx[j] = cfg.step
        jac[:, j] = (layer_map(x + dx) - layer_map(x - dx)) / (2.0 * cfg.step)
    return jac


def naive_rollout(plant, gains, steer_kind="add", alpha=1.0):
    """Straight-line sequential PID steering rollout.

    ``gains`` only needs ``kp``, ``ki`` and ``kd`` attributes. Returns a
    :class:`~pidsteer.trace.Trace` laid out like the main sequential path.
    """
    kp, ki, kd = gains.kp, gains.ki, gains.kd
    alpha = getattr(steer_kind, "alpha", alpha)
    steer_kind = getattr(steer_kind, "kind", steer_kind)
    d, n_pairs = plant.dim, plant.pairs

    plus = [np.array(x, dtype=float) for x in plant.initial_plus]
    minus = [np.array(x, dtype=float) for x in plant.initial_minus]

    def mean_diff(a, b):
        tot = np.zeros(d)
        for xa, xb in zip(a, b):
            tot = tot + (xa - xb)
        return tot / n_pairs

    acc = np.zeros(d)
    last = np.zeros(d)
    e = mean_diff(plus, minus)
    rec_e, rec_u, rec_s, rec_de, rec_a, rec_w = [e], [], [], [], [], []
    for k in range(plant.layer_count):
        row = plant.layers[k]
        # local model at the current (unsteered) states
        jacs = [row[i].jacobian(plus[i]) for i in range(n_pairs)]
        a_bar = sum(jacs) / n_pairs
        w = np.zeros(d)
        for i in range(n_pairs):
            w = w + (jacs[i] - a_bar) @ ((plus[i] - minus[i]) - e)
        w = w / n_pairs
        inj = np.zeros(d) if plant.injection is None else plant.injection[k]

        u = kp * e + ki * acc + kd * (e - last)
        rec_s.append(acc.copy())
        rec_de.append(e - last)
        acc = acc + e
        last = e

        new_minus = []
        for i in range(n_pairs):
            x = minus[i]
            if steer_kind == "add":
                x = x + alpha * u
            else:
                uh = u / np.sqrt(np.sum(u * u))
                x = x - np.dot(uh, x) * uh
            new_minus.append(row[i](x) - inj)
        plus = [row[i](plus[i]) for i in range(n_pairs)]
        minus = new_minus
        e = mean_diff(plus, minus)

        rec_e.append(e)
        rec_u.append(u)
        rec_a.append(a_bar)
        rec_w.append(w + inj)
    rec_s.append(acc.copy())
    rec_de.append(e - last)
    return Trace(np.array(rec_e), np.array(rec_u), np.array(rec_s), np.array(rec_de),
                 np.array(rec_a), np.array(rec_w), gains)


def comparison_radius(q, mh):
    """Largest root modulus of l^2 - (1 + q) l + (q + mh)."""
    return float(np.max(np.abs(np.roots([1.0, -(1.0 + q), q + mh]))))


def grid_min_radius(q, m_bound, h_grid):
    """Grid point minimizing the PI rate over ``h_grid``; returns (h_best, radius_best)."""
    grid = np.asarray(h_grid, dtype=float).ravel()
    if grid.size == 0:
        raise InvalidInputError("empty gain grid")
    radii = [comparison_radius(q, m_bound * h) for h in grid]
    i = int(np.argmin(radii))
    return float(grid[i]), float(radii[i])


def naive_overshoots(ev):
    """O(n^2) scan: every (start, end) window that is a maximal negative run."""
    ev = list(ev)
    n = len(ev)
    found = []
    for a in range(1, n):
        for b in range(a + 1, n + 1):
            window = ev[a:b]
            if all(x < 0 for x in window) and ev[a - 1] >= 0 and (b == n or ev[b] >= 0):
                found.append((a, b - a, max(abs(x) for x in window)))
    return found
