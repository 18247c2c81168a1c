"""Per-step record of a closed-loop run."""

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class Trace:
    """Closed-loop history over ``n`` steps.

    ``e_bar``, ``s`` and ``delta_e`` hold ``n + 1`` rows (k = 0..n);
    ``u``, ``a_bar`` and ``w`` hold ``n`` rows, one per applied step.
    ``s[k]`` is the integrator seen by the controller at step k, and
    ``delta_e[k] = e_bar[k] - e_bar[k-1]`` with ``e_bar[-1] = 0``.
    """

    e_bar: np.ndarray
    u: np.ndarray
    s: np.ndarray
    delta_e: np.ndarray
    a_bar: np.ndarray
    w: np.ndarray
    gains: object

    @property
    def steps(self):
        return self.u.shape[0]

    @property
    def dim(self):
        return self.e_bar.shape[1]

    def inner_with_initial(self):
        """<e_bar(0), e_bar(k)> for every k."""
        return self.e_bar @ self.e_bar[0]
