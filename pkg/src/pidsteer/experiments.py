"""Seeded experiment generators shared by the acceptance tests, the scripts and the CLI.

Every generator is a pure function of its seed. Ensemble helpers return
plain records so callers can assert on them or dump them to disk.
"""

from dataclasses import dataclass, field

import numpy as np

from . import analysis, linalg
from .controllers import Gains, steering_vectors_sequential
from .plant import ContrastivePlant, linearization_residual, make_random_plant, simulate_linearized


def constant_traject(a_bar, w, steps):
    a_bar = np.atleast_2d(np.asarray(a_bar, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    return [(a_bar, w)] * steps


def random_spd(rng, dim, m_bound, low=0.3):
    """Symmetric matrix with eigenvalues in [low * m_bound, m_bound], top one exactly m_bound."""
    qmat, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = rng.uniform(low * m_bound, m_bound, dim)
    eig[0] = m_bound
    return (qmat * eig) @ qmat.T


def random_pi_gains(rng, m_bound, q_max=0.8, h_frac=(0.3, 0.9)):
    """kp in [0, 1] giving q = M (1 - kp) <= q_max, and h a fraction of (1 - q) / M."""
    kp_lo = max(0.0, 1.0 - q_max / m_bound)
    kp = rng.uniform(kp_lo, 1.0)
    q = m_bound * (1.0 - kp)
    h = rng.uniform(*h_frac) * (1.0 - q) / m_bound
    return kp, q, h


# ------------------------------------------------------------------ P loop

@dataclass
class EnvelopeRun:
    seed: int
    q: float
    w_inf: float
    norms: np.ndarray
    envelope: np.ndarray

    @property
    def worst_gap(self):
        return float(np.max(self.norms - self.envelope))


def p_envelope_run(seed, steps=200):
    """Random stable LTI P loop with a random bounded disturbance sequence."""
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 6))
    a = rng.standard_normal((dim, dim))
    a *= rng.uniform(0.5, 2.0) / np.linalg.norm(a, 2)
    m = np.linalg.norm(a, 2)
    kp = rng.uniform(max(0.0, 1.0 - 0.95 / m), 1.0)
    w_inf = rng.uniform(0.0, 0.5)
    ws = rng.standard_normal((steps, dim))
    ws *= (w_inf * rng.uniform(0, 1, steps) / np.linalg.norm(ws, axis=1))[:, None]
    traject = [(a, w) for w in ws]
    tr = simulate_linearized(traject, Gains(kp=kp), rng.standard_normal(dim))
    q = linalg.spectral_norm(a * (1.0 - kp))
    w_meas = float(np.max(np.linalg.norm(ws, axis=1)))
    e0 = float(np.linalg.norm(tr.e_bar[0]))
    env = np.array([analysis.p_envelope(q, w_meas, e0, k) for k in range(steps + 1)])
    return EnvelopeRun(seed, q, w_meas, np.linalg.norm(tr.e_bar, axis=1), env)


# ------------------------------------------------------------------ PI loop

@dataclass
class PiBiasRun:
    seed: int
    q: float
    mh: float
    final_norm: float
    first_below: int  # first k with |e| < 1e-6, or -1


def pi_bias_run(seed, steps=2000, unmatched=0.0, tol=1e-6):
    """Constant symmetric positive (semi)definite A_bar with a constant disturbance.

    With ``unmatched == 0`` the disturbance lies in Im A_bar. Otherwise
    A_bar loses one direction of its range and the disturbance gets a
    component of norm ``unmatched`` along the kernel.
    """
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(2, 6))
    m = rng.uniform(0.5, 2.0)
    a = random_spd(rng, dim, m)
    kp, q, h = random_pi_gains(rng, m)
    w = a @ rng.standard_normal(dim) * rng.uniform(0.05, 0.5)
    if unmatched:
        vals, vecs = np.linalg.eigh(a)
        vals[0] = 0.0  # smallest eigenvalue; the top one (= M) is untouched
        a = (vecs * vals) @ vecs.T
        w = a @ rng.standard_normal(dim) * 0.2 + unmatched * vecs[:, 0]
    tr = simulate_linearized(constant_traject(a, w, steps), Gains(kp, h), rng.standard_normal(dim))
    norms = np.linalg.norm(tr.e_bar, axis=1)
    below = np.nonzero(norms < tol)[0]
    return PiBiasRun(seed, q, m * h, float(norms[-1]), int(below[0]) if below.size else -1)


@dataclass
class GelfandRun:
    cert: analysis.StabilityCertificate
    worst_ratio: float  # max_k ||H^k|| / (C rho^k)


def gelfand_run(seed, horizon=200):
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.2, 3.0)
    q = rng.uniform(0.0, 0.95)
    h = rng.uniform(0.01, 0.99) * (1.0 - q) / m
    cert = analysis.certify_pi(m, q, h)
    hm = analysis.pi_comparison_matrix(q, m, h)
    norms = linalg.matrix_powers_norms(hm, horizon)
    ratio = max(nk / (cert.c_const * cert.rho ** k) for k, nk in enumerate(norms))
    return GelfandRun(cert, float(ratio))


# ------------------------------------------------------------------ scalar overshoot ensembles

def scalar_traject(a_seq, w_seq):
    return [(np.array([[a]]), np.array([w])) for a, w in zip(a_seq, w_seq)]


@dataclass
class A0BoundRun:
    seed: int
    eligible: bool
    a0: float = 0.0
    bound: float = 0.0
    reason: str = ""


def a0_bound_run(seed, steps=200):
    """Time-varying scalar PI loop with a small matched disturbance.

    ``eligible`` is set when the run has a closed first overshoot and the
    shifted integrator s_v does not increase during it.
    """
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.5, 2.0)
    a_seq = rng.uniform(0.3 * m, m, steps)
    a_seq[0] = m
    kp = rng.uniform(max(0.0, 1.0 - 1.0 / m) + 1e-3, 1.0)
    q = m * (1.0 - kp)
    h = rng.uniform(0.3, 0.95) * (1.0 - q) / m
    w_seq = rng.uniform(0.0, 0.05) * rng.standard_normal(steps)
    tr = simulate_linearized(scalar_traject(a_seq, w_seq), Gains(kp, h), [1.0])
    st = analysis.scalarize(tr)
    rep = analysis.detect_overshoots(st)
    if rep.first is None or rep.first.t1 is None:
        return A0BoundRun(seed, False, reason="no closed first overshoot")
    f = rep.first
    if np.any(st.a < 0):
        return A0BoundRun(seed, False, reason="negative a(k)")
    window = st.s_v[f.t0:min(f.t1, len(st.s_v))]
    if np.any(np.diff(window) > 0):
        return A0BoundRun(seed, False, reason="s_v increases during overshoot")
    cert = analysis.certify_pi(m, q, h)
    d_inf = float(np.max(np.abs(st.d_v))) if st.d_v.size else 0.0
    w_inf = float(np.max(np.abs(st.w_v_perp)))
    bound = analysis.first_overshoot_bound(cert, st.e_v[0], f.t0, d_inf, w_inf)
    return A0BoundRun(seed, cert.iss, f.a0, bound)


@dataclass
class PidReductionRun:
    seed: int
    ell: float
    threshold: float
    comparison: analysis.OvershootComparison = None


def pid_reduction_run(seed, steps=200, ell_fraction=None):
    """Noiseless scalar PI vs PID at a derivative gain below the estimated threshold."""
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.5, 2.0)
    kp = rng.uniform(max(0.0, 1.0 - 1.0 / m) + 1e-3, 1.0)
    q = m * (1.0 - kp)
    h = rng.uniform(0.3, 0.95) * (1.0 - q) / m
    frac = rng.uniform(0.1, 1.0) if ell_fraction is None else ell_fraction
    traject = scalar_traject(np.full(steps, m), np.zeros(steps))
    pi = analysis.scalarize(simulate_linearized(traject, Gains(kp, h), [1.0]))
    try:
        r_smooth = analysis.estimate_r_smooth(pi)
    except analysis.InsufficientTraceError:
        return PidReductionRun(seed, 0.0, 0.0)
    thr = analysis.derivative_gain_threshold(q, m, r_smooth)
    ell = frac * thr if np.isfinite(thr) else frac
    pid = analysis.scalarize(simulate_linearized(traject, Gains(kp, h, ell), [1.0]))
    return PidReductionRun(seed, ell, thr, analysis.compare_first_overshoot(pi, pid))


# ------------------------------------------------------------------ PID Lyapunov

@dataclass
class LyapunovRun:
    seed: int
    cert: analysis.LyapunovCertificate
    values: np.ndarray
    increments: np.ndarray
    outside: np.ndarray  # True where S|zeta|^2 + T|de|^2 >= C |w~_PI|^2
    slack: np.ndarray  # dV - (-S|zeta|^2 - T|de|^2 + C|w~|^2)


def lyapunov_run(seed, steps=300, disturbed=True, e0_scale=2.0):
    """Disturbed PID loop below the admissible derivative gain; ``e0_scale`` sets |e(0)|."""
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 5))
    m = rng.uniform(0.5, 2.0)
    a = random_spd(rng, dim, m)
    kp, q, h = random_pi_gains(rng, m)
    probe = analysis.certify_pid_lti(a, Gains(kp, h, 0.0), disturbed=disturbed)
    ell = rng.uniform(0.1, 0.9) * np.sqrt(probe.admissible_ell_sq)
    gains = Gains(kp, h, ell)
    cert = analysis.certify_pid_lti(a, gains, disturbed=disturbed)
    if disturbed:
        base = a @ rng.standard_normal(dim) * 0.3
        ws = base + 0.05 * rng.standard_normal((steps, dim)) @ a.T
    else:
        ws = np.zeros((steps, dim))
    traject = [(a, w) for w in ws]
    tr = simulate_linearized(traject, gains, e0_scale * rng.standard_normal(dim))
    zeta, de = analysis.lifted_states(tr)
    s_star, w_perp = analysis.matched_split(tr.a_bar, tr.w, gains.ki)
    vals = np.array([cert.value(z, d) for z, d in zip(zeta, de)])
    inc = np.diff(vals)
    d = np.diff(s_star, axis=0)
    w_tilde_sq = np.sum(w_perp[:-1] ** 2, axis=1) + np.sum(d ** 2, axis=1)
    z_sq = np.sum(zeta[:-1] ** 2, axis=1)
    de_sq = np.sum(de[:-1] ** 2, axis=1)
    decrement = cert.s_margin * z_sq + cert.t_margin * de_sq
    gain = cert.disturbance_gain * w_tilde_sq
    return LyapunovRun(seed, cert, vals, inc, decrement >= gain, inc + decrement - gain)


# ------------------------------------------------------------------ linearization order

def residual_ratio(seed, separation=0.2, dim=4, pairs=6):
    """residual(separation) / residual(separation / 2) on a tanh-residual plant."""
    out = []
    for sep in (separation, separation / 2):
        pl = make_random_plant(dim, pairs, 1, kind="tanh-residual", heterogeneity=0.3,
                               seed=seed, separation=sep, tanh_scale=0.5)
        e = pl.initial_plus.mean(0) - pl.initial_minus.mean(0)
        out.append(linearization_residual(pl, (pl.initial_plus, pl.initial_minus), 0.5 * e, 0))
    return out[0] / out[1]


# ------------------------------------------------------------------ figure

FIGURE_DEFAULTS = {
    "plant": {"dim": 6, "pairs": 8, "layers": 150, "kind": "linear", "tied": True,
              "jacobian_norm_cap": 0.9, "heterogeneity": 0.1, "injection": 0.2,
              "positive_jacobian": True, "seed": 7},
    "controllers": {"P": {"kp": 0.5}, "PI": {"kp": 0.5, "ki": 0.3},
                    "PID": {"kp": 0.5, "ki": 0.3, "kd": 0.3}},
}


@dataclass
class FigureResult:
    inner: dict  # controller name -> <e_bar(0), e_bar(k)>, k = 0..K
    traces: dict = field(default_factory=dict)

    def overshoot(self, name):
        ev = self.inner[name] / np.sqrt(self.inner[name][0])
        return analysis.detect_overshoots(ev)


def plant_from_config(cfg):
    if "layers" in cfg and isinstance(cfg["layers"], list):
        return ContrastivePlant.from_dict(cfg)
    kwargs = dict(cfg)
    return make_random_plant(kwargs.pop("dim"), kwargs.pop("pairs"), kwargs.pop("layers"), **kwargs)


def figure_run(plant, controllers, steer_fn=None):
    inner, traces = {}, {}
    for name, gains in controllers.items():
        _, tr = steering_vectors_sequential(plant, gains, steer_fn)
        traces[name] = tr
        inner[name] = tr.inner_with_initial()
    return FigureResult(inner, traces)


def default_figure():
    cfg = FIGURE_DEFAULTS
    pl = plant_from_config(cfg["plant"])
    ctrls = {k: Gains.from_config(v) for k, v in cfg["controllers"].items()}
    return figure_run(pl, ctrls)
