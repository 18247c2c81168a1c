"""Certificates, bounds and diagnostics for the P / PI / PID error loops.

Vocabulary used throughout:

* ``m_bound``  M = sup_k ||A_bar(k)||
* ``q``        sup_k ||A_bar(k) (1 - kp)||, the proportional contraction factor
* ``h``, ``ell``  the integral and derivative gains
* ``s*``       integrator value whose action cancels the matched disturbance,
               s*(k) = pinv(A_bar(k)) w(k) / ki
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (
    DegenerateDirectionError,
    InsufficientTraceError,
    InvalidCertificateError,
    InvalidInputError,
    NearSingularError,
    UnstableSystemError,
)

GELFAND_HORIZON = 500
R_SAFETY = 1.1
SINGULAR_FLOOR = 1e-12


def _finite_or_none(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------- P control

def p_envelope(q, w_inf, e0_norm, k):
    """ISS envelope q^k |e0| + (1 - q^k) / (1 - q) |w|_inf of the P loop."""
    if q >= 1:
        raise UnstableSystemError(f"contraction factor q={q} >= 1")
    if q < 0:
        raise InvalidInputError("q must be >= 0")
    qk = q ** k
    return qk * e0_norm + (1.0 - qk) / (1.0 - q) * w_inf


def steady_state_error(a_bar, kp, w):
    """(I - A_bar (1 - kp))^{-1} w, the P-loop fixed point for constant A_bar, w."""
    a = linalg.as_square(a_bar, "a_bar")
    w = linalg.as_vec(w, "w")
    mp = a * (1.0 - kp)
    if linalg.spectral_radius(mp) >= 1:
        raise UnstableSystemError("P loop is not contractive; no steady state")
    lhs = np.eye(a.shape[0]) - mp
    # the identity fixes the scale, so an absolute singular-value floor is meaningful
    if np.linalg.svd(lhs, compute_uv=False)[-1] < SINGULAR_FLOOR:
        raise NearSingularError("I - M_P is numerically singular")
    return np.linalg.solve(lhs, w)


# ---------------------------------------------------------------- PI certificate

@dataclass
class StabilityCertificate:
    m_bound: float
    q: float
    h: float
    ell: float
    rho: float
    c_const: float
    iss: bool
    radius: float

    def to_dict(self):
        return {
            "m_bound": self.m_bound, "q": self.q, "h": self.h, "ell": self.ell,
            "rho": _finite_or_none(self.rho), "c_const": _finite_or_none(self.c_const),
            "iss": bool(self.iss), "radius": _finite_or_none(self.radius),
        }


def pi_comparison_matrix(q, m_bound, h):
    """Rate matrix of the scalar PI loop, [[q, -M h], [1, 1]].

    Its characteristic polynomial is l^2 - (1 + q) l + (q + M h), which is
    the one the convergence-rate analysis works with. The unsigned matrix
    [[q, M h], [1, 1]] bounds the vector norms entrywise but has spectral
    radius above 1 whenever M h > 0, so it cannot certify anything.
    """
    if q < 0 or m_bound < 0 or h < 0:
        raise InvalidInputError("q, m_bound and h must be non-negative")
    return np.array([[q, -m_bound * h], [1.0, 1.0]])


def gelfand_constant(mat, rho, horizon=GELFAND_HORIZON):
    """C = max(1, max_{k<=horizon} ||mat^k|| rho^-k)."""
    scaled = linalg.as_square(mat) / rho
    return max(1.0, max(linalg.matrix_powers_norms(scaled, horizon)))


def certify_pi(m_bound, q, h):
    """Check q + M h < 1 and build the (rho, C) envelope ||H^k|| <= C rho^k.

    ``h == 0`` (or ``m_bound == 0``) is reported as not ISS: the integrator
    mode then sits exactly on the unit circle.
    """
    mh = m_bound * h
    H = pi_comparison_matrix(q, m_bound, h)
    r = linalg.spectral_radius(H)
    iss = (q + mh < 1.0) and mh > 0
    if not iss:
        return StabilityCertificate(m_bound, q, h, 0.0, math.nan, math.nan, False, r)
    rho = 0.5 * (r + 1.0)
    return StabilityCertificate(m_bound, q, h, 0.0, rho, gelfand_constant(H, rho), True, r)


def optimal_integral_gain(q, m_bound):
    if not 0 <= q < 1:
        raise InvalidInputError("need 0 <= q < 1")
    if m_bound <= 0:
        raise InvalidInputError("need m_bound > 0")
    return (1.0 - q) ** 2 / (4.0 * m_bound)


# ---------------------------------------------------------------- lifted loop

def lifted_matrices(a_bar, gains):
    """(M_P, G, H, M_I, M_D) for one layer."""
    a = linalg.as_square(a_bar, "a_bar")
    n = a.shape[0]
    eye, zero = np.eye(n), np.zeros((n, n))
    m_p = a * (1.0 - gains.kp)
    g = a * gains.ki
    hmat = a * gains.kd
    m_i = np.block([[m_p, -g], [eye, eye]])
    m_d = np.block([
        [m_p, -g, -hmat],
        [eye, eye, zero],
        [m_p - eye, -g, -hmat],
    ])
    return m_p, g, hmat, m_i, m_d


def matched_split(a_bars, ws, ki):
    """Per-step s*(k) and unmatched disturbance w_perp(k).

    Without integral action nothing is cancelled: s* = 0 and the whole
    disturbance counts as unmatched.
    """
    a_bars = np.asarray(a_bars, dtype=float)
    ws = np.asarray(ws, dtype=float)
    if ki <= 0:
        return np.zeros_like(ws), ws.copy()
    s_star = np.empty_like(ws)
    w_perp = np.empty_like(ws)
    for k, (a, w) in enumerate(zip(a_bars, ws)):
        w_par, w_perp[k] = linalg.orthogonal_decompose(w, a)
        s_star[k] = linalg.pinv(a) @ w_par / ki
    return s_star, w_perp


def lifted_states(trace):
    """(zeta_pi, delta_e) along a trace; zeta_pi[k] = (e_bar(k), s(k) - s*(k)) for k < n."""
    s_star, _ = matched_split(trace.a_bar, trace.w, trace.gains.ki)
    n = trace.steps
    zeta = np.hstack([trace.e_bar[:n], trace.s[:n] - s_star])
    return zeta, trace.delta_e[:n]


def simulate_lifted(traject, gains, e0, steps=None):
    """Iterate zeta_PID(k+1) = M_D(k) zeta_PID(k) + w~_PID(k).

    Returns the (steps + 1, 3d) lifted states. ``traject`` is the same
    ``(A_bar, w)`` sequence :func:`pidsteer.plant.simulate_linearized` takes.
    """
    traject = list(traject)
    steps = len(traject) if steps is None else int(steps)
    e0 = linalg.as_vec(e0, "e0")
    a_bars = np.array([np.asarray(a, dtype=float) for a, _ in traject[:steps]])
    ws = np.array([np.asarray(w, dtype=float) for _, w in traject[:steps]])
    s_star, w_perp = matched_split(a_bars, ws, gains.ki)
    if len(traject) > steps:
        s_next, _ = matched_split([traject[steps][0]], [traject[steps][1]], gains.ki)
        s_star_ext = np.vstack([s_star, s_next])
    else:
        s_star_ext = np.vstack([s_star, s_star[-1:]])
    d = np.diff(s_star_ext, axis=0)

    zeta = np.concatenate([e0, -s_star[0], e0])
    out = [zeta]
    for k in range(steps):
        *_, m_d = lifted_matrices(a_bars[k], gains)
        forcing = np.concatenate([w_perp[k], -d[k], w_perp[k]])
        zeta = m_d @ zeta + forcing
        out.append(zeta)
    return np.array(out)


# ---------------------------------------------------------------- scalarization

@dataclass(eq=False)
class ScalarTrace:
    """Projection of a trace on v = e_bar(0) / ||e_bar(0)||.

    ``e_v`` and ``delta_e_v`` have n + 1 entries; ``s_v``, ``a``, ``b``, ``c``
    and ``w_v_perp`` have n; ``d_v`` has n - 1 (it needs s* one step ahead).
    """

    v: np.ndarray
    e_v: np.ndarray
    s_v: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    w_v_perp: np.ndarray
    d_v: np.ndarray
    delta_e_v: np.ndarray
    gains: object = None

    def replay(self):
        """Recompute e_v(1..n) from the scalar PID recursion."""
        return (self.a * self.e_v[:-1] - self.b * self.s_v - self.c * self.delta_e_v[:-1]
                + self.w_v_perp)


def scalarize(trace):
    e0 = trace.e_bar[0]
    n0 = np.linalg.norm(e0)
    if n0 < 1e-12:
        raise DegenerateDirectionError("initial error is (numerically) zero; no reference direction")
    v = e0 / n0
    g = trace.gains
    s_star, w_perp = matched_split(trace.a_bar, trace.w, g.ki)
    n = trace.steps
    quad = np.einsum("i,kij,j->k", v, trace.a_bar, v)
    return ScalarTrace(
        v=v,
        e_v=trace.e_bar @ v,
        s_v=(trace.s[:n] - s_star) @ v,
        a=quad * (1.0 - g.kp),
        b=quad * g.ki,
        c=quad * g.kd,
        w_v_perp=w_perp @ v,
        d_v=np.diff(s_star, axis=0) @ v,
        delta_e_v=trace.delta_e @ v,
        gains=g,
    )


# ---------------------------------------------------------------- overshoot

@dataclass
class OvershootEvent:
    start: int
    length: int
    amplitude: float
    closed: bool = True


@dataclass
class FirstOvershoot:
    t0: int
    t1: int  # None when the trace ends inside the overshoot
    i_max: int
    a0: float


@dataclass
class OvershootReport:
    events: list = field(default_factory=list)
    first: FirstOvershoot = None

    def to_dict(self):
        return {
            "events": [{"start": e.start, "length": e.length, "amplitude": e.amplitude,
                        "closed": e.closed} for e in self.events],
            "first": None if self.first is None else {
                "t0": self.first.t0, "t1": self.first.t1,
                "i_max": self.first.i_max, "a0": self.first.a0,
            },
        }


def _values(s):
    return np.asarray(s.e_v if isinstance(s, ScalarTrace) else s, dtype=float)


def detect_overshoots(s):
    """Maximal negative runs of e_v preceded by a non-negative sample.

    A run still negative at the end of the trace is reported with
    ``closed=False``. ``first`` describes the first event only if every
    earlier sample is non-negative.
    """
    ev = _values(s)
    events = []
    k, n = 1, len(ev)
    while k < n:
        if ev[k] < 0 and ev[k - 1] >= 0:
            end = k
            while end < n and ev[end] < 0:
                end += 1
            events.append(OvershootEvent(k, end - k, float(np.max(np.abs(ev[k:end]))), end < n))
            k = end
        else:
            k += 1
    first = None
    if events and n and np.all(ev[:events[0].start] >= 0):
        e = events[0]
        seg = np.abs(ev[e.start:e.start + e.length])
        first = FirstOvershoot(e.start, e.start + e.length if e.closed else None,
                               e.start + int(np.argmax(seg)), e.amplitude)
    return OvershootReport(events, first)


def first_overshoot_bound(cert, e_v0, t0, d_inf, w_inf):
    """Upper bound on the first overshoot amplitude of a PI loop.

    The ``iss`` flag of ``cert`` is not re-checked, so the h = 0 limit can
    be evaluated; only q < 1 is required. ``t0 - 1`` is clamped at 0.
    """
    q, mh = cert.q, cert.m_bound * cert.h
    if q >= 1:
        raise UnstableSystemError(f"q={q} >= 1")
    if e_v0 < 0:
        raise InvalidInputError("e_v0 must be >= 0")
    t = max(t0 - 1, 0)
    g = 1.0 / (1.0 - q)
    return (mh * (g + g * g) * e_v0
            + (mh * g * t + mh * g) * d_inf
            + (mh * t + 1.0) * g * w_inf)


def derivative_gain_threshold(q, m_bound, r_smooth):
    """Largest kd keeping the noiseless scalar PID error monotone before its first peak."""
    if r_smooth < 1:
        raise InvalidInputError("r_smooth must be >= 1")
    if r_smooth == 1:
        return math.inf
    return (1.0 - q) / ((r_smooth - 1.0) * m_bound)


def estimate_r_smooth(pi_trace, safety=R_SAFETY):
    """Conservative smoothness ratio R from a PI trace.

    max e_v(k-1) / e_v(k) over k in [1, i_max - 1] with e_v(k) > 0, times
    ``safety``, floored at 1. Without an overshoot the whole trace is used.
    """
    ev = _values(pi_trace)
    rep = detect_overshoots(ev)
    stop = rep.first.i_max if rep.first is not None else len(ev)
    ratios = [ev[k - 1] / ev[k] for k in range(1, stop) if ev[k] > 0]
    if not ratios:
        raise InsufficientTraceError("no positive samples before the first peak")
    return max(1.0, safety * max(ratios))


@dataclass
class OvershootComparison:
    a0_pi: float
    a0_pid: float
    reduced: bool
    precondition_met: bool
    has_event: bool


def _monotone_until(ev, stop, tol=0.0):
    return all(ev[k + 1] <= ev[k] + tol for k in range(min(stop, len(ev) - 1)))


def compare_first_overshoot(pi_trace, pid_trace):
    e_pi, e_pid = _values(pi_trace), _values(pid_trace)
    r_pi, r_pid = detect_overshoots(e_pi).first, detect_overshoots(e_pid).first
    a_pi = r_pi.a0 if r_pi else 0.0
    a_pid = r_pid.a0 if r_pid else 0.0
    stop = r_pid.i_max if r_pid else len(e_pid) - 1
    return OvershootComparison(
        a0_pi=a_pi,
        a0_pid=a_pid,
        reduced=a_pid <= a_pi + 1e-12,
        precondition_met=_monotone_until(e_pid, stop),
        has_event=bool(r_pi or r_pid),
    )


# ---------------------------------------------------------------- PID Lyapunov

@dataclass
class LyapunovCertificate:
    p_matrix: np.ndarray
    q_matrix: np.ndarray
    mu: float
    r_weight: float
    epsilon: float
    s_margin: float
    t_margin: float
    admissible_ell_sq: float
    ell: float
    valid: bool
    disturbance_gain: float
    m_bound: float
    h: float
    p_norm: float
    m_i_norm: float
    m_p_minus_i_norm: float

    def value(self, zeta_pi, delta_e):
        """V_PID = zeta' P zeta + r |delta_e|^2 (needs ``p_matrix``)."""
        if self.p_matrix is None:
            raise InvalidCertificateError("certificate carries no P matrix")
        z = np.asarray(zeta_pi, dtype=float)
        de = np.asarray(delta_e, dtype=float)
        return float(z @ self.p_matrix @ z + self.r_weight * de @ de)

    def to_dict(self):
        out = {k: _finite_or_none(getattr(self, k)) for k in (
            "mu", "r_weight", "epsilon", "s_margin", "t_margin", "admissible_ell_sq",
            "ell", "disturbance_gain", "m_bound", "h", "p_norm", "m_i_norm", "m_p_minus_i_norm")}
        out["valid"] = bool(self.valid)
        out["p_matrix"] = None if self.p_matrix is None else self.p_matrix.tolist()
        out["q_matrix"] = None if self.q_matrix is None else self.q_matrix.tolist()
        return out


def certify_pid(m_bound, q, h, ell, mu, p_norm, m_i_norm, m_p_minus_i_norm,
                *, p_matrix=None, q_matrix=None):
    """Decrement margins of V_PID with the standard (epsilon, r) selection.

    ``mu`` is the decrease margin kept after reserving an equal share for
    the disturbance cross term, so the PI Lyapunov pair must satisfy
    M_I' P M_I - P <= -2 mu I when disturbances are present.
    ``disturbance_gain`` bounds the growth of V_PID by that multiple of
    |w~_PI|^2.
    """
    if mu <= 0:
        raise InvalidCertificateError(f"mu must be positive, got {mu}")
    if q + m_bound * h >= 1:
        raise InvalidCertificateError("PI hypothesis q + M h < 1 fails")
    mh = m_bound * h
    eps = mu / (8.0 * p_norm * m_i_norm ** 2)
    r = mu / (8.0 * (m_p_minus_i_norm ** 2 + mh))
    s_margin = mu - 2.0 * eps * p_norm * m_i_norm ** 2 - 3.0 * r * (m_p_minus_i_norm ** 2 + mh)
    t_margin = r * (1.0 - 3.0 * m_bound ** 2 * ell ** 2) - p_norm * m_bound ** 2 * ell ** 2 * (1.0 / eps + 1.0)
    if m_bound > 0:
        admissible = r / ((p_norm * (1.0 / eps + 1.0) + 3.0 * r) * m_bound ** 2)
    else:
        admissible = math.inf
    c1 = m_i_norm ** 2 * p_norm ** 2 / mu + p_norm
    c2 = 2.0 * eps * p_norm
    # |w~_PID|^2 <= 2 |w~_PI|^2 in the increment bound
    gain = c1 + c2 + 6.0 * r
    return LyapunovCertificate(
        p_matrix=p_matrix, q_matrix=q_matrix, mu=mu, r_weight=r, epsilon=eps,
        s_margin=s_margin, t_margin=t_margin, admissible_ell_sq=admissible, ell=ell,
        valid=bool(s_margin > 0 and ell ** 2 < admissible), disturbance_gain=gain,
        m_bound=m_bound, h=h, p_norm=p_norm, m_i_norm=m_i_norm,
        m_p_minus_i_norm=m_p_minus_i_norm,
    )


def pi_lyapunov(m_i, q_matrix=None):
    """(P, mu_PI) for a constant PI loop matrix: solves M_I' P M_I - P = -Q.

    mu_PI is the smallest eigenvalue of Q.
    """
    m_i = linalg.as_square(m_i, "m_i")
    qm = np.eye(m_i.shape[0]) if q_matrix is None else linalg.as_square(q_matrix, "q_matrix")
    p = linalg.solve_discrete_lyapunov(m_i, qm)
    return p, float(np.min(np.linalg.eigvalsh(qm))), qm


def certify_pid_lti(a_bar, gains, q_matrix=None, disturbed=True):
    """Lyapunov certificate for a constant mean Jacobian."""
    a = linalg.as_square(a_bar, "a_bar")
    m_p, _, _, m_i, _ = lifted_matrices(a, gains)
    p, mu_pi, qm = pi_lyapunov(m_i, q_matrix)
    mu = 0.5 * mu_pi if disturbed else mu_pi
    return certify_pid(
        linalg.spectral_norm(a), linalg.spectral_norm(m_p), gains.ki, gains.kd, mu,
        linalg.spectral_norm(p), linalg.spectral_norm(m_i),
        linalg.spectral_norm(m_p - np.eye(a.shape[0])),
        p_matrix=p, q_matrix=qm,
    )
