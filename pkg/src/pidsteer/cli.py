"""Command-line front end.

    pidsteer simulate --config run.json --out results/
    pidsteer sweep | certify | overshoot-report | figure ...

A config is one JSON document with top-level keys ``plant``, ``gains``,
``steer`` and ``run``. Plants come in three flavours:

* ``{"type": "lti", "a_bar": ..., "w": ..., "e0": ..., "w_noise": 0.0}``
  -- constant linear error model, simulated directly;
* ``{"type": "random", "dim": ..., "pairs": ..., "layers": ..., ...}``
  -- keyword arguments of :func:`pidsteer.plant.make_random_plant`;
* ``{"file": "plant.json"}`` or an inline serialized plant document.

Exit codes: 0 ok, 2 config error, 3 divergence, 4 certificate failed.
"""

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, linalg
from .controllers import Gains, SteerFn, steering_vectors_sequential
from .errors import DivergenceError, InvalidInputError, PidSteerError
from .experiments import figure_run
from .plant import ContrastivePlant, make_random_plant, simulate_linearized

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CERT = 0, 2, 3, 4
MODES = ("simulate", "sweep", "certify", "overshoot-report", "figure")
TRACE_HEADER = "# pidsteer-trace v1"
SWEEP_HEADER = "# pidsteer-sweep v1"
FIGURE_HEADER = "# pidsteer-figure v1"
TRACE_COLUMNS = ("k", "e_bar_norm", "e_v", "s_v", "u_norm", "w_norm", "inner_e0")
CONVERGED_TOL = 1e-6
THREADS_ENV = "PIDSTEER_THREADS"


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    plant: dict
    gains: Gains
    steer: SteerFn
    steps: int = None
    seed: int = 0
    ensemble: int = 1
    out: Path = Path(".")
    mode: str = "simulate"
    sweep: dict = field(default_factory=dict)
    controllers: dict = field(default_factory=dict)
    certify: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.steps is not None and self.steps < 1:
            raise ConfigError("run.steps must be >= 1")
        if self.ensemble < 1:
            raise ConfigError("run.ensemble must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")


def _int(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    return int(v)


def load_config(path, mode, out=None, seed=None, steps=None):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - {"plant", "gains", "steer", "run"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "plant" not in doc:
        raise ConfigError("config needs a 'plant' block")
    plant = dict(doc["plant"])
    if "file" in plant:
        ref = Path(plant["file"])
        ref = ref if ref.is_absolute() else path.parent / ref
        if not ref.exists():
            raise ConfigError(f"plant file not found: {ref}")
        try:
            plant = json.loads(ref.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"plant file is not valid JSON: {exc}")
    run = dict(doc.get("run", {}))
    try:
        gains = Gains.from_config(doc.get("gains", {}))
        steer = SteerFn.from_config(doc.get("steer", {}))
        controllers = {k: Gains.from_config(v) for k, v in run.get("controllers", {}).items()}
    except (InvalidInputError, TypeError) as exc:
        raise ConfigError(str(exc))
    chosen = steps if steps is not None else run.get("steps")
    return RunConfig(
        plant=plant,
        gains=gains,
        steer=steer,
        steps=None if chosen is None else _int(chosen, "steps"),
        seed=_int(seed if seed is not None else run.get("seed", 0), "seed"),
        ensemble=_int(run.get("ensemble", 1), "run.ensemble"),
        out=Path(out if out is not None else run.get("out", ".")),
        mode=mode,
        sweep=run.get("sweep", {}),
        controllers=controllers,
        certify=run.get("certify", {}),
    )


def worker_count():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


# ------------------------------------------------------------------ running

def _lti_parts(plant_cfg):
    a = np.atleast_2d(np.asarray(plant_cfg["a_bar"], dtype=float))
    dim = a.shape[0]
    w = np.broadcast_to(np.asarray(plant_cfg.get("w", 0.0), dtype=float), (dim,)).copy()
    e0 = np.broadcast_to(np.asarray(plant_cfg.get("e0", 1.0), dtype=float), (dim,)).copy()
    return linalg.as_square(a, "plant.a_bar"), linalg.as_vec(w, "plant.w"), linalg.as_vec(e0, "plant.e0")


def build_plant(plant_cfg, seed, steps=None):
    """Return ('lti', (a, w, e0, noise)) or ('plant', ContrastivePlant)."""
    kind = plant_cfg.get("type", "document" if "layers" in plant_cfg and isinstance(plant_cfg["layers"], list) else None)
    try:
        if kind == "lti":
            a, w, e0 = _lti_parts(plant_cfg)
            return "lti", (a, w, e0, float(plant_cfg.get("w_noise", 0.0)))
        if kind == "random":
            kw = {k: v for k, v in plant_cfg.items() if k not in ("type", "seed")}
            layers = steps if steps is not None else kw.pop("layers", None)
            kw.pop("layers", None)
            if layers is None:
                raise ConfigError("random plant needs 'layers' (or --steps)")
            return "plant", make_random_plant(kw.pop("dim"), kw.pop("pairs"), layers,
                                              seed=seed, **kw)
        if kind == "document":
            return "plant", ContrastivePlant.from_dict(plant_cfg)
    except KeyError as exc:
        raise ConfigError(f"plant plant_cfg is missing {exc}")
    except TypeError as exc:
        raise ConfigError(f"bad plant plant_cfg: {exc}")
    raise ConfigError(f"unknown plant type {kind!r}")


def run_trace(cfg, gains, seed):
    """Simulate one member; returns a Trace."""
    kind, plant = build_plant(cfg.plant, seed, cfg.steps)
    if kind == "lti":
        a, w, e0, noise = plant
        steps = cfg.steps or 200
        rng = np.random.default_rng(seed)
        ws = w + noise * rng.standard_normal((steps, w.shape[0])) if noise else np.tile(w, (steps, 1))
        return simulate_linearized([(a, wk) for wk in ws], gains, e0)
    _, tr = steering_vectors_sequential(plant, gains, cfg.steer)
    if cfg.steps is not None and cfg.steps < tr.steps:
        raise ConfigError("--steps cannot shorten a serialized plant")
    return tr


def measured_constants(tr):
    m = max(linalg.spectral_norm(a) for a in tr.a_bar)
    q = max(linalg.spectral_norm(a * (1.0 - tr.gains.kp)) for a in tr.a_bar)
    return m, q


def first_converged(tr, tol=CONVERGED_TOL):
    """First k from which |e_bar| stays below ``tol`` to the end of the run, or -1.

    A momentary zero crossing does not count as convergence.
    """
    above = np.nonzero(np.linalg.norm(tr.e_bar, axis=1) >= tol)[0]
    if above.size == 0:
        return 0
    k = int(above[-1]) + 1
    return k if k <= tr.steps else -1


def certificates(m, q, gains, a_const=None):
    """(StabilityCertificate, LyapunovCertificate or None)."""
    stab = analysis.certify_pi(m, q, gains.ki)
    stab.ell = gains.kd
    lyap = None
    if stab.iss:
        if a_const is None and q <= m:
            # scalar loop with the same M and q: its M_I is exactly the comparison matrix
            a_const, gains = np.array([[m]]), Gains(1.0 - q / m, gains.ki, gains.kd)
        if a_const is not None:
            try:
                lyap = analysis.certify_pid_lti(a_const, gains)
            except PidSteerError:
                lyap = None
    return stab, lyap


def _constant_a(tr):
    a0 = tr.a_bar[0]
    return a0 if all(np.array_equal(a, a0) for a in tr.a_bar) else None


def _fmt(x):
    return "" if x is None else repr(float(x))


def trace_csv(tr):
    st = analysis.scalarize(tr)
    norms = np.linalg.norm(tr.e_bar, axis=1)
    inner = tr.inner_with_initial()
    buf = io.StringIO()
    buf.write(TRACE_HEADER + "\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(TRACE_COLUMNS)
    for k in range(tr.steps + 1):
        last = k == tr.steps
        wr.writerow([k, _fmt(norms[k]), _fmt(st.e_v[k]),
                     "" if last else _fmt(st.s_v[k]),
                     "" if last else _fmt(np.linalg.norm(tr.u[k])),
                     "" if last else _fmt(np.linalg.norm(tr.w[k])),
                     _fmt(inner[k])])
    return buf.getvalue()


def dump_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def summarize(tr):
    st = analysis.scalarize(tr)
    m, q = measured_constants(tr)
    stab, lyap = certificates(m, q, tr.gains, _constant_a(tr))
    return {
        "gains": tr.gains.to_dict(),
        "steps": tr.steps,
        "steady_state": float(np.linalg.norm(tr.e_bar[-1])),
        "converged_step": first_converged(tr),
        "min_v_projected_jacobian": float(np.min(st.a / (1.0 - tr.gains.kp))) if tr.gains.kp != 1 else None,
        "overshoot": analysis.detect_overshoots(st).to_dict(),
        "certificate": stab.to_dict(),
        "lyapunov": None if lyap is None else lyap.to_dict(),
    }


def _members(cfg):
    seeds = [cfg.seed + i for i in range(cfg.ensemble)]
    with ThreadPoolExecutor(max_workers=min(worker_count(), len(seeds))) as pool:
        traces = list(pool.map(lambda s: run_trace(cfg, cfg.gains, s), seeds))
    return sorted(zip(seeds, traces), key=lambda p: p[0])


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


# ------------------------------------------------------------------ commands

def cmd_simulate(cfg):
    members = _members(cfg)
    summary = []
    for seed, tr in members:
        name = "trace.csv" if cfg.ensemble == 1 else f"trace_seed{seed}.csv"
        _write(cfg.out / name, trace_csv(tr))
        summary.append(dict(summarize(tr), seed=seed, trace=name))
    _write(cfg.out / "summary.json", dump_json(summary[0] if cfg.ensemble == 1 else summary))
    return EXIT_OK


def _grid(values, default):
    vals = values if values is not None else [default]
    if not isinstance(vals, list) or not vals:
        raise ConfigError("sweep grids must be non-empty lists")
    return sorted(float(v) for v in vals)


def cmd_sweep(cfg):
    sw = cfg.sweep
    unknown = set(sw) - {"kp", "ki", "kd"}
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    grid = [(kp, ki, kd)
            for kp in _grid(sw.get("kp"), cfg.gains.kp)
            for ki in _grid(sw.get("ki"), cfg.gains.ki)
            for kd in _grid(sw.get("kd"), cfg.gains.kd)]
    try:
        gain_list = [Gains(*g) for g in grid]
    except InvalidInputError as exc:
        raise ConfigError(str(exc))

    def one(g):
        tr = run_trace(cfg, g, cfg.seed)
        st = analysis.scalarize(tr)
        rep = analysis.detect_overshoots(st)
        m, q = measured_constants(tr)
        stab = analysis.certify_pi(m, q, g.ki)
        stop = rep.first.i_max if rep.first else len(st.e_v) - 1
        mono = all(st.e_v[k + 1] <= st.e_v[k] for k in range(stop))
        return [g.kp, g.ki, g.kd, first_converged(tr), rep.first.a0 if rep.first else 0.0,
                m, q, m * g.ki, stab.radius, stab.iss, mono]

    with ThreadPoolExecutor(max_workers=min(worker_count(), len(gain_list))) as pool:
        rows = list(pool.map(one, gain_list))
    buf = io.StringIO()
    buf.write(SWEEP_HEADER + "\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["kp", "ki", "kd", "converged_step", "a0", "m_bound", "q", "mh",
                 "radius", "iss", "monotone_pre_peak"])
    for r in rows:
        wr.writerow([_fmt(r[0]), _fmt(r[1]), _fmt(r[2]), r[3], _fmt(r[4]), _fmt(r[5]),
                     _fmt(r[6]), _fmt(r[7]), _fmt(r[8]), str(r[9]).lower(), str(r[10]).lower()])
    _write(cfg.out / "sweep.csv", buf.getvalue())
    return EXIT_OK


def cmd_certify(cfg):
    c = cfg.certify
    if c:
        try:
            m, q = float(c["m_bound"]), float(c["q"])
            gains = Gains(0.0, float(c.get("h", cfg.gains.ki)), float(c.get("ell", cfg.gains.kd)))
        except (KeyError, TypeError, ValueError, InvalidInputError) as exc:
            raise ConfigError(f"bad run.certify block: {exc}")
        stab, lyap = certificates(m, q, gains)
    else:
        tr = run_trace(cfg, cfg.gains, cfg.seed)
        m, q = measured_constants(tr)
        stab, lyap = certificates(m, q, cfg.gains, _constant_a(tr))
    text = dump_json({"stability": stab.to_dict(), "lyapunov": None if lyap is None else lyap.to_dict()})
    _write(cfg.out / "certificate.json", text)
    sys.stdout.write(text)
    return EXIT_OK if stab.iss else EXIT_CERT


def cmd_overshoot_report(cfg):
    tr = run_trace(cfg, cfg.gains, cfg.seed)
    st = analysis.scalarize(tr)
    report = {"gains": cfg.gains.to_dict(), "overshoot": analysis.detect_overshoots(st).to_dict()}
    if cfg.gains.ki > 0:
        pi_gains = Gains(cfg.gains.kp, cfg.gains.ki, 0.0)
        pi = analysis.scalarize(run_trace(cfg, pi_gains, cfg.seed))
        m, q = measured_constants(tr)
        try:
            r = analysis.estimate_r_smooth(pi)
            thr = analysis.derivative_gain_threshold(q, m, r)
        except PidSteerError:
            r, thr = None, None
        cmp_ = analysis.compare_first_overshoot(pi, st)
        report.update({
            "r_smooth": r,
            "derivative_gain_threshold": None if thr is None or not np.isfinite(thr) else thr,
            "comparison_vs_pi": {"a0_pi": cmp_.a0_pi, "a0_pid": cmp_.a0_pid, "reduced": cmp_.reduced,
                                 "precondition_met": cmp_.precondition_met, "has_event": cmp_.has_event},
        })
    _write(cfg.out / "overshoot.json", dump_json(report))
    return EXIT_OK


def cmd_figure(cfg):
    if not cfg.controllers:
        raise ConfigError("figure mode needs run.controllers (e.g. P, PI, PID)")
    kind, plant = build_plant(cfg.plant, cfg.seed, cfg.steps)
    if kind == "lti":
        names = list(cfg.controllers)
        cols = {n: run_trace(cfg, g, cfg.seed).inner_with_initial() for n, g in cfg.controllers.items()}
    else:
        res = figure_run(plant, cfg.controllers, cfg.steer)
        names, cols = list(cfg.controllers), res.inner
    buf = io.StringIO()
    buf.write(FIGURE_HEADER + "\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["k"] + names)
    for k in range(len(cols[names[0]])):
        wr.writerow([k] + [_fmt(cols[n][k]) for n in names])
    _write(cfg.out / "figure.csv", buf.getvalue())
    summary = {}
    for n in names:
        v = cols[n]
        rep = analysis.detect_overshoots(v / np.sqrt(v[0]))
        summary[n] = {"final": float(v[-1]), "crosses_zero": bool(np.any(v < 0)),
                      "first_overshoot": rep.to_dict()["first"]}
    _write(cfg.out / "figure_summary.json", dump_json(summary))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "certify": cmd_certify,
    "overshoot-report": cmd_overshoot_report,
    "figure": cmd_figure,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="pidsteer", description="PID activation-steering simulator")
    sub = ap.add_subparsers(dest="mode", required=True)
    for name in MODES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config with plant/gains/steer/run")
        p.add_argument("--out", default=None, help="output directory (default: run.out or .)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.mode, args.out, args.seed, args.steps)
        with np.errstate(over="ignore", invalid="ignore"):
            return COMMANDS[args.mode](cfg)
    except DivergenceError as exc:
        print(f"error: divergence at step {exc.step}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, InvalidInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
