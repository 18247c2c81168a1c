"""Seeded ensembles behind the acceptance criteria, at user-chosen sizes.

Prints summary statistics per ensemble; useful for checking how far the
acceptance margins are from failing.
"""

import argparse

import numpy as np

from pidsteer import experiments as X


def a0_bound(n):
    runs = [X.a0_bound_run(s) for s in range(n)]
    ok = [r for r in runs if r.eligible]
    ratios = np.array([r.a0 / r.bound for r in ok])
    viol = int(np.sum(ratios > 1))
    print(f"a0-bound: {len(ok)}/{n} eligible, violations {viol}, max ratio {ratios.max():.3f}")


def pid_reduction(n):
    runs = [X.pid_reduction_run(s) for s in range(n)]
    ok = [r for r in runs if r.comparison is not None and r.comparison.has_event
          and r.comparison.precondition_met]
    viol = sum(not r.comparison.reduced for r in ok)
    pi = np.mean([r.comparison.a0_pi for r in ok])
    pid = np.mean([r.comparison.a0_pid for r in ok])
    print(f"pid-reduction: {len(ok)}/{n} eligible, violations {viol}, mean A0 PI {pi:.4f} PID {pid:.4f}")


def lyapunov(n):
    worst = max(float(np.max(X.lyapunov_run(s, e0_scale=1e3).slack)) for s in range(n))
    print(f"lyapunov: {n} runs, max dissipation slack {worst:.3e} (must be <= 0)")


def residual(n):
    ratios = [X.residual_ratio(s) for s in range(n)]
    print(f"residual ratio: median {np.median(ratios):.3f}, range [{min(ratios):.3f}, {max(ratios):.3f}]")


ENSEMBLES = {"a0-bound": a0_bound, "pid-reduction": pid_reduction,
             "lyapunov": lyapunov, "residual": residual}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("which", nargs="*", help=f"subset of {sorted(ENSEMBLES)} (default: all)")
    ap.add_argument("-n", type=int, default=200, help="seeds per ensemble")
    args = ap.parse_args()
    unknown = set(args.which) - set(ENSEMBLES)
    if unknown:
        ap.error(f"unknown ensembles: {sorted(unknown)}")
    for name in args.which or ENSEMBLES:
        ENSEMBLES[name](args.n)


if __name__ == "__main__":
    main()
