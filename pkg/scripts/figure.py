"""Regenerate the P / PI / PID inner-product curves for the default figure plant.

Writes a CSV (k, P, PI, PID) and prints the first-overshoot amplitudes.
"""

import argparse
import csv
from pathlib import Path

from pidsteer import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("figure_curves.csv"))
    args = ap.parse_args()

    fig = experiments.default_figure()
    names = list(fig.inner)
    with args.out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", *names])
        for k in range(len(fig.inner[names[0]])):
            writer.writerow([k, *(repr(float(fig.inner[n][k])) for n in names)])
    for n in names:
        first = fig.overshoot(n).first
        a0 = "none" if first is None else f"{first.a0:.4f} at k={first.i_max}"
        print(f"{n:>4}: final {fig.inner[n][-1]: .3e}, first overshoot {a0}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
