"""Gradient of the sigmoid-gated path vs the tanh*sigmoid path over a range of x.

    python scripts/gate_gradient_table.py [--start -10 --stop 10.5 --step 0.5] [--csv gates.csv]
"""

import argparse

import numpy as np

from bistream_sod.fusion import gate_gradient_report, gate_report_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--start", type=float, default=-10.0)
    ap.add_argument("--stop", type=float, default=10.5)
    ap.add_argument("--step", type=float, default=0.5)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()

    rows = gate_gradient_report(np.arange(args.start, args.stop, args.step).tolist())
    print(f"{'x':>6} {'d[s(x)x]':>12} {'d[tanh*s]':>12} {'fd gap':>9}")
    for r in rows:
        gap = max(abs(r.grad_proposed - r.fd_proposed), abs(r.grad_lstm - r.fd_lstm))
        print(f"{r.x:6.1f} {r.grad_proposed:12.6f} {r.grad_lstm:12.3e} {gap:9.1e}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(gate_report_csv(rows))


if __name__ == "__main__":
    main()
