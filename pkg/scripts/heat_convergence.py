"""Time-step halving on the heat reduction: Cauchy differences and their ratios."""

import argparse

import numpy as np

from gradflow import models as md
from gradflow.grid import Grid
from gradflow.limits import cauchy_metric
from gradflow.scheme import StepParams, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--shape", type=int, nargs="+", default=[32])
    ap.add_argument("--T", type=float, default=0.08)
    ap.add_argument("--tau", type=float, default=0.02)
    ap.add_argument("--halvings", type=int, default=5)
    args = ap.parse_args()

    g = Grid.unit(*args.shape)
    n = g.dim
    spec = md.ModelSpec(m=1, n=n, kappa=1.0, mobility=md.ConstantMobility.identity(1),
                        weight=md.ConstantWeight(1, 0.0), operator=md.IdentityOperator(1, n),
                        anisotropy=md.FrobeniusFamily(1, n))
    u0 = np.prod(np.cos(np.pi * g.coords), axis=1)[:, None]
    runs = [run(spec, g, u0, args.T, StepParams(tau=args.tau / 2 ** k))
            for k in range(args.halvings)]
    prev = None
    print("tau,cauchy,ratio")
    for a, b in zip(runs, runs[1:]):
        c = cauchy_metric(a, b)
        print(f"{a.params.tau:.6g},{c:.6e},{'' if prev is None else f'{c / prev:.4f}'}")
        prev = c


if __name__ == "__main__":
    main()
