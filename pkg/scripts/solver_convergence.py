#!/usr/bin/env python3
"""Print solver accuracy and empirical convergence order on dF/dt = -F."""

import numpy as np

from hydroforecast.autodiff import Tensor
from hydroforecast import autodiff as ad
from hydroforecast.odeint import TimeGrid, convergence_slope, integrate


def main():
    for solver in ("euler", "rk4"):
        grid = TimeGrid(0.0, 0.01, 100)
        traj = integrate(solver, Tensor([1.0]), lambda s, c, t: ad.scale(s, -1.0),
                         grid, Tensor(np.zeros((100, 1))))
        err = abs(traj.data[-1, 0] - np.exp(-1.0))
        slope = convergence_slope(solver)
        print(f"{solver:5s}  |F(1) - e^-1| = {err:.3e}   order ~ {slope:.3f}")


if __name__ == "__main__":
    main()
