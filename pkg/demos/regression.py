"""Function-on-function regression with a known coefficient surface.

Predictor curves are random sums of sine modes; responses integrate them
against a fixed surface beta(s, t) and add noise.  The fitted surface
should approach beta as the sample grows, and the fit summaries (R^2,
leave-one-out R^2) should reflect the signal-to-noise ratio.
"""

import datetime as dt

import numpy as np

from fdepi.fdcore import FunctionalDataset, TimeGrid, trapezoid_weights
from fdepi.funreg import FunRegSpec, fit, loocv_r_squared, r_squared

T = 30
s = np.arange(T) / (T - 1)
beta = 3 * np.outer(np.sin(np.pi * s), np.cos(np.pi * s)) + np.outer(s, s)
modes = np.array([np.sqrt(2) * np.sin((k + 0.5) * np.pi * s) for k in range(12)])
grid = TimeGrid(dt.date(2020, 3, 1), T)


def sample(rng, n):
    X = (rng.normal(size=(n, 12)) / np.arange(1, 13)) @ modes
    Y = X @ (trapezoid_weights(T)[:, None] * beta) + rng.normal(0, 4.0, (n, T))
    names = tuple(f"r{i:03d}" for i in range(n))
    return FunctionalDataset(grid, names, X), FunctionalDataset(grid, names, Y)


rng = np.random.default_rng(5)
print("   n   surface ISE   R^2")
for n in (20, 50, 200):
    x, y = sample(rng, n)
    spec = FunRegSpec(response=y, functional_predictors={"x": x}, n_basis=10)
    res = fit(spec)
    ise = np.mean((res.surfaces["x"] - beta) ** 2)
    print(f"{n:4d} {ise:13.4f} {r_squared(res):6.3f}")

x, y = sample(rng, 40)
spec = FunRegSpec(response=y, functional_predictors={"x": x}, n_basis=10)
print("\nleave-one-out R^2 at n = 40:", round(loocv_r_squared(spec), 3))
