"""Random small robust-MPC instances shared by several test modules."""
import numpy as np

from pumpsched import (ConstraintSpec, DisturbanceSet, LinearTankModel, PumpPressureModel,
                       build_stacked)


def random_instance(rng, N, n=2, m=2, l=2):
    """Stable random tank model with a feasible initial level.

    Returns ``(stacked, spec, h0, d_bar, prices, pressure)``.
    """
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = Q @ np.diag(rng.uniform(0.6, 0.98, n)) @ Q.T
    B1 = np.abs(rng.standard_normal((n, m))) * 0.02 + 0.005 * np.eye(n, m)
    B2 = -np.abs(rng.standard_normal((n, 1))) * 0.01
    model = LinearTankModel(A, B1, B2)
    E = np.diag(rng.uniform(0.01, 0.08, n))
    if l != n or rng.random() < 0.5:
        E = rng.uniform(-0.04, 0.04, (n, l))
    spec = ConstraintSpec(rng.uniform(0.5, 1.0, n), rng.uniform(2.5, 3.5, n), rng.uniform(60, 120, m))
    h0 = spec.midpoint() + rng.uniform(-0.3, 0.3, n)
    d_bar = rng.uniform(20, 60, N)
    prices = rng.uniform(0.002, 0.006, N)
    C = rng.uniform(0.5, 1.5, (m, n))
    R = rng.standard_normal((m, m)) * 0.02
    D = R @ R.T + 0.02 * np.eye(m)
    pressure = PumpPressureModel(C, D, -rng.uniform(25, 35, m))
    stacked = build_stacked(model, spec, DisturbanceSet(E), N)
    return stacked, spec, h0, d_bar, prices, pressure
