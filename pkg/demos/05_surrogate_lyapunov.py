"""Lyapunov exponents of a trained surrogate.

Run the trained network in closed loop and push a set of deviation vectors
through its Jacobian, re-orthonormalizing as we go. If the surrogate has
learned the dynamics, its leading exponent should resemble the system's.
"""

import numpy as np

from chaoscast import (
    Lorenz96Config,
    LyapunovRunParams,
    ReservoirParams,
    build_reservoir,
    simulate_lorenz96,
    surrogate_spectrum,
    train_rc,
    true_lyapunov_spectrum,
)

cfg = Lorenz96Config(J=8, F=8.0, dt=0.01, t_transient=10.0, t_total=210.0, seed=0)
data = simulate_lorenz96(cfg).normalized()
true = true_lyapunov_spectrum(cfg, 3, T=200.0)
print("system exponents:   ", np.round(true.exponents, 3))

params = ReservoirParams(d_h=1000, d_o=8, degree=3, rho=0.4, omega=0.1, eta=1e-6, n_warmup=500, seed=0)
model = train_rc(build_reservoir(params), data)

run = LyapunovRunParams(T_w=1000, N=3, T=20000, T_n=10, T_c=500, eps=1e-4, dt=data.dt, tangent_warmup=500)
spec = surrogate_spectrum(model, data.test[: run.T_w + 1], run)
print("surrogate exponents:", np.round(spec.exponents, 3), "converged" if spec.converged else "not converged")
