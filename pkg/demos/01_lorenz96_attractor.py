"""Lorenz-96: simulate the attractor and measure how fast it forgets.

The leading Lyapunov exponent sets the time unit used for every forecast
score in this package, so we start by estimating it.
"""

import numpy as np

from chaoscast import Lorenz96Config, simulate_lorenz96, true_lyapunov_spectrum

cfg = Lorenz96Config(J=40, F=8.0, dt=0.01, t_transient=100.0, t_total=200.0, seed=0)
data = simulate_lorenz96(cfg)
print(f"{data.n_samples} samples of a {data.d_o}-dimensional state")
print(f"mean {data.mean.mean():.3f}, std {data.std.mean():.3f} (averaged over sites)")

# a short horizon keeps the demo quick; the estimate tightens as T grows
spec = true_lyapunov_spectrum(cfg, 5, T=100.0)
lam1 = spec.exponents[0]
print("leading exponents:", np.round(spec.exponents, 3))
print(f"Lyapunov time 1/lambda1 = {1 / lam1:.3f} time units = {1 / lam1 / cfg.dt:.0f} steps")

# pairs of trajectories that start 1e-8 apart separate at about that rate;
# a single pair is noisy, so average log-separations over several starts
rng = np.random.default_rng(1)
short = Lorenz96Config(J=40, F=8.0, dt=0.01, t_transient=0.01, t_total=8.0)
logs = []
for k in range(8):
    x0 = data.values[1000 * k]
    dx = rng.normal(size=40)
    a = simulate_lorenz96(short, x0=x0)
    b = simulate_lorenz96(short, x0=x0 + 1e-8 * dx / np.linalg.norm(dx))
    logs.append(np.log(np.linalg.norm(a.values - b.values, axis=1)))
logs = np.mean(logs, axis=0)
t = np.arange(len(logs)) * cfg.dt
growth = np.polyfit(t[100:700], logs[100:700], 1)[0]
print(f"separation growth rate {growth:.2f} vs lambda1 {lam1:.2f}")
