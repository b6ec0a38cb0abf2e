"""
The diffusion algebra, one piece at a time
==========================================

A schedule is just a table of surviving-signal fractions abar_t. Everything
else (forward noising, the one-step posterior, DDIM jumps) is closed-form
arithmetic on that table. This script exercises each piece on plain arrays
so the numbers can be checked by eye.

Run with:  python demos/02_noise_schedules_and_samplers.py
"""

import numpy as np

from fastgesture.schedule import (
    ddim_step,
    ddim_timesteps,
    forward_step,
    make_schedule,
    posterior_step,
    q_sample,
)

# geometric-alpha: abar falls by the same factor every step, ending at 1e-4
for T in (1, 5, 10):
    s = make_schedule(T)
    print(f"T={T:2d} abar:", np.array2string(s.alpha_bars, precision=4))

# Noising step by step is the same as noising in one shot.
s = make_schedule(10)
rng = np.random.default_rng(0)
x0 = np.full(100_000, 0.8)
x = x0.copy()
for t in range(1, 6):
    x = forward_step(x, t, s, rng.standard_normal(x.shape))
direct = q_sample(x0, 5, s, rng.standard_normal(x.shape))
print("\nafter 5 steps   mean %.4f  var %.4f" % (x.mean(), x.var()))
print("one-shot q(x5)  mean %.4f  var %.4f" % (direct.mean(), direct.var()))
print("closed form     mean %.4f  var %.4f" % (np.sqrt(s.alpha_bars[5]) * 0.8, 1 - s.alpha_bars[5]))
print("(standard error of a 1e5-draw mean here is about %.4f)" % np.sqrt((1 - s.alpha_bars[5]) / x.size))

# The posterior step at t=1 lands exactly on the x0 estimate.
x_t = rng.standard_normal(4)
x0_hat = np.array([0.1, -0.2, 0.3, 0.4])
print("\nposterior_step at t=1:", posterior_step(x_t, x0_hat, 1, s, rng.standard_normal(4)))

# DDIM with eta=0 is a deterministic map; its last jump also returns x0_hat.
print("DDIM 10 -> 0:", ddim_step(x_t, x0_hat, 10, 0, s, eta=0.0))
a = ddim_step(x_t, x0_hat, 10, 5, s, eta=0.0)
b = ddim_step(x_t, x0_hat, 10, 5, s, eta=0.0)
print("DDIM 10 -> 5 twice, identical:", np.array_equal(a, b))

# Which indices a 4-step DDIM visits on a 1000-step schedule
print("ddim_timesteps(1000, 4):", ddim_timesteps(1000, 4))
