"""
Forward noising and the DDIM reverse step
=========================================

z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps. With the true noise in hand,
25 deterministic DDIM steps walk straight back to z0.
"""

import numpy as np

from flowinpaint import schedule as sch

sc = sch.NoiseSchedule.linear()
print("T =", sc.T, " beta from", sc.beta[0], "to", sc.beta[-1])
for t in (0, 250, 500, 750, 999):
    print(f"t={t:4d}  signal {np.sqrt(sc.alpha_bar[t]):.3f}  noise {np.sqrt(1 - sc.alpha_bar[t]):.3f}")

ts = sc.inference_timesteps(25)
print("inference timesteps:", ts[:4], "...", ts[-3:])

rng = np.random.default_rng(0)
z0 = rng.uniform(-1, 1, (4, 3, 8, 8)).astype(np.float32)
eps = rng.standard_normal(z0.shape).astype(np.float32)

# Monte-Carlo check of the forward process at one timestep
t = 400
draws = rng.standard_normal((10_000,) + z0[0, 0, 0, :4].shape).astype(np.float32)
zt = sch.add_noise(sc, np.broadcast_to(z0[0, 0, 0, :4], draws.shape), draws, t)
print("MC mean", np.round(zt.mean(0), 3), " expected", np.round(np.sqrt(sc.alpha_bar[t]) * z0[0, 0, 0, :4], 3))
print("MC std ", np.round(zt.std(0), 3), " expected", round(float(np.sqrt(1 - sc.alpha_bar[t])), 3))

# an oracle denoiser: it always returns the noise that was really added
z = sch.add_noise(sc, z0, eps, ts[0])
for k, t in enumerate(ts):
    t_prev = ts[k + 1] if k + 1 < len(ts) else -1      # -1 is the clean end
    z = sch.ddim_step(sc, z, eps, t, t_prev)
print("oracle trajectory max error:", float(np.abs(z - z0).max()))

# predict_z0 and invert_to_eps undo each other
zt = sch.add_noise(sc, z0, eps, 321)
z0_hat = sch.predict_z0(sc, zt, eps, 321)
print("round trip:", float(np.abs(z0_hat - z0).max()), float(np.abs(sch.invert_to_eps(sc, zt, z0_hat, 321) - eps).max()))
