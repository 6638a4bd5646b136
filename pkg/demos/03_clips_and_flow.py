"""
Synthetic clips, exact flow, masks and warping
==============================================

Moving shapes over a textured background give us videos whose optical flow
is known exactly. BR masks are free-form strokes; OR masks cover one object,
and the clean target re-renders the scene without it.
"""

from pathlib import Path

import numpy as np

from flowinpaint import io, metrics, synth
from flowinpaint import flow as fl

out = Path(__file__).with_name("out") / "clips"
out.mkdir(parents=True, exist_ok=True)

br = synth.make_sample(3, "br")
orm = synth.make_sample(3, "or")
print("frames", br.clip.frames.shape, "range", br.clip.frames.min().round(2), br.clip.frames.max().round(2))
print("flow pairs", br.clip.flow.pairs, "forward", br.clip.flow.forward.shape)
print(f"BR hole {1 - br.mask.mean():.1%} of pixels, OR hole {1 - orm.mask.mean():.1%}")
print("OR target differs from input inside the hole:", not np.array_equal(orm.clean.frames, orm.clip.frames))

for k in (0, 8, 15):
    io.write_ppm(out / f"br_frame{k:02d}.ppm", br.clip.frames[k])
    io.write_ppm(out / f"br_masked{k:02d}.ppm", br.masked[k])
    io.write_ppm(out / f"or_clean{k:02d}.ppm", orm.clean.frames[k])
print("PPM frames written to", out)

# warping frame 1 back by the forward flow lands on frame 0 where nothing is occluded
warped, valid = fl.backward_warp(br.clip.frames[1:], br.clip.flow.forward)
ok = synth.consistency_mask(br.clip)[:, None] & (valid == 1)
err = np.abs(warped - br.clip.frames[:-1])
print("max warp error on consistent pixels:", float(err[np.broadcast_to(ok, err.shape)].max()))
print("E_warp of the ground-truth clip:", round(metrics.warp_error(br.clip.frames, br.clip.flow), 5))

# what the flow branch sees: flow estimated from the masked clip, zeroed in the hole
corrupted, hole = fl.estimate_corrupted_flow(br.masked, br.mask, br.clip.flow)
print("hole covers", f"{hole.mean():.1%}", "of each pair; flow left there:", float(np.abs(corrupted.forward * hole).max()))
gt_in_hole = np.abs(br.clip.flow.forward * hole).max()
print("ground-truth flow inside the BR hole:", float(gt_in_hole), "(strokes avoid objects, so holes sit on static background)")
