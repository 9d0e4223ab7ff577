"""Downstream task adapters: annotation -> dense map -> annotation.

Every adapter pairs an encoder with an independent decoder so round trips can
be verified on synthetic data: keypoints to heatmaps and back, poses to
coordinate textures and back through RANSAC PnP, instance masks to
center-pointing flow and back through integration, densities to counts, and
interaction guides (clicks, exemplars) to input modalities.
"""

import numpy as np
import torch

from tokenmatch.adapters import (
    PoseProblem,
    count_from_density,
    decode_flow,
    decode_keypoints,
    encode_keypoints,
    flow_labels,
    make_click_guide,
    make_exemplar_guide,
    solve_pnp,
    texture_from_pose,
)
from tokenmatch.adapters.pose import rotation_angle
from tokenmatch.metrics import evaluate
from tokenmatch.seeding import numpy_rng

rng = np.random.default_rng(0)

# keypoints <-> heatmaps
coords = rng.uniform(4, 60, size=(5, 2))
heatmaps = encode_keypoints(coords, None, (64, 64), sigma=2.0)
decoded, _ = decode_keypoints(heatmaps)
print(f"keypoints: round-trip error {np.abs(decoded - coords).max():.2f}px "
      f"(tolerance 0.5)")

# pose <-> coordinate texture
vertices = rng.uniform(-1, 1, size=(1500, 3)) * [30, 22, 26]
K = np.array([[120.0, 0, 64], [0, 120.0, 64], [0, 0, 1]])
problem = PoseProblem(intrinsics=K, vertices=vertices,
                      diameter=float(np.linalg.norm([60, 44, 52])))
from scipy.spatial.transform import Rotation

R = Rotation.random(random_state=3).as_matrix()
t = np.array([2.0, -4.0, 260.0])
texture, fg = texture_from_pose(problem, R, t, (128, 128))
R_hat, t_hat = solve_pnp(texture, fg, problem, rng=np.random.default_rng(1))
print(f"pose: {int(fg.sum())} correspondence pixels, rotation error "
      f"{rotation_angle(R_hat, R):.2e} rad, translation error "
      f"{np.linalg.norm(t_hat - t):.2e}")

# instances <-> flow
index_map = np.zeros((64, 64), dtype=np.int32)
yy, xx = np.mgrid[:64, :64]
index_map[(yy - 20) ** 2 + (xx - 24) ** 2 <= 90] = 1
index_map[(yy - 42) ** 2 + (xx - 44) ** 2 <= 110] = 2
label = flow_labels(index_map)
recovered = decode_flow(label.flow, label.foreground)
print(f"flow: {len(np.unique(recovered)) - 1} instances recovered, "
      f"AP50 {evaluate(recovered, index_map, 'ap50_instances'):.2f}")

# density <-> count
density = np.zeros((64, 64))
centers = [(12, 12), (12, 44), (40, 20), (50, 50)]
for cy, cx in centers:
    density += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 1.5**2))
print(f"counting: {count_from_density(density)} modes from {len(centers)} bumps; "
      f"a map with mass 3500 counts as {count_from_density(np.full((100, 100), 0.35))} "
      f"via the sum rule")

# interaction guides
masks = [index_map == 1, index_map == 2]
guide, target, centers = make_click_guide(masks, numpy_rng(0, "clicks"))
print(f"click guide: {len(centers)} clicks -> guide {tuple(guide.shape)}, "
      f"target covers {int(target.sum())} px")
image = torch.rand(3, 64, 64)
boxes = np.array([[4, 4, 16, 16], [30, 30, 44, 44], [50, 8, 60, 20]])
exemplar = make_exemplar_guide(image, boxes, numpy_rng(1, "exemplar"))
print(f"exemplar guide: non-zero fraction "
      f"{float((exemplar.abs().sum(0) > 0).float().mean()):.2f}")
