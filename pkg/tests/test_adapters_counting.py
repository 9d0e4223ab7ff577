import numpy as np
import torch

from tokenmatch.adapters import count_from_density, make_exemplar_guide
from tokenmatch.seeding import numpy_rng


def _gaussians(centers, size=64, sigma=1.5, amplitude=1.0):
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    out = np.zeros((size, size))
    for cy, cx in centers:
        out += amplitude * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return out


def test_separated_modes_counted_exactly():
    rng = np.random.default_rng(0)
    for n in (1, 4, 7, 13, 20):
        centers = []
        while len(centers) < n:
            c = rng.uniform(6, 58, size=2)
            if all(np.hypot(*(c - np.array(o))) > 10 for o in centers):
                centers.append(tuple(c))
        density = _gaussians(centers)
        assert count_from_density(density) == n


def test_empty_map_counts_zero():
    assert count_from_density(np.zeros((32, 32))) == 0
    assert count_from_density(torch.zeros(1, 32, 32)) == 0


def test_sum_rule_triggers_strictly_above_threshold():
    # mass 3500: counted by the sum, not the modes
    density = np.full((100, 100), 0.35)
    assert count_from_density(density) == 3500
    # mass exactly 3000 (0.25 is binary-exact): mode path; the constant
    # plateau merges into a single mode
    at_threshold = np.full((120, 100), 0.25)
    assert float(at_threshold.sum()) == 3000.0
    assert count_from_density(at_threshold) == 1
    # one row more: 3025 > 3000 triggers the sum rule
    above = np.full((121, 100), 0.25)
    assert count_from_density(above) == 3025


def test_sub_threshold_background_noise_invariance():
    rng = np.random.default_rng(1)
    centers = [(10, 10), (30, 40), (50, 20)]
    density = _gaussians(centers)
    tau = 0.3 * density.max()
    noise = rng.uniform(0, tau / 2, size=density.shape)
    background = density < 1e-6
    noisy = density.copy()
    noisy[background] += noise[background]
    assert count_from_density(noisy) == count_from_density(density) == 3


def test_exemplar_guide_black_outside_and_deterministic():
    rng = numpy_rng(0, "guide")
    image = torch.rand(3, 64, 64)
    boxes = np.array([[4, 4, 16, 16], [30, 30, 44, 44], [50, 8, 60, 20]])
    g1 = make_exemplar_guide(image, boxes, numpy_rng(5, "g"))
    g2 = make_exemplar_guide(image, boxes, numpy_rng(5, "g"))
    assert torch.equal(g1, g2)
    g3 = make_exemplar_guide(image, boxes, numpy_rng(6, "g"))
    assert not torch.equal(g1, g3)


def test_exemplar_guide_identity_single_paste():
    image = torch.rand(3, 64, 64)
    boxes = np.array([[10, 10, 26, 30]])
    guide = make_exemplar_guide(image, boxes, numpy_rng(0, "x"), pastes_per_box=1)
    assert torch.equal(guide[:, 10:26, 10:30], image[:, 10:26, 10:30])
    mask = torch.ones_like(guide, dtype=torch.bool)
    mask[:, 10:26, 10:30] = False
    assert float(guide[mask].abs().sum()) == 0.0
