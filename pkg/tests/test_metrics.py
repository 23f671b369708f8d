from __future__ import annotations

import math

import numpy as np
import pytest

from dic.config import EditConfig
from dic.denoiser import LATENT_SHAPE, AnalyticGaussianModel, prompt_mean, tokenize
from dic.errors import DimensionError
from dic.inversion import dic_edit
from dic.metrics import edit_fidelity_proxy, mse, structure_distance
from dic.numerics import SeededRng, derive_seed


def hand_structure_distance(a, b):
    # Independent oracle: explicit cosine loops over frame vectors.
    def gram(x):
        frames = [x.reshape(-1, x.shape[-1])[:, j] for j in range(x.shape[-1])]
        n = len(frames)
        g = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                ni, nj = np.linalg.norm(frames[i]), np.linalg.norm(frames[j])
                if ni == 0.0 or nj == 0.0:
                    g[i, j] = 0.0
                else:
                    g[i, j] = float(np.dot(frames[i], frames[j]) / (ni * nj))
        return g

    ga, gb = gram(a), gram(b)
    return float(np.mean((ga - gb) ** 2) * 1e3)


def test_structure_distance_zero_on_identical():
    z = SeededRng(1).normal((1, 4, 6))
    assert structure_distance(z, z) == 0.0


def test_structure_distance_scale_invariant():
    z = SeededRng(2).normal((1, 4, 6))
    assert structure_distance(z, 2.0 * z) < 1e-24


def test_structure_distance_matches_hand_oracle():
    a = np.array([[[1.0, 0.0, 2.0], [0.0, 1.0, 2.0]]])
    b = np.array([[[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]]])
    assert abs(structure_distance(a, b) - hand_structure_distance(a, b)) < 1e-12
    rng = SeededRng(3)
    x, y = rng.normal((1, 4, 3)), rng.normal((1, 4, 3))
    assert abs(structure_distance(x, y) - hand_structure_distance(x, y)) < 1e-12


def test_structure_distance_zero_norm_frame():
    a = np.array([[[0.0, 1.0], [0.0, 2.0]]])   # first frame all zero
    b = np.array([[[1.0, 1.0], [1.0, 2.0]]])
    out = structure_distance(a, b)
    assert math.isfinite(out) and out >= 0.0


def test_structure_distance_symmetric():
    rng = SeededRng(4)
    a, b = rng.normal((1, 4, 6)), rng.normal((1, 4, 6))
    assert structure_distance(a, b) == structure_distance(b, a)


def test_structure_distance_shape_mismatch():
    with pytest.raises(DimensionError):
        structure_distance(np.zeros((1, 2, 3)), np.zeros((1, 3, 2)))


def test_mse_examples():
    assert mse(np.zeros(3), np.zeros(3)) == 0.0
    assert mse(np.array([0.0]), np.array([2.0])) == 4.0


def test_mse_matches_loop_oracle():
    rng = SeededRng(5)
    a, b = rng.normal((3, 4)), rng.normal((3, 4))
    acc = 0.0
    for i in range(3):
        for j in range(4):
            acc += (a[i, j] - b[i, j]) ** 2
    assert mse(a, b) == acc / 12.0


def test_mse_symmetric_and_positive():
    rng = SeededRng(6)
    a, b = rng.normal((5,)), rng.normal((5,))
    assert mse(a, b) == mse(b, a) > 0.0


def test_mse_shape_mismatch():
    with pytest.raises(DimensionError):
        mse(np.zeros(2), np.zeros(3))


def test_proxy_is_zero_at_prompt_mean(sched200):
    model = AnalyticGaussianModel(sched200, sigma0=2.5)
    mu = prompt_mean(tuple(tokenize("solo piano piece")), LATENT_SHAPE, 0)
    assert edit_fidelity_proxy(mu, "solo piano piece", model) == 0.0


def test_proxy_negative_away_from_mean(sched200):
    model = AnalyticGaussianModel(sched200, sigma0=2.5)
    mu_other = prompt_mean(tuple(tokenize("heavy metal drums")), LATENT_SHAPE, 0)
    assert edit_fidelity_proxy(mu_other, "solo piano piece", model) < 0.0


def test_proxy_improves_after_analytic_edit(sched200):
    model = AnalyticGaussianModel(sched200, sigma0=2.5)
    src, tgt = "ambient acoustic guitar music", "ambient acoustic violin music"
    mu_src = prompt_mean(tuple(tokenize(src)), LATENT_SHAPE, 0)
    z0 = mu_src + 0.5 * SeededRng(derive_seed("proxy-test", 1)).normal(LATENT_SHAPE)
    z_edit, _, _ = dic_edit(z0, src, tgt, EditConfig(), model=model, schedule=sched200)
    assert edit_fidelity_proxy(z_edit, tgt, model) > edit_fidelity_proxy(z0, tgt, model)
