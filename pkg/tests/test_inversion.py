from __future__ import annotations

import numpy as np
import pytest

from dic.config import EditConfig
from dic.denoiser import LATENT_SHAPE, AnalyticGaussianModel, encode_prompt, prompt_mean, tokenize
from dic.errors import ConfigError
from dic.inversion import (
    TABLE_POLICIES,
    DistancePolicy,
    ddim_edit_baseline,
    ddim_generate,
    dic_edit,
    invert,
    sdedit_baseline,
)
from dic.metrics import mse
from dic.numerics import SeededRng, derive_seed
from dic.schedule import ddim_inversion_step, make_matched_schedule, make_schedule

SRC = "ambient acoustic guitar music"
TGT = "ambient acoustic violin music"


def synth(prompt: str, seed: int, noise: float = 0.5) -> np.ndarray:
    mu = prompt_mean(tuple(tokenize(prompt)), LATENT_SHAPE, 0)
    return mu + noise * SeededRng(derive_seed("test-input", seed)).normal(LATENT_SHAPE)


class TestDistancePolicy:
    def test_parse_shorthand(self):
        assert DistancePolicy.parse("src") == DistancePolicy(src="src", tgt="none", har="none")

    def test_parse_triples(self):
        assert DistancePolicy.parse("src,0,har") == DistancePolicy("src", "none", "har")
        assert DistancePolicy.parse("d_src,d_tgt,0") == DistancePolicy("src", "tgt", "none")

    def test_canonical_round_trip(self):
        for text in TABLE_POLICIES:
            assert DistancePolicy.parse(text).canonical() == text

    def test_rejects_unknown_selector(self):
        with pytest.raises(ConfigError):
            DistancePolicy.parse("src,xyz,0")
        with pytest.raises(ConfigError):
            DistancePolicy.parse("src,0")


class TestInvert:
    def test_single_step_trajectory(self, sched200, analytic200):
        s1 = make_schedule(1, 0.01, 0.01)
        model = AnalyticGaussianModel(s1, sigma0=1.0)
        z0 = SeededRng(1).normal(LATENT_SHAPE)
        traj = invert(z0, "", 1.0, model, s1)
        assert traj.T == 1
        eps = model.predict(z0, 1, encode_prompt("", 0))
        assert np.array_equal(traj.z_star(1), ddim_inversion_step(z0, eps, 1, s1))

    def test_reconstruction_near_exact_at_unit_guidance(self, sched200, analytic200):
        z0 = SeededRng(2).normal(LATENT_SHAPE)
        traj = invert(z0, "", 1.0, analytic200, sched200)
        recon = ddim_generate(traj.z_star(200), "", 1.0, analytic200, sched200)
        assert mse(recon, z0) < 1e-4

    def test_reconstruction_degrades_with_inverse_guidance(self, sched200, analytic200):
        z0 = synth(SRC, seed=11)
        errors = []
        for omega in (1.0, 2.5, 5.0, 7.5):
            traj = invert(z0, SRC, omega, analytic200, sched200)
            recon = ddim_generate(traj.z_star(200), SRC, 1.0, analytic200, sched200)
            errors.append(mse(recon, z0))
        assert all(errors[i] <= errors[i + 1] + 1e-9 for i in range(3))

    def test_reconstruction_improves_with_steps(self):
        z0 = synth(SRC, seed=12)
        errors = []
        for T in (10, 50, 200):
            sched = make_matched_schedule(T)
            model = AnalyticGaussianModel(sched, sigma0=1.0)
            traj = invert(z0, SRC, 1.0, model, sched)
            errors.append(mse(ddim_generate(traj.z_star(T), SRC, 1.0, model, sched), z0))
        assert errors[0] > errors[1] > errors[2]

    def test_trajectory_index_bounds(self, sched200, analytic200):
        z0 = SeededRng(3).normal(LATENT_SHAPE)
        traj = invert(z0, "", 1.0, analytic200, sched200)
        assert traj.z_star(0) is traj.z0
        with pytest.raises(ConfigError):
            traj.z_star(201)


class TestDicEdit:
    def test_source_branch_pinned_across_guidance(self, sched200):
        model = AnalyticGaussianModel(sched200, sigma0=2.5)
        z0 = synth(SRC, seed=1)
        for omega in (1.0, 2.5, 5.0, 7.5):
            cfg = EditConfig(omega_forward=omega)
            _, z_src, report = dic_edit(z0, SRC, TGT, cfg, model=model, schedule=sched200)
            assert np.max(np.abs(z_src - z0)) < 1e-5
            assert max(s["src_dev"] for s in report.steps) < 1e-9

    def test_full_preservation_identity(self, sched200):
        model = AnalyticGaussianModel(sched200, sigma0=2.5)
        z0 = synth(SRC, seed=2)
        cfg = EditConfig(policy=DistancePolicy("src", "tgt", "har"),
                         cross_control=False, self_control=False, omega_forward=5.0)
        z_tgt, _, _ = dic_edit(z0, SRC, SRC, cfg, model=model, schedule=sched200)
        assert np.max(np.abs(z_tgt - z0)) < 1e-5

    def test_edit_moves_toward_target_mean(self, sched200):
        model = AnalyticGaussianModel(sched200, sigma0=2.5)
        z0 = synth(SRC, seed=3)
        mu_tgt = prompt_mean(tuple(tokenize(TGT)), LATENT_SHAPE, 0)
        z_edit, z_src, _ = dic_edit(z0, SRC, TGT, EditConfig(), model=model, schedule=sched200)
        assert mse(z_edit, mu_tgt) < mse(z_src, mu_tgt)

    def test_harmonic_policy_on_analytic_flags_inactive_branch(self, sched200):
        model = AnalyticGaussianModel(sched200, sigma0=2.5)
        z0 = synth(SRC, seed=4)
        cfg = EditConfig(policy=DistancePolicy.parse("src,0,har"))
        z_edit, _, report = dic_edit(z0, SRC, TGT, cfg, model=model, schedule=sched200)
        assert np.all(np.isfinite(z_edit))
        assert not report.harmonic_active
        assert all(s["d_har"] is None for s in report.steps)

    def test_all_table_policies_finite(self):
        sched = make_schedule(20)
        model = AnalyticGaussianModel(sched, sigma0=2.5)
        z0 = synth(SRC, seed=5)
        for text in TABLE_POLICIES:
            cfg = EditConfig(steps=20, policy=DistancePolicy.parse(text))
            z_edit, z_src, _ = dic_edit(z0, SRC, TGT, cfg, model=model, schedule=sched)
            assert np.all(np.isfinite(z_edit)) and np.all(np.isfinite(z_src))

    def test_distance_report_grows_with_guidance_mismatch(self, sched200):
        model = AnalyticGaussianModel(sched200, sigma0=2.5)
        z0 = synth(SRC, seed=6)
        peaks = []
        for omega in (1.0, 2.5, 5.0, 7.5):
            cfg = EditConfig(omega_inverse=1.0, omega_forward=omega,
                             cross_control=False, self_control=False)
            _, _, report = dic_edit(z0, SRC, SRC, cfg, model=model, schedule=sched200)
            peaks.append(report.max_distance("src"))
        assert peaks[0] < 0.01 * peaks[-1]
        assert all(peaks[i] < peaks[i + 1] for i in range(3))

    def test_rejects_empty_prompts(self, sched200):
        model = AnalyticGaussianModel(sched200, sigma0=2.5)
        with pytest.raises(ConfigError):
            dic_edit(np.zeros(LATENT_SHAPE), "", TGT, EditConfig(), model=model, schedule=sched200)

    def test_tiny_model_pinning_and_blend(self, tiny_model, sched200):
        z0 = synth(SRC, seed=7)
        cfg = EditConfig(model="tiny-unet", steps=200,
                         blend_src=("guitar",), blend_tgt=("violin",))
        z_edit, z_src, report = dic_edit(z0, SRC, TGT, cfg, model=tiny_model, schedule=sched200)
        assert report.harmonic_active and report.blend_active
        assert np.max(np.abs(z_src - z0)) < 1e-5
        assert np.all(np.isfinite(z_edit))

    def test_dual_branch_mode_runs(self, tiny_model):
        sched = make_schedule(20)
        z0 = synth(SRC, seed=8)
        cfg = EditConfig(model="tiny-unet", steps=20, harmonic=False)
        z_edit, z_src, report = dic_edit(z0, SRC, TGT, cfg, model=tiny_model, schedule=sched)
        assert not report.harmonic_active
        assert np.max(np.abs(z_src - z0)) < 1e-5


class TestBaselines:
    def test_ddim_baseline_reconstructs_at_unit_guidance(self, sched200, analytic200):
        z0 = synth(SRC, seed=9)
        out = ddim_edit_baseline(z0, SRC, SRC, 1.0, analytic200, sched200)
        assert mse(out, z0) < 1e-4

    def test_ddim_baseline_error_grows_with_guidance(self, sched200, analytic200):
        z0 = synth(SRC, seed=9)
        low = mse(ddim_edit_baseline(z0, SRC, SRC, 1.0, analytic200, sched200), z0)
        high = mse(ddim_edit_baseline(z0, SRC, SRC, 7.5, analytic200, sched200), z0)
        assert high > low

    def test_ddim_baseline_step_convergence(self):
        z0 = synth(SRC, seed=10)
        errs = {}
        for T in (10, 200):
            sched = make_matched_schedule(T)
            model = AnalyticGaussianModel(sched, sigma0=1.0)
            errs[T] = mse(ddim_edit_baseline(z0, SRC, SRC, 1.0, model, sched), z0)
        assert errs[200] < errs[10]

    def test_sdedit_vanishing_perturbation(self):
        # Shallow beta floor keeps the single added noise step below the bound.
        sched = make_schedule(200, 0.0005, 0.0195)
        model = AnalyticGaussianModel(sched, sigma0=2.5)
        z0 = synth(SRC, seed=11)
        out = sdedit_baseline(z0, SRC, 1.0 / 200, 1.0, model, sched, seed=0)
        assert mse(out, z0) < 1e-3

    def test_sdedit_full_restart_forgets_input(self, sched200):
        model = AnalyticGaussianModel(sched200, sigma0=2.5)
        z0 = synth(SRC, seed=12)

        def corr(a, b):
            return float(np.corrcoef(a.ravel(), b.ravel())[0, 1])

        full = sdedit_baseline(z0, TGT, 1.0, 5.0, model, sched200, seed=0)
        shallow = sdedit_baseline(z0, TGT, 0.2, 5.0, model, sched200, seed=0)
        assert corr(full, z0) < corr(shallow, z0)

    def test_sdedit_seed_reproducible(self, sched200):
        model = AnalyticGaussianModel(sched200, sigma0=2.5)
        z0 = synth(SRC, seed=13)
        a = sdedit_baseline(z0, TGT, 0.75, 5.0, model, sched200, seed=42)
        b = sdedit_baseline(z0, TGT, 0.75, 5.0, model, sched200, seed=42)
        c = sdedit_baseline(z0, TGT, 0.75, 5.0, model, sched200, seed=43)
        assert np.array_equal(a, b)
        assert np.any(a != c)

    def test_sdedit_rejects_bad_start(self, sched200):
        model = AnalyticGaussianModel(sched200, sigma0=2.5)
        with pytest.raises(ConfigError):
            sdedit_baseline(np.zeros(LATENT_SHAPE), TGT, 0.0, 5.0, model, sched200, seed=0)
