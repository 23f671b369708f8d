"""Acceptance suite: one test per release criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines; every tolerance is pinned here and nowhere else.
"""

from __future__ import annotations

import json
import time

import numpy as np

from dic.attention_control import (
    BlendWords,
    ControlSchedule,
    hac_step,
    local_edit,
    refine,
    threshold_mask,
)
from dic.bench import parse_manifest, serialize_manifest
from dic.cli import main
from dic.config import EditConfig
from dic.denoiser import (
    LATENT_SHAPE,
    AnalyticGaussianModel,
    InjectionPlan,
    TinyAttentionModel,
    align,
    encode_prompt,
    prompt_mean,
    tokenize,
)
from dic.inversion import DistancePolicy, TABLE_POLICIES, ddim_generate, dic_edit, invert, sdedit_baseline
from dic.metrics import mse
from dic.numerics import SeededRng, derive_seed, softmax_rows
from dic.schedule import (
    ddim_forward_step,
    ddim_inversion_step,
    make_matched_schedule,
    make_schedule,
)

SRC = "ambient acoustic guitar music"
TGT = "ambient acoustic violin music"


def report(criterion: int, text: str) -> None:
    print(f"[PASS] criterion {criterion:2d}: {text}")


def synth_input(seed: int, noise: float = 0.5) -> np.ndarray:
    mu = prompt_mean(tuple(tokenize(SRC)), LATENT_SHAPE, 0)
    return mu + noise * SeededRng(derive_seed("acceptance-input", seed)).normal(LATENT_SHAPE)


def test_criterion_01_algebraic_inversion_identity(sched200):
    rng = SeededRng(1)
    started = time.perf_counter()
    worst = 0.0
    for trial in range(1000):
        t = 1 + (trial % sched200.T)
        z = rng.normal((4, 4))
        eps = rng.normal((4, 4))
        back = ddim_inversion_step(ddim_forward_step(z, eps, t, sched200), eps, t, sched200)
        worst = max(worst, float(np.max(np.abs(back - z))))
    elapsed = time.perf_counter() - started
    assert worst < 1e-12
    assert elapsed < 1.0
    report(1, f"inversion o forward identity, 1000 triples, max dev {worst:.2e}, {elapsed:.2f} s")


def test_criterion_02_source_branch_pinning(sched200, tiny_model):
    started = time.perf_counter()
    z0 = synth_input(2)
    worst = 0.0
    analytic = AnalyticGaussianModel(sched200, sigma0=2.5)
    for model in (analytic, tiny_model):
        for omega in (1.0, 2.5, 5.0, 7.5):
            cfg = EditConfig(omega_forward=omega,
                             model="tiny-unet" if model is tiny_model else "analytic")
            _, z_src, _ = dic_edit(z0, SRC, TGT, cfg, model=model, schedule=sched200)
            worst = max(worst, float(np.max(np.abs(z_src - z0))))
    elapsed = time.perf_counter() - started
    assert worst < 1e-5
    assert elapsed < 60.0
    report(2, f"source branch pinned over omega grid x both models, max err {worst:.2e}, {elapsed:.1f} s")


def test_criterion_03_error_accumulation_trend(sched200):
    model = AnalyticGaussianModel(sched200, sigma0=2.5)
    z0 = synth_input(3)
    errors = []
    for omega_inv in (1.0, 2.5, 5.0, 7.5):
        traj = invert(z0, SRC, omega_inv, model, sched200)
        errors.append(mse(ddim_generate(traj.z_star(200), SRC, 1.0, model, sched200), z0))
    assert all(errors[i] <= errors[i + 1] + 1e-9 for i in range(3))
    report(3, "plain reconstruction MSE non-decreasing in inverse guidance: "
              + " -> ".join(f"{e:.3e}" for e in errors))


def test_criterion_04_step_convergence():
    z0 = SeededRng(derive_seed("acceptance-uncond", 4)).normal(LATENT_SHAPE)
    errs = {}
    for T in (10, 200):
        sched = make_matched_schedule(T)
        model = AnalyticGaussianModel(sched, sigma0=2.5)
        traj = invert(z0, "", 1.0, model, sched)
        errs[T] = mse(ddim_generate(traj.z_star(T), "", 1.0, model, sched), z0)
    assert errs[200] * 10.0 <= errs[10]
    report(4, f"unconditional recon MSE: T=10 {errs[10]:.3e} vs T=200 {errs[200]:.3e} "
              f"({errs[10] / errs[200]:.0f}x)")


def test_criterion_05_attention_control_algebra(tiny_model):
    tol = 1e-9
    # refine: total identity and all-None cases
    c_ab = encode_prompt("a b c", 0)
    m = softmax_rows(SeededRng(5).normal((6, 3)))
    assert np.max(np.abs(refine(m, m, align(c_ab, c_ab)) - m)) < tol
    disjoint = align(encode_prompt("p q r", 0), encode_prompt("x y z", 0))
    m2 = softmax_rows(SeededRng(6).normal((6, 3)))
    assert np.max(np.abs(refine(m, m2, disjoint) - m2)) < tol

    # binary masks
    mask = threshold_mask(softmax_rows(SeededRng(7).normal((8, 3))), (0, 2), 0.3)
    assert set(np.unique(mask)) <= {0.0, 1.0}

    # local_edit boundary identities
    rng = SeededRng(8)
    z_src, z_tgt = rng.normal((1, 4, 6)), rng.normal((1, 4, 6))
    blend = BlendWords(w_src=("w",), w_tgt=("w",), k_src=0.5, k_tgt=0.5,
                       src_token_indices=(0,), tgt_token_indices=(0,))
    m_equal = rng.normal((6, 1))
    assert np.max(np.abs(local_edit(z_src, z_tgt, m_equal, m_equal, blend) - z_src)) < tol
    ones, zeros = np.ones((6, 1)), np.zeros((6, 1))
    assert np.max(np.abs(local_edit(z_src, z_tgt, zeros, ones, blend) - z_tgt)) < tol

    # hac_step no-op schedule equals plain predictions
    c_src, c_tgt = encode_prompt(SRC, 0), encode_prompt(TGT, 0)
    alignment = align(c_src, c_tgt)
    off = ControlSchedule(tau_c=201, self_start=201, self_layer=0, total_steps=200)
    zs = [SeededRng(9 + i).normal(LATENT_SHAPE) for i in range(3)]
    out = hac_step(zs[0], zs[1], zs[2], 100, c_src, c_tgt, tiny_model, off, alignment)
    assert np.max(np.abs(out.eps_tgt - tiny_model.predict(zs[1], 100, c_tgt))) < tol
    assert np.max(np.abs(out.eps_src - tiny_model.predict(zs[0], 100, c_src))) < tol
    assert np.max(np.abs(out.eps_har - tiny_model.predict(zs[2], 100, c_src))) < tol

    # self-injection identity
    eps_plain, rec = tiny_model.predict_attention(zs[0], 42, c_src)
    plan = InjectionPlan(
        cross_maps={l: rec.cross_map(l) for l in range(tiny_model.n_layers)},
        self_qkv={l: rec.self_triple(l) for l in range(tiny_model.n_layers)},
    )
    eps_inj, _ = tiny_model.predict_attention(zs[0], 42, c_src, plan)
    assert np.max(np.abs(eps_inj - eps_plain)) < tol

    report(5, "refine/mask/local-edit/no-op-schedule/self-injection identities all within 1e-9")


def test_criterion_06_full_preservation_identity(sched200, tiny_model):
    z0 = synth_input(6)
    worst = 0.0
    analytic = AnalyticGaussianModel(sched200, sigma0=2.5)
    for model, name in ((analytic, "analytic"), (tiny_model, "tiny-unet")):
        cfg = EditConfig(model=name, omega_forward=5.0,
                         policy=DistancePolicy("src", "tgt", "har"),
                         cross_control=False, self_control=False)
        z_tgt, _, _ = dic_edit(z0, SRC, SRC, cfg, model=model, schedule=sched200)
        worst = max(worst, float(np.max(np.abs(z_tgt - z0))))
    assert worst < 1e-5
    report(6, f"matched prompts + all-branch correction reproduce the input, max err {worst:.2e}")


def test_criterion_07_analytic_edit_direction(sched200):
    model = AnalyticGaussianModel(sched200, sigma0=2.5)
    mu_tgt = prompt_mean(tuple(tokenize(TGT)), LATENT_SHAPE, 0)
    cfg = EditConfig()
    closer_than_input = 0
    closer_than_sdedit = 0
    for seed in range(10):
        z0 = synth_input(seed)
        z_edit, _, _ = dic_edit(z0, SRC, TGT, cfg, model=model, schedule=sched200)
        z_sd = sdedit_baseline(z0, TGT, cfg.sdedit_start, cfg.omega_forward,
                               model, sched200, seed=seed)
        closer_than_input += mse(z_edit, mu_tgt) < mse(z0, mu_tgt)
        closer_than_sdedit += mse(z_edit, mu_tgt) < mse(z_sd, mu_tgt)
    assert closer_than_input == 10
    assert closer_than_sdedit >= 8
    report(7, f"edits closer to the target mean than input {closer_than_input}/10 "
              f"and than sdedit {closer_than_sdedit}/10")


def test_criterion_08_ablation_harness_shape(tmp_path):
    out = tmp_path / "ablate"
    code = main(["ablate", "--policies", "--guidance-grid", "--steps", "20",
                 "--out-dir", str(out), "--no-figures"])
    assert code == 0
    policies = json.loads((out / "policies.json").read_text())
    grid = json.loads((out / "guidance_grid.json").read_text())
    assert [row["policy"] for row in policies] == list(TABLE_POLICIES)
    assert len(grid) == 16
    assert {(r["omega_inverse"], r["omega_forward"]) for r in grid} == {
        (i, f) for i in (1.0, 2.5, 5.0, 7.5) for f in (1.0, 2.5, 5.0, 7.5)
    }
    for row in policies + grid:
        for key, value in row.items():
            if isinstance(value, float):
                assert np.isfinite(value), (row, key)
    report(8, "six-policy table and 16-cell guidance grid finite and correctly shaped")


def test_criterion_09_manifest_fidelity():
    sample = """
    {
        "000000000000": {
            "editing_prompt": "a live recording of ambient acoustic [violin] music",
            "original_prompt": "a live recording of ambient acoustic [guitar] music",
            "blended_word": "(\\"guitar\\", \\"violin\\")",
            "emphasize": "(\\"violin\\")",
            "audio_path": "wavs/MusicCaps_-4SYC2YgzL8.wav",
            "editing_type_id": "0",
            "editing_instruction": "change the instrument from guitar to violin"
        }
    }
    """
    manifest = parse_manifest(sample)
    entry = manifest.entries["000000000000"]
    assert entry.original_prompt == "a live recording of ambient acoustic [guitar] music"
    assert entry.editing_prompt == "a live recording of ambient acoustic [violin] music"
    assert entry.blended_word == ("guitar", "violin")
    assert entry.emphasize == ("violin",)
    assert entry.editing_type_id == 0
    assert entry.audio_path == "wavs/MusicCaps_-4SYC2YgzL8.wav"
    assert entry.editing_instruction == "change the instrument from guitar to violin"

    canonical = serialize_manifest(manifest)
    assert parse_manifest(canonical) == manifest
    assert serialize_manifest(parse_manifest(canonical)).encode() == canonical.encode()
    report(9, "sample entry parses field-exactly; serialization round-trips byte-stably")


def test_criterion_10_command_determinism(tmp_path):
    out = tmp_path / "edit"
    args = ["edit", "--src-prompt", SRC, "--tgt-prompt", TGT, "--synthesize",
            "--steps", "40", "--seed", "11", "--out-dir", str(out)]
    assert main(args) == 0
    first = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert main(args) == 0
    second = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert first == second

    manifest_path = tmp_path / "m.json"
    manifest_path.write_text(json.dumps({
        "000000000000": {
            "editing_prompt": "calm [violin] piece",
            "original_prompt": "calm [guitar] piece",
            "blended_word": '("guitar", "violin")',
            "emphasize": '("violin")',
            "audio_path": "wavs/a.wav",
            "editing_type_id": "0",
            "editing_instruction": "swap instrument",
        }
    }))
    bench_out = tmp_path / "bench"
    bench_args = ["bench", "--manifest", str(manifest_path), "--methods", "dic,sdedit",
                  "--synthesize-latents", "--steps", "25", "--seed", "11",
                  "--out-dir", str(bench_out), "--no-figures"]
    assert main(bench_args) == 0
    first_csv = (bench_out / "report.csv").read_bytes()
    assert main(bench_args) == 0
    assert (bench_out / "report.csv").read_bytes() == first_csv
    report(10, "edit and bench runs repeat byte-identically (DICL, JSON, CSV, PNG)")


def test_criterion_11_budget(sched200, tiny_model):
    z0 = synth_input(11)
    started = time.perf_counter()
    cfg = EditConfig(model="tiny-unet")
    z_edit, _, _ = dic_edit(z0, SRC, TGT, cfg, model=tiny_model, schedule=sched200)
    elapsed = time.perf_counter() - started
    assert np.all(np.isfinite(z_edit))
    assert elapsed < 10.0
    report(11, f"one T=200 attention-model edit in {elapsed:.2f} s (< 10 s)")
