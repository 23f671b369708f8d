"""Command-line frontend: editing, inversion, benchmarking, ablations and demos.

Every table lands as CSV plus JSON under --out-dir, with a rendered PNG
figure next to it unless --no-figures is given. Identical seeds yield
byte-identical output files.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bench import METHODS, parse_manifest, run_bench, serialize_manifest, synthesize_latent
from .config import MODEL_CHOICES, EditConfig, build_config, parse_config_file
from .denoiser import AnalyticGaussianModel
from .errors import (
    AlignmentError,
    CapabilityError,
    ConfigError,
    DiclError,
    DimensionError,
    InjectionError,
    ManifestError,
    NumericError,
    StepError,
)
from .inversion import (
    TABLE_POLICIES,
    DistancePolicy,
    ddim_generate,
    dic_edit,
    invert,
)
from .metrics import edit_fidelity_proxy, mse, structure_distance
from .numerics import derive_seed, read_dicl, write_dicl
from .reports import (
    plot_error_accumulation,
    plot_guidance_grid,
    plot_policy_table,
    plot_step_distances,
    plot_type_spider,
    write_csv,
    write_json,
)
from .schedule import make_matched_schedule

DEMO_SRC_PROMPT = "ambient acoustic guitar music"
DEMO_TGT_PROMPT = "ambient acoustic violin music"
GUIDANCE_GRID = (1.0, 2.5, 5.0, 7.5)
DEMO_STEP_GRID = (10, 50, 200)

_USAGE_ERRORS = (ConfigError, DimensionError, StepError, AlignmentError,
                 InjectionError, CapabilityError)
_RUNTIME_ERRORS = (ManifestError, DiclError, OSError)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("schedule")
    g.add_argument("--steps", type=int, help="diffusion step count T (default 200)")
    g.add_argument("--beta-start", type=float, help="first beta of the linear schedule (default 0.0015)")
    g.add_argument("--beta-end", type=float, help="last beta of the linear schedule (default 0.0195)")

    g = p.add_argument_group("model")
    g.add_argument("--model", choices=MODEL_CHOICES, help="denoiser backend (default analytic)")
    g.add_argument("--model-seed", type=int, help="seed for model weights and prompt patterns (default 0)")
    g.add_argument("--layers", type=int, help="attention blocks in the tiny model (default 4)")
    g.add_argument("--sigma0", type=float, help="prior width of the analytic model (default 2.5)")

    g = p.add_argument_group("guidance and correction")
    g.add_argument("--inv-guidance", dest="omega_inverse", type=float,
                   help="guidance scale during inversion (default 1)")
    g.add_argument("--guidance", dest="omega_forward", type=float,
                   help="guidance scale during editing passes (default 5)")
    g.add_argument("--policy", help="distance policy: 'src' or a triple like src,0,har")
    g.add_argument("--sdedit-start", type=float, help="noising depth fraction for sdedit (default 0.75)")

    g = p.add_argument_group("attention control")
    g.add_argument("--tau-c", dest="tau_c", type=int,
                   help="cross-attention refinement applies while t >= tau_c (default 0.6*T)")
    g.add_argument("--self-start", dest="self_start", type=int,
                   help="mutual self-attention starts after this many iterations (default 0.2*T)")
    g.add_argument("--self-layer", dest="self_layer", type=int,
                   help="mutual self-attention applies to layers >= this index (default layers/2)")
    g.add_argument("--k-src", dest="k_src", type=float, help="source blend threshold (default 0.3)")
    g.add_argument("--k-tgt", dest="k_tgt", type=float, help="target blend threshold (default 0.3)")
    g.add_argument("--self-edit-literal", dest="self_edit_literal", action="store_const", const=True,
                   help="use the always-injecting variant of the self-attention rule")
    g.add_argument("--no-cross-control", dest="cross_control", action="store_const", const=False,
                   help="disable cross-attention refinement")
    g.add_argument("--no-self-control", dest="self_control", action="store_const", const=False,
                   help="disable mutual self-attention")
    g.add_argument("--no-harmonic", dest="harmonic", action="store_const", const=False,
                   help="drop the harmonic branch (controls act on the target directly)")

    g = p.add_argument_group("run")
    g.add_argument("--seed", type=int, help="master seed (falls back to env DIC_SEED, then 0)")
    g.add_argument("--config", type=Path, help="flat key = value config file (defaults < file < flags)")
    g.add_argument("--out-dir", dest="out_dir", type=Path, help="output directory (default out)")
    g.add_argument("--no-figures", dest="figures", action="store_const", const=False,
                   help="skip rendering PNG figures next to the reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dic",
        description="Text-conditioned diffusion inversion and editing on toy denoisers.",
    )
    parser.add_argument("--version", action="version", version=f"dic {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("edit", help="invert a source latent and apply a prompt edit")
    p.add_argument("--src-prompt", required=True, help="prompt describing the input")
    p.add_argument("--tgt-prompt", required=True, help="prompt describing the desired output")
    p.add_argument("--input", type=Path, help="input latent (DICL file)")
    p.add_argument("--synthesize", action="store_true", help="derive the input latent from the seed")
    p.add_argument("--blend-src", help="comma-separated source blend words")
    p.add_argument("--blend-tgt", help="comma-separated target blend words")
    _add_common_flags(p)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("invert", help="record the inversion trajectory of a latent")
    p.add_argument("--prompt", required=True, help="conditioning prompt")
    p.add_argument("--input", type=Path, help="input latent (DICL file)")
    p.add_argument("--synthesize", action="store_true", help="derive the input latent from the seed")
    _add_common_flags(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("reconstruct", help="invert then regenerate under the same prompt")
    p.add_argument("--prompt", required=True, help="conditioning prompt")
    p.add_argument("--input", type=Path, help="input latent (DICL file)")
    p.add_argument("--synthesize", action="store_true", help="derive the input latent from the seed")
    _add_common_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("bench", help="run editing methods over a benchmark manifest")
    p.add_argument("--manifest", type=Path, required=True, help="benchmark manifest JSON")
    p.add_argument("--methods", default="dic,ddim,sdedit",
                   help=f"comma-separated methods from {', '.join(METHODS)}")
    p.add_argument("--synthesize-latents", action="store_true",
                   help="derive per-entry latents from hashed entry ids")
    p.add_argument("--from-wav", action="store_true",
                   help="fold mono 16-bit PCM WAV inputs into toy latents")
    _add_common_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="run the distance-policy table and/or the guidance grid")
    p.add_argument("--policies", action="store_true", help="run all six distance policies")
    p.add_argument("--guidance-grid", action="store_true", help="run the 4x4 guidance-scale grid")
    p.add_argument("--src-prompt", default=DEMO_SRC_PROMPT)
    p.add_argument("--tgt-prompt", default=DEMO_TGT_PROMPT)
    p.add_argument("--input", type=Path, help="input latent (DICL file)")
    _add_common_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("demo-error-accumulation",
                       help="reconstruction error of plain inversion vs the corrected source branch")
    p.add_argument("--prompt", default=DEMO_SRC_PROMPT)
    _add_common_flags(p)
    p.set_defaults(func=cmd_demo)

    return parser


_CONFIG_FLAGS = ("steps", "beta_start", "beta_end", "model", "model_seed", "layers", "sigma0",
                 "omega_inverse", "omega_forward", "policy", "sdedit_start", "tau_c",
                 "self_start", "self_layer", "k_src", "k_tgt", "self_edit_literal",
                 "cross_control", "self_control", "harmonic", "seed", "out_dir", "figures")


def _config_from_args(args: argparse.Namespace) -> EditConfig:
    file_values = {}
    if getattr(args, "config", None):
        if not args.config.exists():
            raise ConfigError(f"config file not found: {args.config}")
        file_values = parse_config_file(args.config.read_text(encoding="utf-8"))
    flag_values = {name: getattr(args, name, None) for name in _CONFIG_FLAGS}
    for name in ("blend_src", "blend_tgt"):
        flag_values[name] = getattr(args, name, None)
    if flag_values.get("seed") is None and os.environ.get("DIC_SEED"):
        flag_values["seed"] = int(os.environ["DIC_SEED"])
    return build_config(file_values, flag_values)


def _out_dir(config: EditConfig) -> Path:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    return config.out_dir


def _input_latent(args: argparse.Namespace, config: EditConfig, shape, prompt: str) -> np.ndarray:
    if args.input is not None and args.synthesize:
        raise ConfigError("give either --input or --synthesize, not both")
    if args.input is not None:
        return read_dicl(args.input)
    if args.synthesize:
        return synthesize_latent(prompt, derive_seed("cli-input", config.seed), shape,
                                 config.model_seed)
    raise ConfigError("an input latent is required: pass --input FILE or --synthesize")


def cmd_edit(args: argparse.Namespace, config: EditConfig) -> int:
    schedule = config.build_schedule()
    model = config.build_model(schedule)
    z0 = _input_latent(args, config, model.shape, args.src_prompt)

    started = time.perf_counter()
    z_edit, z_src, report = dic_edit(z0, args.src_prompt, args.tgt_prompt, config,
                                     model=model, schedule=schedule)
    elapsed = time.perf_counter() - started

    out = _out_dir(config)
    write_dicl(out / "edited.dicl", z_edit)
    write_dicl(out / "source_recon.dicl", z_src)
    write_json(out / "report.json", {
        "source_prompt": args.src_prompt,
        "target_prompt": args.tgt_prompt,
        "policy": report.policy,
        "harmonic_active": report.harmonic_active,
        "blend_active": report.blend_active,
        "source_recon_max_abs_err": float(np.max(np.abs(z_src - z0))),
        "compute": {"timesteps": config.steps, "inversion_steps": config.steps,
                    "branches": 3 if report.harmonic_active else 2},
        "steps": report.steps,
        "config": config.to_dict(),
    })
    if config.figures:
        plot_step_distances(out / "step_distances.png", report.steps)
    print(f"edit finished in {elapsed:.2f} s; outputs in {out}")
    return 0


def cmd_invert(args: argparse.Namespace, config: EditConfig) -> int:
    schedule = config.build_schedule()
    model = config.build_model(schedule)
    z0 = _input_latent(args, config, model.shape, args.prompt)
    traj = invert(z0, args.prompt, config.omega_inverse, model, schedule)
    out = _out_dir(config)
    write_dicl(out / "inverted.dicl", traj.z_star(schedule.T))
    write_json(out / "report.json", {
        "prompt": args.prompt,
        "omega_inverse": config.omega_inverse,
        "trajectory_length": traj.T,
        "config": config.to_dict(),
    })
    print(f"inversion finished; outputs in {out}")
    return 0


def cmd_reconstruct(args: argparse.Namespace, config: EditConfig) -> int:
    schedule = config.build_schedule()
    model = config.build_model(schedule)
    z0 = _input_latent(args, config, model.shape, args.prompt)
    traj = invert(z0, args.prompt, config.omega_inverse, model, schedule)
    recon = ddim_generate(traj.z_star(schedule.T), args.prompt, config.omega_forward,
                          model, schedule)
    out = _out_dir(config)
    write_dicl(out / "reconstruction.dicl", recon)
    write_json(out / "report.json", {
        "prompt": args.prompt,
        "omega_inverse": config.omega_inverse,
        "omega_forward": config.omega_forward,
        "recon_mse": mse(recon, z0),
        "structure_distance_e3": structure_distance(recon, z0),
        "config": config.to_dict(),
    })
    print(f"reconstruction finished; outputs in {out}")
    return 0


def cmd_bench(args: argparse.Namespace, config: EditConfig) -> int:
    if not args.manifest.exists():
        raise ConfigError(f"manifest not found: {args.manifest}")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    manifest = parse_manifest(args.manifest.read_text(encoding="utf-8"))
    rows, aggregates = run_bench(manifest, methods, config,
                                 manifest_dir=args.manifest.parent,
                                 synthesize=args.synthesize_latents,
                                 from_wav=args.from_wav)
    out = _out_dir(config)
    header = ["entry_id", "editing_type_id", "method",
              "structure_distance_e3", "mse", "edit_fidelity_proxy"]
    row_dicts = [r.as_dict() for r in rows]
    write_csv(out / "report.csv", header, row_dicts)
    write_json(out / "report.json", row_dicts)
    write_csv(out / "aggregate_by_type.csv",
              ["editing_type_id", "method", "n", "structure_distance_e3", "mse",
               "edit_fidelity_proxy"], aggregates)
    (out / "manifest_canonical.json").write_text(serialize_manifest(manifest), encoding="utf-8")
    if config.figures:
        plot_type_spider(out / "bench_structure_distance.png", aggregates,
                         "structure_distance_e3", higher_better=False)
        plot_type_spider(out / "bench_edit_fidelity.png", aggregates,
                         "edit_fidelity_proxy", higher_better=True)
    print(f"bench finished: {len(rows)} rows over {len(manifest)} entries; outputs in {out}")
    return 0


def _ablate_input(args: argparse.Namespace, config: EditConfig, shape) -> np.ndarray:
    if args.input is not None:
        return read_dicl(args.input)
    return synthesize_latent(args.src_prompt, derive_seed("cli-input", config.seed), shape,
                             config.model_seed)


def cmd_ablate(args: argparse.Namespace, config: EditConfig) -> int:
    if not args.policies and not args.guidance_grid:
        raise ConfigError("pass --policies and/or --guidance-grid")
    schedule = config.build_schedule()
    model = config.build_model(schedule)
    scorer = AnalyticGaussianModel(schedule, sigma0=config.sigma0, shape=model.shape,
                                   model_seed=config.model_seed)
    z0 = _ablate_input(args, config, model.shape)
    out = _out_dir(config)

    if args.policies:
        rows = []
        for policy_text in TABLE_POLICIES:
            cfg = dataclasses.replace(config, policy=DistancePolicy.parse(policy_text))
            z_edit, z_src, _ = dic_edit(z0, args.src_prompt, args.tgt_prompt, cfg,
                                        model=model, schedule=schedule)
            rows.append({
                "policy": policy_text,
                "structure_distance_e3": structure_distance(z_edit, z0),
                "mse": mse(z_edit, z0),
                "edit_fidelity_proxy": edit_fidelity_proxy(z_edit, args.tgt_prompt, scorer),
                "source_recon_max_abs_err": float(np.max(np.abs(z_src - z0))),
            })
        header = ["policy", "structure_distance_e3", "mse", "edit_fidelity_proxy",
                  "source_recon_max_abs_err"]
        write_csv(out / "policies.csv", header, rows)
        write_json(out / "policies.json", rows)
        if config.figures:
            plot_policy_table(out / "policies.png", rows)
        print(f"policy ablation: {len(rows)} rows; outputs in {out}")

    if args.guidance_grid:
        rows = []
        for omega_inv in GUIDANCE_GRID:
            for omega_fwd in GUIDANCE_GRID:
                cfg = dataclasses.replace(config, omega_inverse=omega_inv,
                                          omega_forward=omega_fwd)
                z_edit, _, _ = dic_edit(z0, args.src_prompt, args.tgt_prompt, cfg,
                                        model=model, schedule=schedule)
                rows.append({
                    "omega_inverse": omega_inv,
                    "omega_forward": omega_fwd,
                    "structure_distance_e3": structure_distance(z_edit, z0),
                    "mse": mse(z_edit, z0),
                    "edit_fidelity_proxy": edit_fidelity_proxy(z_edit, args.tgt_prompt, scorer),
                })
        header = ["omega_inverse", "omega_forward", "structure_distance_e3", "mse",
                  "edit_fidelity_proxy"]
        write_csv(out / "guidance_grid.csv", header, rows)
        write_json(out / "guidance_grid.json", rows)
        if config.figures:
            plot_guidance_grid(out / "guidance_grid.png", rows)
        print(f"guidance grid: {len(rows)} rows; outputs in {out}")

    return 0


def cmd_demo(args: argparse.Namespace, config: EditConfig) -> int:
    """Reconstruction error of plain invert-generate vs the corrected source branch.

    The grid varies the inverse guidance and the step count at neutral
    (omega = 1) forward guidance; every step count discretizes the same
    total corruption depth.
    """
    if config.model != "analytic":
        raise ConfigError("the error-accumulation demo requires --model analytic")
    shape = (1, 16, 64)
    z0 = synthesize_latent(args.prompt, derive_seed("cli-input", config.seed), shape,
                           config.model_seed)
    rows = []
    for steps in DEMO_STEP_GRID:
        schedule = make_matched_schedule(steps, config.beta_start, config.beta_end)
        model = AnalyticGaussianModel(schedule, sigma0=config.sigma0, shape=shape,
                                      model_seed=config.model_seed)
        for omega_inv in GUIDANCE_GRID:
            traj = invert(z0, args.prompt, omega_inv, model, schedule)
            recon = ddim_generate(traj.z_star(steps), args.prompt, 1.0, model, schedule)
            rows.append({
                "omega_inverse": omega_inv,
                "steps": steps,
                "method": "ddim",
                "recon_mse": mse(recon, z0),
                "src_branch_mse": None,
            })
            cfg = dataclasses.replace(config, steps=steps, omega_inverse=omega_inv,
                                      omega_forward=1.0)
            z_edit, z_src, _ = dic_edit(z0, args.prompt, args.prompt, cfg,
                                        model=model, schedule=schedule)
            rows.append({
                "omega_inverse": omega_inv,
                "steps": steps,
                "method": "dic",
                "recon_mse": mse(z_edit, z0),
                "src_branch_mse": mse(z_src, z0),
            })
    out = _out_dir(config)
    header = ["omega_inverse", "steps", "method", "recon_mse", "src_branch_mse"]
    write_csv(out / "error_accumulation.csv", header, rows)
    write_json(out / "error_accumulation.json", rows)
    if config.figures:
        plot_error_accumulation(out / "error_accumulation.png", rows)
    print(f"error-accumulation demo: {len(rows)} rows; outputs in {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        return args.func(args, config)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 1
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
