"""Trajectory inversion, triple-branch corrected editing, and the two baselines.

The editing loop records the inversion trajectory z*_1..z*_T of the source
latent, then denoises three branches (source, target, harmonic) from z*_T.
At every step each branch's forwarded latent may be corrected by adding one
of the step distances d_b = z*_{t-1} - forward(z_b); the default policy
corrects only the source branch, which pins it to the trajectory exactly and
leaves the target branch free to follow the target prompt.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .attention_control import (
    BlendWords,
    ControlSchedule,
    InjectionPlan,
    cross_control_active,
    cross_edit,
    hac_step,
    local_edit,
    self_control_active,
    self_edit,
)
from .denoiser import PromptEmbedding, align, encode_prompt
from .errors import ConfigError, DicError, NumericError
from .numerics import SeededRng, as_tensor, assert_finite, derive_seed
from .schedule import NoiseSchedule, add_noise, cfg_combine, ddim_forward_step, ddim_inversion_step

if TYPE_CHECKING:
    from .config import EditConfig

_SELECTORS = ("src", "tgt", "har", "none")

# The six correction assignments exercised by the policy ablation, written as
# (source, target, harmonic) branch selectors with "0" meaning no correction.
TABLE_POLICIES = (
    "src,src,0",
    "src,0,src",
    "src,tgt,0",
    "src,0,tgt",
    "src,0,har",
    "src,0,0",
)


@contextlib.contextmanager
def _step_context(t: int):
    """Attach the timestep index to numeric failures raised inside one step."""
    try:
        yield
    except NumericError as exc:
        if exc.step is None:
            raise NumericError(str(exc), step=t) from exc
        raise


@dataclass(frozen=True)
class DistancePolicy:
    """Which step distance, if any, each branch reabsorbs after forwarding."""

    src: str = "src"
    tgt: str = "none"
    har: str = "none"

    def __post_init__(self):
        for branch, sel in (("src", self.src), ("tgt", self.tgt), ("har", self.har)):
            if sel not in _SELECTORS:
                raise ConfigError(f"policy selector for {branch} must be one of {_SELECTORS}, got {sel!r}")

    @classmethod
    def parse(cls, text: str) -> "DistancePolicy":
        """Parse "src" or a comma triple like "src,0,har" ("0" = no correction)."""
        text = text.strip()
        if text == "src":
            return cls()
        parts = [p.strip().removeprefix("d_") for p in text.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"policy must be 'src' or a comma triple, got {text!r}")
        parts = ["none" if p in ("0", "none", "") else p for p in parts]
        return cls(src=parts[0], tgt=parts[1], har=parts[2])

    def canonical(self) -> str:
        return ",".join("0" if sel == "none" else sel for sel in (self.src, self.tgt, self.har))


@dataclass(frozen=True, eq=False)
class InversionTrajectory:
    """Inverted latents z*_1..z*_T plus the clean sample they started from."""

    latents: tuple[np.ndarray, ...]
    z0: np.ndarray
    prompt: str
    omega_inverse: float

    @property
    def T(self) -> int:
        return len(self.latents)

    def z_star(self, t: int) -> np.ndarray:
        """z*_t for t in 0..T, with z*_0 being the clean input."""
        if not (0 <= t <= self.T):
            raise ConfigError(f"trajectory index {t} outside 0..{self.T}")
        return self.z0 if t == 0 else self.latents[t - 1]


@dataclass
class LatentTriple:
    """The three branch latents as they stand at timestep t."""

    z_src: np.ndarray
    z_tgt: np.ndarray
    z_har: np.ndarray | None
    t: int


@dataclass
class DicReport:
    """Per-step distance norms and the effective run configuration."""

    policy: str
    omega_inverse: float
    omega_forward: float
    harmonic_active: bool
    blend_active: bool
    steps: list[dict] = field(default_factory=list)

    def max_distance(self, branch: str) -> float:
        key = f"d_{branch}"
        values = [s[key] for s in self.steps if s.get(key) is not None]
        return max(values) if values else 0.0


def invert(z_0: np.ndarray, prompt: str, omega_inverse: float, model,
           schedule: NoiseSchedule) -> InversionTrajectory:
    """Record the deterministic noising trajectory of z_0 under the prompt.

    Steps t = 1..T apply the algebraic inverse of the denoising update, with
    the guided noise estimate evaluated at the latent being lifted.
    """
    if omega_inverse < 0.0:
        raise ConfigError(f"inversion guidance must be >= 0, got {omega_inverse}")
    z = as_tensor(z_0)
    assert_finite(z, "inversion input")
    c = encode_prompt(prompt, model.model_seed)
    c_null = encode_prompt("", model.model_seed)
    latents = []
    for t in range(1, schedule.T + 1):
        with _step_context(t):
            eps = model.predict(z, t, c)
            if omega_inverse != 1.0:
                eps = cfg_combine(eps, model.predict(z, t, c_null), omega_inverse)
            z = ddim_inversion_step(z, eps, t, schedule)
            assert_finite(z, "inverted latent")
        latents.append(z)
    return InversionTrajectory(latents=tuple(latents), z0=as_tensor(z_0),
                               prompt=prompt, omega_inverse=omega_inverse)


def ddim_generate(z_t: np.ndarray, prompt: str, omega: float, model,
                  schedule: NoiseSchedule, t_start: int | None = None) -> np.ndarray:
    """Plain guided denoising from timestep t_start (default T) down to 1."""
    z = as_tensor(z_t)
    c = encode_prompt(prompt, model.model_seed)
    c_null = encode_prompt("", model.model_seed)
    start = schedule.T if t_start is None else t_start
    for t in range(start, 0, -1):
        with _step_context(t):
            eps = model.predict(z, t, c)
            if omega != 1.0:
                eps = cfg_combine(eps, model.predict(z, t, c_null), omega)
            z = ddim_forward_step(z, eps, t, schedule)
            assert_finite(z, "generated latent")
    return z


def _guided(model, z: np.ndarray, t: int, cond: PromptEmbedding, c_null: PromptEmbedding,
            omega: float, eps_cond: np.ndarray | None = None) -> np.ndarray:
    eps = model.predict(z, t, cond) if eps_cond is None else eps_cond
    if omega == 1.0:
        return eps
    return cfg_combine(eps, model.predict(z, t, c_null), omega)


def _dual_branch_step(z_src, z_tgt, t, c_src, c_tgt, model, control: ControlSchedule,
                      alignment, literal: bool, cross_enabled: bool, self_enabled: bool):
    """Attention control without the harmonic branch: source maps and triples
    act on the target forward directly."""
    eps_src, rec_src = model.predict_attention(z_src, t, c_src)
    eps_tgt, rec_tgt = model.predict_attention(z_tgt, t, c_tgt)
    steps_elapsed = control.total_steps - t
    plan = InjectionPlan()
    for l in range(model.n_layers):
        if literal and self_enabled:
            plan.self_qkv[l] = self_edit(rec_src.self_triple(l), rec_tgt.self_triple(l),
                                         steps_elapsed, l, control, literal=True)
        elif self_enabled and self_control_active(steps_elapsed, l, control):
            plan.self_qkv[l] = self_edit(rec_src.self_triple(l), rec_tgt.self_triple(l),
                                         steps_elapsed, l, control)
        if cross_enabled and cross_control_active(t, control):
            plan.cross_maps[l] = cross_edit(rec_src.cross_map(l), rec_tgt.cross_map(l),
                                            t, alignment, control)
    if not plan.is_empty():
        eps_tgt, rec_tgt = model.predict_attention(z_tgt, t, c_tgt, plan)
    return eps_src, eps_tgt, rec_src.mean_cross_map(), rec_tgt.mean_cross_map()


def dic_edit(z_0: np.ndarray, src_prompt: str, tgt_prompt: str, config: "EditConfig", *,
             model=None, schedule: NoiseSchedule | None = None
             ) -> tuple[np.ndarray, np.ndarray, DicReport]:
    """Invert under the source prompt, then run the corrected triple-branch edit.

    Returns (edited latent, source-branch reconstruction, per-step report).
    """
    config.validate()
    if not src_prompt.strip() or not tgt_prompt.strip():
        raise ConfigError("source and target prompts must be non-empty")
    schedule = schedule if schedule is not None else config.build_schedule()
    model = model if model is not None else config.build_model(schedule)
    z_0 = as_tensor(z_0)

    c_src = encode_prompt(src_prompt, model.model_seed)
    c_tgt = encode_prompt(tgt_prompt, model.model_seed)
    c_null = encode_prompt("", model.model_seed)
    attention = bool(getattr(model, "supports_attention", False))
    harmonic = attention and config.harmonic
    alignment = align(c_src, c_tgt) if attention else None
    control = config.control_schedule()
    policy = config.policy
    omega = config.omega_forward

    blend = None
    if attention and config.blend_src and config.blend_tgt:
        blend = BlendWords.resolve(config.blend_src, config.blend_tgt,
                                   config.k_src, config.k_tgt, c_src, c_tgt)

    traj = invert(z_0, src_prompt, config.omega_inverse, model, schedule)
    if traj.T != schedule.T:
        raise DicError(f"trajectory holds {traj.T} latents, schedule has {schedule.T} steps")

    start = traj.z_star(schedule.T)
    triple = LatentTriple(z_src=start, z_tgt=start, z_har=start if harmonic else None,
                          t=schedule.T)
    report = DicReport(policy=policy.canonical(), omega_inverse=config.omega_inverse,
                       omega_forward=omega, harmonic_active=harmonic,
                       blend_active=blend is not None)

    for t in range(schedule.T, 0, -1):
        m_src = m_tgt = None
        eps_har_cond = None
        with _step_context(t):
            if harmonic:
                hac = hac_step(triple.z_src, triple.z_tgt, triple.z_har, t, c_src, c_tgt,
                               model, control, alignment, literal=config.self_edit_literal,
                               cross_enabled=config.cross_control, self_enabled=config.self_control)
                eps_src_cond, eps_tgt_cond, eps_har_cond = hac.eps_src, hac.eps_tgt, hac.eps_har
                m_src, m_tgt = hac.m_src, hac.m_tgt_hat
            elif attention:
                eps_src_cond, eps_tgt_cond, m_src, m_tgt = _dual_branch_step(
                    triple.z_src, triple.z_tgt, t, c_src, c_tgt, model, control, alignment,
                    config.self_edit_literal, config.cross_control, config.self_control)
            else:
                eps_src_cond = model.predict(triple.z_src, t, c_src)
                eps_tgt_cond = model.predict(triple.z_tgt, t, c_tgt)

            eps_src = _guided(model, triple.z_src, t, c_src, c_null, omega, eps_src_cond)
            eps_tgt = _guided(model, triple.z_tgt, t, c_tgt, c_null, omega, eps_tgt_cond)
            fwd_src = ddim_forward_step(triple.z_src, eps_src, t, schedule)
            fwd_tgt = ddim_forward_step(triple.z_tgt, eps_tgt, t, schedule)
            fwd_har = None
            if harmonic:
                eps_har = _guided(model, triple.z_har, t, c_src, c_null, omega, eps_har_cond)
                fwd_har = ddim_forward_step(triple.z_har, eps_har, t, schedule)

        z_ref = traj.z_star(t - 1)
        distances = {
            "src": z_ref - fwd_src,
            "tgt": z_ref - fwd_tgt,
            "har": z_ref - fwd_har if fwd_har is not None else None,
            "none": None,
        }

        def corrected(fwd: np.ndarray, selector: str) -> np.ndarray:
            d = distances.get(selector)
            return fwd if d is None else fwd + d

        triple.z_src = corrected(fwd_src, policy.src)
        triple.z_tgt = corrected(fwd_tgt, policy.tgt)
        triple.z_har = corrected(fwd_har, policy.har) if fwd_har is not None else None
        triple.t = t - 1
        for name, z in (("src", triple.z_src), ("tgt", triple.z_tgt), ("har", triple.z_har)):
            if z is not None and not np.all(np.isfinite(z)):
                raise NumericError(f"non-finite {name} branch latent", step=t)

        if blend is not None and m_src is not None:
            triple.z_tgt = local_edit(triple.z_src, triple.z_tgt, m_src, m_tgt, blend)

        report.steps.append({
            "t": t,
            "d_src": float(np.linalg.norm(distances["src"])),
            "d_tgt": float(np.linalg.norm(distances["tgt"])),
            "d_har": float(np.linalg.norm(distances["har"])) if distances["har"] is not None else None,
            "src_dev": float(np.max(np.abs(triple.z_src - z_ref))),
        })

    return triple.z_tgt, triple.z_src, report


def ddim_edit_baseline(z_0: np.ndarray, src_prompt: str, tgt_prompt: str, omega: float,
                       model, schedule: NoiseSchedule) -> np.ndarray:
    """Uncorrected baseline: invert under the source prompt, denoise under the target."""
    traj = invert(z_0, src_prompt, omega, model, schedule)
    return ddim_generate(traj.z_star(schedule.T), tgt_prompt, omega, model, schedule)


def sdedit_baseline(z_0: np.ndarray, tgt_prompt: str, t_start: float, omega: float,
                    model, schedule: NoiseSchedule, seed: int) -> np.ndarray:
    """Noise-and-denoise baseline: perturb z_0 to a mid-trajectory level, then denoise."""
    if not (0.0 < t_start <= 1.0):
        raise ConfigError(f"t_start must lie in (0, 1], got {t_start}")
    t_s = int(np.ceil(t_start * schedule.T))
    rng = SeededRng(derive_seed("sdedit-noise", seed))
    eps = rng.normal(np.shape(as_tensor(z_0)))
    z = add_noise(z_0, eps, t_s, schedule)
    return ddim_generate(z, tgt_prompt, omega, model, schedule, t_start=t_s)
