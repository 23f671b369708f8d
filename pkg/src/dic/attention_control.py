"""Attention control: map refinement, local blends, mutual self-attention,
their schedules, and the harmonically coupled three-branch control step.

Timestep conventions: denoising counts t down from T to 1. Cross-attention
refinement is gated on the timestep value (active while t >= tau_c, i.e.
early denoising); mutual self-attention is gated on the number of completed
iterations (active once T - t >= self_start) and on the block index
(active for layers >= self_layer).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, CapabilityError, ConfigError
from .denoiser import Alignment, AttentionRecord, InjectionPlan, PromptEmbedding
from .numerics import as_tensor

Triple = tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class BlendWords:
    """Blend-word token indices plus their binarization thresholds."""

    w_src: tuple[str, ...]
    w_tgt: tuple[str, ...]
    k_src: float
    k_tgt: float
    src_token_indices: tuple[int, ...]
    tgt_token_indices: tuple[int, ...]

    @classmethod
    def resolve(cls, w_src, w_tgt, k_src: float, k_tgt: float,
                src_prompt: PromptEmbedding, tgt_prompt: PromptEmbedding) -> "BlendWords":
        """Look the words up in their prompts; every word must hit at least one token."""
        for k, name in ((k_src, "k_src"), (k_tgt, "k_tgt")):
            if not (0.0 < k < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {k}")

        def indices(words, prompt: PromptEmbedding, side: str) -> tuple[int, ...]:
            out: list[int] = []
            for word in words:
                hits = [i for i, tok in enumerate(prompt.tokens) if tok == word.lower()]
                if not hits:
                    raise ConfigError(f"blend word {word!r} not found in the {side} prompt")
                out.extend(hits)
            return tuple(sorted(set(out)))

        w_src, w_tgt = tuple(w_src), tuple(w_tgt)
        if not w_src or not w_tgt:
            raise ConfigError("blend word sets must be non-empty on both sides")
        return cls(w_src=w_src, w_tgt=w_tgt, k_src=k_src, k_tgt=k_tgt,
                   src_token_indices=indices(w_src, src_prompt, "source"),
                   tgt_token_indices=indices(w_tgt, tgt_prompt, "target"))


@dataclass(frozen=True)
class ControlSchedule:
    """When cross and self control act: timestep cutoff, iteration start, layer floor."""

    tau_c: int
    self_start: int
    self_layer: int
    total_steps: int

    def __post_init__(self):
        if not (0 <= self.tau_c <= self.total_steps + 1):
            raise ConfigError(f"tau_c {self.tau_c} outside 0..{self.total_steps + 1}")
        if not (0 <= self.self_start <= self.total_steps + 1):
            raise ConfigError(f"self_start {self.self_start} outside 0..{self.total_steps + 1}")
        if self.self_layer < 0:
            raise ConfigError(f"self_layer must be >= 0, got {self.self_layer}")


def refine(m_src: np.ndarray, m_tgt: np.ndarray, alignment: Alignment) -> np.ndarray:
    """Swap aligned target columns for their source counterparts, then re-normalize rows.

    Column j of the output is the target map's own column where alignment[j]
    is None and the source map's column alignment[j] otherwise.
    """
    m_src, m_tgt = as_tensor(m_src), as_tensor(m_tgt)
    if m_src.shape[0] != m_tgt.shape[0]:
        raise AlignmentError(f"row counts differ: {m_src.shape[0]} vs {m_tgt.shape[0]}")
    if len(alignment) != m_tgt.shape[1]:
        raise AlignmentError(
            f"alignment length {len(alignment)} != target prompt length {m_tgt.shape[1]}"
        )
    out = np.empty_like(m_tgt)
    for j in range(m_tgt.shape[1]):
        src_j = alignment[j]
        if src_j is None:
            out[:, j] = m_tgt[:, j]
        else:
            if not (0 <= src_j < m_src.shape[1]):
                raise AlignmentError(f"alignment[{j}] = {src_j} outside source prompt length {m_src.shape[1]}")
            out[:, j] = m_src[:, src_j]
    # Softmax maps are strictly positive; a zero row can only appear from
    # underflowed inputs, where uniform is the neutral fallback.
    sums = out.sum(axis=1, keepdims=True)
    uniform = np.full_like(out, 1.0 / out.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(sums > 0.0, out / np.where(sums > 0.0, sums, 1.0), uniform)


def threshold_mask(m: np.ndarray, word_token_indices, k: float) -> np.ndarray:
    """Binary mask over latent positions: mean attention to the words >= k."""
    m = as_tensor(m)
    idx = tuple(word_token_indices)
    if not idx:
        raise ConfigError("threshold_mask needs at least one token index")
    for i in idx:
        if not (0 <= i < m.shape[1]):
            raise ConfigError(f"token index {i} outside map columns 0..{m.shape[1] - 1}")
    avg = m[:, list(idx)].mean(axis=1)
    return (avg >= k).astype(np.float64)


def _broadcast_mask(mask: np.ndarray, z: np.ndarray) -> np.ndarray:
    if mask.shape[0] != z.shape[-1]:
        raise ConfigError(f"mask covers {mask.shape[0]} positions, latent has {z.shape[-1]} frames")
    return mask.reshape((1,) * (z.ndim - 1) + (-1,))


def local_edit(z_src: np.ndarray, z_tgt: np.ndarray, m_src: np.ndarray, m_tgt: np.ndarray,
               blend: BlendWords) -> np.ndarray:
    """Blend the two latents with masks cut from their cross-attention maps.

    Positions the target words attend to (and the source words do not) come
    from the target latent; everything else comes from the source.
    """
    z_src, z_tgt = as_tensor(z_src), as_tensor(z_tgt)
    if z_src.shape != z_tgt.shape:
        raise ConfigError(f"latent shapes differ: {z_src.shape} vs {z_tgt.shape}")
    mask_tgt = _broadcast_mask(threshold_mask(m_tgt, blend.tgt_token_indices, blend.k_tgt), z_tgt)
    mask_src = _broadcast_mask(threshold_mask(m_src, blend.src_token_indices, blend.k_src), z_src)
    return (1.0 - mask_tgt + mask_src) * z_src + (mask_tgt - mask_src) * z_tgt


def cross_control_active(t: int, control: ControlSchedule) -> bool:
    return t >= control.tau_c


def cross_edit(m_har: np.ndarray, m_tgt: np.ndarray, t: int, alignment: Alignment,
               control: ControlSchedule) -> np.ndarray:
    """Refined target map while t >= tau_c, the plain target map afterwards."""
    if cross_control_active(t, control):
        return refine(m_har, m_tgt, alignment)
    return as_tensor(m_tgt)


def self_control_active(steps_elapsed: int, layer: int, control: ControlSchedule) -> bool:
    return steps_elapsed >= control.self_start and layer >= control.self_layer


def self_edit(src_triple: Triple, tgt_triple: Triple, steps_elapsed: int, layer: int,
              control: ControlSchedule, literal: bool = False) -> Triple:
    """Choose the self-attention triple for the harmonized branch.

    Default rule: once control is active, steer the source's keys/values with
    the target's query {Q_tgt, K_src, V_src}; before that, leave the target
    triple untouched. The ``literal`` variant instead returns the full source
    triple when active and {Q_tgt, K_src, V_src} otherwise.
    """
    q_s, k_s, v_s = src_triple
    q_t, k_t, v_t = tgt_triple
    for a, b in zip(src_triple, tgt_triple):
        if np.shape(a) != np.shape(b):
            raise ConfigError(f"triple shapes differ: {np.shape(a)} vs {np.shape(b)}")
    active = self_control_active(steps_elapsed, layer, control)
    if literal:
        return (q_s, k_s, v_s) if active else (q_t, k_s, v_s)
    return (q_t, k_s, v_s) if active else (q_t, k_t, v_t)


@dataclass(frozen=True, eq=False)
class HacStepResult:
    """Noise estimates and effective cross maps from one harmonized control step."""

    eps_src: np.ndarray
    eps_tgt: np.ndarray
    eps_har: np.ndarray
    m_src: np.ndarray
    m_tgt_hat: np.ndarray
    rec_src: AttentionRecord
    rec_tgt: AttentionRecord
    rec_har: AttentionRecord


def hac_step(z_src: np.ndarray, z_tgt: np.ndarray, z_har: np.ndarray, t: int,
             c_src: PromptEmbedding, c_tgt: PromptEmbedding, model, control: ControlSchedule,
             alignment: Alignment, *, literal: bool = False, cross_enabled: bool = True,
             self_enabled: bool = True) -> HacStepResult:
    """One harmonized attention-control step over the three branches.

    1. Plain predictions on the source and target branches capture their
       self-attention triples and cross maps.
    2. The harmonized self-attention triple, built per layer from those
       records, is injected into the harmonic branch's prediction (layers
       where self control is inactive keep their own attention, so an
       all-off schedule leaves every branch a plain prediction).
    3. The harmonic branch's cross maps refine the target's maps, and the
       target is re-predicted under the refined-map injection.
    """
    if not getattr(model, "supports_attention", False):
        raise CapabilityError("attention control requires an attention model")

    eps_src, rec_src = model.predict_attention(z_src, t, c_src)
    eps_tgt_plain, rec_tgt = model.predict_attention(z_tgt, t, c_tgt)

    steps_elapsed = control.total_steps - t
    har_plan = InjectionPlan()
    for l in range(model.n_layers):
        if literal and self_enabled:
            har_plan.self_qkv[l] = self_edit(rec_src.self_triple(l), rec_tgt.self_triple(l),
                                             steps_elapsed, l, control, literal=True)
        elif self_enabled and self_control_active(steps_elapsed, l, control):
            har_plan.self_qkv[l] = self_edit(rec_src.self_triple(l), rec_tgt.self_triple(l),
                                             steps_elapsed, l, control)
    eps_har, rec_har = model.predict_attention(z_har, t, c_src, har_plan)

    refine_now = cross_enabled and cross_control_active(t, control)
    if refine_now:
        tgt_plan = InjectionPlan()
        for l in range(model.n_layers):
            tgt_plan.cross_maps[l] = cross_edit(rec_har.cross_map(l), rec_tgt.cross_map(l),
                                                t, alignment, control)
        eps_tgt, rec_tgt_hat = model.predict_attention(z_tgt, t, c_tgt, tgt_plan)
    else:
        eps_tgt, rec_tgt_hat = eps_tgt_plain, rec_tgt

    return HacStepResult(
        eps_src=eps_src, eps_tgt=eps_tgt, eps_har=eps_har,
        m_src=rec_src.mean_cross_map(), m_tgt_hat=rec_tgt_hat.mean_cross_map(),
        rec_src=rec_src, rec_tgt=rec_tgt_hat, rec_har=rec_har,
    )
