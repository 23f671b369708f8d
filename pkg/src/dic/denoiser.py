"""Toy text encoder and pluggable noise-prediction models.

Both models play the role of a denoiser eps(z_t, t, c) that would normally
be trained to regress, in squared error, the standard Gaussian noise mixed
into clean data at level t. Nothing is trained here: the analytic model IS
the optimal predictor for its Gaussian data assumption, and the tiny
transformer runs on seeded random weights, which every inversion and
attention-control property holds for regardless.

Two models cover the verification needs of the editing stack:

* ``AnalyticGaussianModel``: the exact posterior-mean denoiser for a
  Gaussian data distribution N(mu_c, sigma0^2 I). Its predictions follow a
  closed form, which makes inversion and reconstruction errors measurable
  against ground truth.
* ``TinyAttentionModel``: a small seeded transformer over latent frame
  vectors with real self/cross attention, capture of per-layer Q/K/V and
  attention maps, and injection overrides for attention control.

Latents are shaped (channels=1, freq, time) and treated as ``time`` frame
vectors of width ``freq`` wherever a sequence view is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, DimensionError, InjectionError, StepError
from .numerics import SeededRng, as_tensor, assert_finite, derive_seed, softmax_rows
from .schedule import NoiseSchedule

LATENT_SHAPE = (1, 16, 64)
TEXT_DIM = 16
NULL_TOKEN = "<null>"


def tokenize(text: str) -> list[str]:
    """Whitespace-split, strip editing brackets, lowercase; drop empty leftovers."""
    tokens = []
    for raw in text.split():
        tok = raw.replace("[", "").replace("]", "").lower()
        if tok:
            tokens.append(tok)
    return tokens


@dataclass(frozen=True, eq=False)
class PromptEmbedding:
    """Tokenized prompt with one unit-norm hash vector per token."""

    tokens: tuple[str, ...]
    vectors: np.ndarray
    is_null: bool
    seed: int

    def __len__(self) -> int:
        return len(self.tokens)


def _token_vector(token: str, seed: int, dim: int) -> np.ndarray:
    rng = SeededRng(derive_seed("token-vector", seed, token))
    v = rng.normal((dim,))
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        v = np.zeros(dim)
        v[0] = 1.0
        return v
    return v / norm


def encode_prompt(text: str, seed: int, dim: int = TEXT_DIM) -> PromptEmbedding:
    """Map a prompt to token vectors; the empty prompt yields the null embedding."""
    tokens = tokenize(text)
    if not tokens:
        tokens = [NULL_TOKEN]
        is_null = True
    else:
        is_null = False
    vectors = np.stack([_token_vector(tok, seed, dim) for tok in tokens])
    return PromptEmbedding(tokens=tuple(tokens), vectors=vectors, is_null=is_null, seed=seed)


@dataclass(frozen=True)
class Alignment:
    """Per-target-token source index, or None where no source token matches."""

    mapping: tuple[int | None, ...]

    def __len__(self) -> int:
        return len(self.mapping)

    def __getitem__(self, j: int) -> int | None:
        return self.mapping[j]


def align(src: PromptEmbedding, tgt: PromptEmbedding) -> Alignment:
    """Longest-common-subsequence alignment over exact token equality.

    Ties resolve to the leftmost pairing, so repeated words match in order.
    """
    if src.is_null or tgt.is_null:
        raise AlignmentError("alignment requires two non-null prompts")
    a, b = src.tokens, tgt.tokens
    n, m = len(a), len(b)
    lcs = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                lcs[i, j] = lcs[i + 1, j + 1] + 1
            else:
                lcs[i, j] = max(lcs[i + 1, j], lcs[i, j + 1])
    mapping: list[int | None] = [None] * m
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j] and lcs[i, j] == lcs[i + 1, j + 1] + 1:
            mapping[j] = i
            i += 1
            j += 1
        elif lcs[i + 1, j] >= lcs[i, j + 1]:
            i += 1
        else:
            j += 1
    return Alignment(tuple(mapping))


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal position code for an integer timestep."""
    half = dim // 2
    freqs = np.power(10000.0, -np.arange(half) / half)
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


@dataclass(frozen=True, eq=False)
class LayerAttention:
    """Attention products actually used by one block, post any injection."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    self_map: np.ndarray
    cross_map: np.ndarray


@dataclass(frozen=True, eq=False)
class AttentionRecord:
    layers: tuple[LayerAttention, ...]

    def self_triple(self, layer: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rec = self.layers[layer]
        return rec.q, rec.k, rec.v

    def cross_map(self, layer: int) -> np.ndarray:
        return self.layers[layer].cross_map

    def mean_cross_map(self) -> np.ndarray:
        return np.mean([rec.cross_map for rec in self.layers], axis=0)


@dataclass
class InjectionPlan:
    """Optional per-layer overrides applied inside a forward pass."""

    cross_maps: dict[int, np.ndarray] = field(default_factory=dict)
    self_qkv: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.cross_maps and not self.self_qkv


def prompt_mean(tokens: tuple[str, ...] | list[str], shape: tuple[int, ...], model_seed: int) -> np.ndarray:
    """Fixed per-prompt pattern tensor; the null prompt maps to zero."""
    toks = tuple(tokens)
    if toks == (NULL_TOKEN,) or not toks:
        return np.zeros(shape)
    rng = SeededRng(derive_seed("prompt-mean", model_seed, " ".join(toks)))
    return rng.normal(shape)


class AnalyticGaussianModel:
    """Optimal denoiser for data drawn from N(mu_c, sigma0^2 I).

    With z_t = sqrt(abar_t) z_0 + sqrt(1-abar_t) e, the exact conditional
    mean of z_0 given z_t is

        E[z0 | z_t, c] = mu_c + (sqrt(abar_t) sigma0^2 /
                          (abar_t sigma0^2 + 1 - abar_t)) (z_t - sqrt(abar_t) mu_c)

    and the noise estimate is (z_t - sqrt(abar_t) E[z0|z_t,c]) / sqrt(1-abar_t).
    """

    supports_attention = False

    def __init__(self, schedule: NoiseSchedule, sigma0: float = 1.0,
                 shape: tuple[int, ...] = LATENT_SHAPE, model_seed: int = 0):
        if sigma0 <= 0.0:
            raise DimensionError(f"sigma0 must be positive, got {sigma0}")
        self.schedule = schedule
        self.sigma0 = float(sigma0)
        self.shape = tuple(shape)
        self.model_seed = int(model_seed)
        self._means: dict[tuple[str, ...], np.ndarray] = {}

    def mean_for(self, cond: PromptEmbedding) -> np.ndarray:
        key = cond.tokens
        if key not in self._means:
            self._means[key] = prompt_mean(key, self.shape, self.model_seed)
        return self._means[key]

    def predict(self, z_t: np.ndarray, t: int, cond: PromptEmbedding) -> np.ndarray:
        z_t = as_tensor(z_t)
        if z_t.shape != self.shape:
            raise DimensionError(f"latent shape {z_t.shape} != model shape {self.shape}")
        if not (1 <= t <= self.schedule.T):
            raise StepError(f"timestep {t} outside 1..{self.schedule.T}")
        ab = float(self.schedule.alpha_bar[t])
        mu = self.mean_for(cond)
        var = self.sigma0 * self.sigma0
        shrink = np.sqrt(ab) * var / (ab * var + 1.0 - ab)
        posterior_mean = mu + shrink * (z_t - np.sqrt(ab) * mu)
        eps = (z_t - np.sqrt(ab) * posterior_mean) / np.sqrt(1.0 - ab)
        return assert_finite(eps, "analytic noise estimate", step=t)


class TinyAttentionModel:
    """Seeded transformer over latent frames with attention introspection.

    Each block mixes frames pointwise (with a residual tanh unit), applies
    self-attention over the frame sequence, then cross-attention against the
    prompt token vectors. An ``InjectionPlan`` can replace a layer's
    self-attention {Q, K, V} or its cross-attention map; the replacement
    values flow into the attention product and are what the returned record
    reports. A sinusoidal timestep code is added to every frame up front.
    """

    supports_attention = True

    def __init__(self, n_layers: int = 4, model_seed: int = 0,
                 shape: tuple[int, ...] = LATENT_SHAPE, d_text: int = TEXT_DIM):
        if n_layers < 1:
            raise DimensionError(f"need at least one layer, got {n_layers}")
        if len(shape) != 3 or shape[0] != 1:
            raise DimensionError(f"latent shape must be (1, freq, time), got {shape}")
        self.n_layers = int(n_layers)
        self.model_seed = int(model_seed)
        self.shape = tuple(shape)
        self.d_text = int(d_text)
        d = shape[1]
        self._d = d
        rng = SeededRng(derive_seed("tiny-attention-weights", model_seed, n_layers, d, d_text))
        scale = 1.0 / np.sqrt(d)

        def w(rows: int, cols: int) -> np.ndarray:
            return scale * rng.normal((rows, cols))

        self.layers = []
        for _ in range(n_layers):
            layer = {
                "w_mix": w(d, d),
                "b_mix": scale * rng.normal((d,)),
                "wq": w(d, d), "wk": w(d, d), "wv": w(d, d),
                "wq_c": w(d, d), "wk_c": w(d_text, d), "wv_c": w(d_text, d),
            }
            # Fused views: one matmul per projection group, same values bitwise.
            layer["w_qkv"] = np.hstack([layer["wq"], layer["wk"], layer["wv"]])
            layer["w_kv_c"] = np.hstack([layer["wk_c"], layer["wv_c"]])
            self.layers.append(layer)
        # Damped output projection keeps free-running trajectories bounded.
        self.w_out = w(d, d) / np.sqrt(d)

    def _frames(self, z: np.ndarray) -> np.ndarray:
        z = as_tensor(z)
        if z.shape != self.shape:
            raise DimensionError(f"latent shape {z.shape} != model shape {self.shape}")
        return np.ascontiguousarray(z[0].T)

    def predict_attention(self, z_t: np.ndarray, t: int, cond: PromptEmbedding,
                          plan: InjectionPlan | None = None) -> tuple[np.ndarray, AttentionRecord]:
        if cond.vectors.shape[1] != self.d_text:
            raise DimensionError(f"prompt vector width {cond.vectors.shape[1]} != model d_text {self.d_text}")
        plan = plan or InjectionPlan()
        x = self._frames(z_t) + timestep_embedding(t, self._d)
        records = []
        # Internal products use BLAS matmul: the forward only needs to be a
        # deterministic function of (weights, inputs), not summation-order-exact.
        # Overflow warnings stay quiet; non-finite values surface as NumericError.
        with np.errstate(over="ignore", invalid="ignore"):
            return self._run_layers(x, t, cond, plan, records)

    def _run_layers(self, x, t, cond, plan, records):
        for l, layer in enumerate(self.layers):
            x = x + np.tanh(x @ layer["w_mix"] + layer["b_mix"])

            d = self._d
            qkv = x @ layer["w_qkv"]
            q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
            if l in plan.self_qkv:
                q_o, k_o, v_o = plan.self_qkv[l]
                for name, native, override in (("Q", q, q_o), ("K", k, k_o), ("V", v, v_o)):
                    if np.shape(override) != native.shape:
                        raise InjectionError(
                            f"layer {l} self-attention {name} override shape "
                            f"{np.shape(override)} != native {native.shape}"
                        )
                q, k, v = as_tensor(q_o), as_tensor(k_o), as_tensor(v_o)
            self_map = softmax_rows(q @ k.T / np.sqrt(self._d))
            x = x + self_map @ v

            kv_c = cond.vectors @ layer["w_kv_c"]
            k_c, v_c = kv_c[:, :d], kv_c[:, d:]
            cross_map = softmax_rows((x @ layer["wq_c"]) @ k_c.T / np.sqrt(self._d))
            if l in plan.cross_maps:
                override = plan.cross_maps[l]
                if np.shape(override) != cross_map.shape:
                    raise InjectionError(
                        f"layer {l} cross-attention map override shape "
                        f"{np.shape(override)} != native {cross_map.shape}"
                    )
                cross_map = as_tensor(override)
            x = x + cross_map @ v_c

            records.append(LayerAttention(q=q, k=k, v=v, self_map=self_map, cross_map=cross_map))

        eps_frames = x @ self.w_out
        eps = eps_frames.T[None]
        assert_finite(eps, "attention-model noise estimate", step=t)
        return eps, AttentionRecord(layers=tuple(records))

    def predict(self, z_t: np.ndarray, t: int, cond: PromptEmbedding) -> np.ndarray:
        eps, _ = self.predict_attention(z_t, t, cond)
        return eps


def predict_analytic(model: AnalyticGaussianModel, z_t: np.ndarray, t: int,
                     cond: PromptEmbedding) -> np.ndarray:
    return model.predict(z_t, t, cond)


def predict_attention(model: TinyAttentionModel, z_t: np.ndarray, t: int, cond: PromptEmbedding,
                      plan: InjectionPlan | None = None) -> tuple[np.ndarray, AttentionRecord]:
    return model.predict_attention(z_t, t, cond, plan)
