"""Desk-scale preservation and fidelity measurements.

The structural measure compares the self-similarity geometry of two latents:
each latent becomes a Gram matrix of cosine similarities between its frame
vectors, and the score is the mean squared difference of the two Grams,
reported x1000. Cosine against a zero frame counts as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import prompt_mean, tokenize
from .errors import DimensionError
from .numerics import as_tensor


@dataclass
class MetricRow:
    """One scored (entry, method) pair."""

    entry_id: str
    editing_type_id: int
    method: str
    structure_distance_e3: float
    mse: float
    edit_fidelity_proxy: float

    def as_dict(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "editing_type_id": self.editing_type_id,
            "method": self.method,
            "structure_distance_e3": self.structure_distance_e3,
            "mse": self.mse,
            "edit_fidelity_proxy": self.edit_fidelity_proxy,
        }


def _frame_matrix(a: np.ndarray) -> np.ndarray:
    # Frame vectors are the last-axis positions; leading axes fold into features.
    a = as_tensor(a)
    return a.reshape(-1, a.shape[-1]).T


def _cosine_gram(frames: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(frames, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = np.where(norms > 0.0, frames / safe, 0.0)
    return unit @ unit.T


def structure_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared Gram-matrix difference between two latents, x1000."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"structure_distance needs equal shapes, got {a.shape} vs {b.shape}")
    g_a = _cosine_gram(_frame_matrix(a))
    g_b = _cosine_gram(_frame_matrix(b))
    return float(np.mean((g_a - g_b) ** 2) * 1e3)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse needs equal shapes, got {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def edit_fidelity_proxy(z: np.ndarray, prompt: str, analytic_model) -> float:
    """Negative distance from z to the prompt's analytic mean, per sqrt(dim).

    Higher is more faithful; a latent sitting exactly on the mean scores 0.
    """
    z = as_tensor(z)
    mu = prompt_mean(tuple(tokenize(prompt)), z.shape, analytic_model.model_seed)
    return float(-np.linalg.norm(z - mu) / np.sqrt(z.size))
