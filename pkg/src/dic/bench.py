"""Benchmark manifest ingestion and batch evaluation across editing methods.

The manifest is a JSON object keyed by entry id; each entry carries the
source/target prompt pair, the blended-word pair, the emphasize list, an
audio path, an editing-type id in 0..9 and a human instruction (plus an
optional negative prompt). Tuple-valued fields are stored in their quoted
string encoding, e.g. ``"(\\"guitar\\", \\"violin\\")"``.
"""

from __future__ import annotations

import dataclasses
import json
import re
import warnings
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import EditConfig
from .denoiser import AnalyticGaussianModel, prompt_mean, tokenize
from .errors import ConfigError, ManifestError
from .inversion import ddim_edit_baseline, dic_edit, sdedit_baseline
from .metrics import MetricRow, edit_fidelity_proxy, mse, structure_distance
from .numerics import SeededRng, derive_seed, read_dicl

METHODS = ("dic", "ddim", "sdedit")

_REQUIRED_KEYS = ("editing_prompt", "original_prompt", "blended_word", "emphasize",
                  "audio_path", "editing_type_id", "editing_instruction")
_FIELD_ORDER = _REQUIRED_KEYS + ("neg_prompt",)
_QUOTED = re.compile(r'"([^"]*)"')


@dataclass(frozen=True)
class BenchEntry:
    entry_id: str
    editing_prompt: str
    original_prompt: str
    blended_word: tuple[str, str]
    emphasize: tuple[str, ...]
    audio_path: str
    editing_type_id: int
    editing_instruction: str
    neg_prompt: str | None = None


@dataclass
class BenchManifest:
    entries: dict[str, BenchEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def sorted_entries(self) -> list[BenchEntry]:
        return [self.entries[k] for k in sorted(self.entries)]


def _parse_phrases(value, entry_id: str, key: str) -> tuple[str, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(str(v) for v in value)
    if isinstance(value, str):
        return tuple(_QUOTED.findall(value))
    raise ManifestError(f"entry {entry_id}: {key} must be a quoted tuple string")


def _phrases_to_string(phrases: tuple[str, ...]) -> str:
    return "(" + ", ".join(f'"{p}"' for p in phrases) + ")"


def parse_manifest(text: str) -> BenchManifest:
    """Parse the benchmark JSON; errors name the offending entry and key."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object of entries")
    entries: dict[str, BenchEntry] = {}
    for entry_id, raw in doc.items():
        if not isinstance(raw, dict):
            raise ManifestError(f"entry {entry_id}: must be a JSON object")
        for key in _REQUIRED_KEYS:
            if key not in raw:
                raise ManifestError(f"entry {entry_id}: missing key {key!r}")
        unknown = set(raw) - set(_FIELD_ORDER)
        if unknown:
            warnings.warn(f"entry {entry_id}: ignoring unknown keys {sorted(unknown)}")
        try:
            type_id = int(raw["editing_type_id"])
        except (TypeError, ValueError):
            raise ManifestError(f"entry {entry_id}: editing_type_id {raw['editing_type_id']!r} "
                                "is not an integer") from None
        if not (0 <= type_id <= 9):
            raise ManifestError(f"entry {entry_id}: editing_type_id {type_id} out of range 0..9")
        for key in ("editing_prompt", "original_prompt"):
            if not str(raw[key]).strip():
                raise ManifestError(f"entry {entry_id}: {key} must be non-empty")
        blended = _parse_phrases(raw["blended_word"], entry_id, "blended_word")
        if len(blended) != 2:
            raise ManifestError(f"entry {entry_id}: blended_word must hold exactly 2 phrases, "
                                f"got {len(blended)}")
        if entry_id in entries:
            raise ManifestError(f"duplicate entry id {entry_id}")
        entry = BenchEntry(
            entry_id=entry_id,
            editing_prompt=str(raw["editing_prompt"]),
            original_prompt=str(raw["original_prompt"]),
            blended_word=(blended[0], blended[1]),
            emphasize=_parse_phrases(raw["emphasize"], entry_id, "emphasize"),
            audio_path=str(raw["audio_path"]),
            editing_type_id=type_id,
            editing_instruction=str(raw["editing_instruction"]),
            neg_prompt=str(raw["neg_prompt"]) if "neg_prompt" in raw else None,
        )
        _warn_absent_blend_words(entry)
        entries[entry_id] = entry
    return BenchManifest(entries=entries)


def _warn_absent_blend_words(entry: BenchEntry) -> None:
    pairs = ((entry.blended_word[0], entry.original_prompt, "original_prompt"),
             (entry.blended_word[1], entry.editing_prompt, "editing_prompt"))
    for phrase, prompt, name in pairs:
        tokens = set(tokenize(prompt))
        missing = [w for w in tokenize(phrase) if w not in tokens]
        if missing:
            warnings.warn(f"entry {entry.entry_id}: blended word(s) {missing} absent from {name}")


def serialize_manifest(manifest: BenchManifest) -> str:
    """Canonical text form: ids sorted lexicographically, fixed field order."""
    doc: dict[str, dict] = {}
    for entry_id in sorted(manifest.entries):
        e = manifest.entries[entry_id]
        obj = {
            "editing_prompt": e.editing_prompt,
            "original_prompt": e.original_prompt,
            "blended_word": _phrases_to_string(e.blended_word),
            "emphasize": _phrases_to_string(e.emphasize),
            "audio_path": e.audio_path,
            "editing_type_id": str(e.editing_type_id),
            "editing_instruction": e.editing_instruction,
        }
        if e.neg_prompt is not None:
            obj["neg_prompt"] = e.neg_prompt
        doc[entry_id] = obj
    return json.dumps(doc, indent=4, ensure_ascii=False) + "\n"


def synthesize_latent(prompt: str, seed: int, shape: tuple[int, ...], model_seed: int,
                      noise_scale: float = 0.5) -> np.ndarray:
    """Deterministic stand-in input: the prompt's pattern mean plus seeded noise."""
    mu = prompt_mean(tuple(tokenize(prompt)), shape, model_seed)
    rng = SeededRng(derive_seed("synth-latent", seed))
    return mu + noise_scale * rng.normal(shape)


def _mel_filterbank(n_bands: int, n_fft: int, sample_rate: int) -> np.ndarray:
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_edges = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_bands + 2)
    hz_edges = mel_to_hz(mel_edges)
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    bank = np.zeros((n_bands, bins.size))
    for b in range(n_bands):
        lo, mid, hi = hz_edges[b], hz_edges[b + 1], hz_edges[b + 2]
        up = (bins - lo) / max(mid - lo, 1e-9)
        down = (hi - bins) / max(hi - mid, 1e-9)
        bank[b] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def load_wav_latent(path: str | Path, shape: tuple[int, ...], *, window: int = 1024,
                    hop: int = 160, mel_bands: int = 64) -> np.ndarray:
    """Fold a mono 16-bit PCM WAV into the toy latent via a log-mel front end.

    Stand-in parameters: 1024-sample Hann window, hop 160, 64 mel bands
    averaged down to the latent's frequency rows, time cropped or padded to
    the latent's frame count, then standardized.
    """
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1 or wav.getsampwidth() != 2:
            raise ConfigError(f"{path}: expected mono 16-bit PCM WAV")
        rate = wav.getframerate()
        pcm = np.frombuffer(wav.readframes(wav.getnframes()), dtype="<i2")
    signal = pcm.astype(np.float64) / 32768.0
    if signal.size < window:
        signal = np.pad(signal, (0, window - signal.size))
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)
    n_frames = 1 + (signal.size - window) // hop
    spec = np.empty((mel_bands, n_frames))
    bank = _mel_filterbank(mel_bands, window, rate)
    for i in range(n_frames):
        seg = signal[i * hop:i * hop + window] * hann
        power = np.abs(np.fft.rfft(seg)) ** 2
        spec[:, i] = bank @ power
    logmel = np.log10(spec + 1e-10)

    freq_rows, frames = shape[1], shape[2]
    fold = mel_bands // freq_rows
    folded = logmel[:fold * freq_rows].reshape(freq_rows, fold, -1).mean(axis=1)
    if folded.shape[1] >= frames:
        folded = folded[:, :frames]
    else:
        pad = np.full((freq_rows, frames - folded.shape[1]), logmel.min())
        folded = np.concatenate([folded, pad], axis=1)
    centered = folded - folded.mean()
    scale = centered.std()
    if scale > 0:
        centered = centered / scale
    return centered[None]


def _entry_latent(entry: BenchEntry, config: EditConfig, manifest_dir: Path,
                  synthesize: bool, from_wav: bool, shape: tuple[int, ...]) -> np.ndarray | None:
    if synthesize:
        seed = derive_seed("bench-latent", config.seed, entry.entry_id)
        return synthesize_latent(entry.original_prompt, seed, shape, config.model_seed)
    path = manifest_dir / entry.audio_path
    if not path.exists():
        return None
    if from_wav and path.suffix.lower() == ".wav":
        return load_wav_latent(path, shape)
    return read_dicl(path)


def _entry_blend(entry: BenchEntry) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Blend words present in their prompts; absent words were warned at parse."""
    src = tuple(w for w in tokenize(entry.blended_word[0]) if w in set(tokenize(entry.original_prompt)))
    tgt = tuple(w for w in tokenize(entry.blended_word[1]) if w in set(tokenize(entry.editing_prompt)))
    if not src or not tgt:
        return (), ()
    return src, tgt


def run_bench(manifest: BenchManifest, methods: list[str], config: EditConfig, *,
              manifest_dir: str | Path = ".", synthesize: bool = False,
              from_wav: bool = False) -> tuple[list[MetricRow], list[dict]]:
    """Edit every entry with every method and score the results.

    Returns the per-(entry, method) rows sorted by (entry_id, method) and the
    per-editing-type aggregate table.
    """
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    config.validate()
    schedule = config.build_schedule()
    model = config.build_model(schedule)
    scorer = AnalyticGaussianModel(schedule, sigma0=config.sigma0, shape=model.shape,
                                   model_seed=config.model_seed)
    manifest_dir = Path(manifest_dir)

    missing = []
    latents: dict[str, np.ndarray] = {}
    for entry in manifest.sorted_entries():
        z0 = _entry_latent(entry, config, manifest_dir, synthesize, from_wav, model.shape)
        if z0 is None:
            missing.append(str(manifest_dir / entry.audio_path))
        else:
            latents[entry.entry_id] = z0
    if missing:
        raise FileNotFoundError(
            "cannot resolve audio paths (pass --synthesize-latents to derive toy latents): "
            + ", ".join(missing)
        )

    rows: list[MetricRow] = []
    for entry in manifest.sorted_entries():
        z0 = latents[entry.entry_id]
        for method in sorted(methods):
            edited = _run_method(method, entry, z0, config, model, schedule)
            rows.append(MetricRow(
                entry_id=entry.entry_id,
                editing_type_id=entry.editing_type_id,
                method=method,
                structure_distance_e3=structure_distance(edited, z0),
                mse=mse(edited, z0),
                edit_fidelity_proxy=edit_fidelity_proxy(edited, entry.editing_prompt, scorer),
            ))
    rows.sort(key=lambda r: (r.entry_id, r.method))
    return rows, aggregate_by_type(rows)


def _run_method(method: str, entry: BenchEntry, z0: np.ndarray, config: EditConfig,
                model, schedule) -> np.ndarray:
    if method == "dic":
        blend_src, blend_tgt = _entry_blend(entry)
        cfg = dataclasses.replace(config, blend_src=blend_src, blend_tgt=blend_tgt)
        edited, _, _ = dic_edit(z0, entry.original_prompt, entry.editing_prompt, cfg,
                                model=model, schedule=schedule)
        return edited
    if method == "ddim":
        return ddim_edit_baseline(z0, entry.original_prompt, entry.editing_prompt,
                                  config.omega_forward, model, schedule)
    seed = derive_seed("bench-sdedit", config.seed, entry.entry_id)
    return sdedit_baseline(z0, entry.editing_prompt, config.sdedit_start,
                           config.omega_forward, model, schedule, seed)


def aggregate_by_type(rows: list[MetricRow]) -> list[dict]:
    """Mean metrics per (editing_type_id, method) group."""
    groups: dict[tuple[int, str], list[MetricRow]] = {}
    for row in rows:
        groups.setdefault((row.editing_type_id, row.method), []).append(row)
    out = []
    for (type_id, method) in sorted(groups):
        members = groups[(type_id, method)]
        out.append({
            "editing_type_id": type_id,
            "method": method,
            "n": len(members),
            "structure_distance_e3": float(np.mean([r.structure_distance_e3 for r in members])),
            "mse": float(np.mean([r.mse for r in members])),
            "edit_fidelity_proxy": float(np.mean([r.edit_fidelity_proxy for r in members])),
        })
    return out
