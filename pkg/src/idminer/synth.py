"""Synthetic portrait-behaviour corpus.

Each identity owns a bank of per-AU oscillators (its habitual facial action
dynamics) and an appearance channel (per-AU offset and gain). A genuine video
is::

    frames[t] = baseline + gain * (coupling @ oscillators(t)) + offset

Deepfakes keep the driving trajectory, swap in the target's offset/gain and
add an artifact channel (fixed pattern, white noise, temporal warp). Surrogate
functions are attribute-space analogs of resize, JPEG, video compression and
Gaussian blur.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import data as D
from .errors import ConfigError, UsageError, DomainError
from .numcore import make_rng

FAU_DECIMALS = 4

SURROGATE_KINDS = ("resize_analog", "jpeg_analog", "vc_analog", "blur_analog")
KIND_ALIASES = {
    "resize": "resize_analog", "jpeg": "jpeg_analog", "vc": "vc_analog",
    "video_compression": "vc_analog", "blur": "blur_analog", "gaussian_blur": "blur_analog",
}
RESIZE_FACTORS = (1, 2, 2, 3, 4, 5)
QUANT_STEPS = (0.0, 0.1, 0.2, 0.4, 0.8, 1.2)
VC_BLOCKS = (1, 2, 3, 4, 6, 8)
VC_QUANT_STEPS = (0.0, 0.05, 0.1, 0.2, 0.4, 0.6)
BLUR_SIGMAS = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0)
MAX_LEVEL = 5


def canonical(x: np.ndarray) -> np.ndarray:
    """Round to the fixed FAU precision; idempotent, so CSV round-trips are exact."""
    return np.round(x, FAU_DECIMALS) + 0.0


# -- configuration ---------------------------------------------------------------------------


@dataclass
class PopulationConfig:
    n_identities: int = 24
    videos_per_identity: int = 20
    frames: int = 128
    fau_dim: int = 17
    oscillators: int = 2
    freq_range: tuple[float, float] = (0.02, 0.25)
    amp_range: tuple[float, float] = (0.3, 1.0)
    phase_jitter_range: tuple[float, float] = (0.0, 0.05)
    coupling: float = 0.3
    baseline_range: tuple[float, float] = (1.2, 1.6)
    offset_scale: float = 0.5
    gain_range: tuple[float, float] = (0.9, 1.11)

    def validate(self):
        if self.oscillators < 1:
            raise ConfigError("population.oscillators must be >= 1")
        if self.fau_dim < 1:
            raise ConfigError("population.fau_dim must be >= 1")
        if self.frames < 1:
            raise ConfigError("population.frames must be >= 1")
        lo, hi = self.amp_range
        if hi <= 0 or lo < 0 or lo > hi:
            raise ConfigError(f"population.amp_range {self.amp_range} is degenerate")
        lo, hi = self.freq_range
        if not (0 < lo <= hi <= 0.5):
            raise ConfigError(f"population.freq_range {self.freq_range} must lie in (0, 0.5]")
        lo, hi = self.gain_range
        if not (0 < lo <= hi):
            raise ConfigError(f"population.gain_range {self.gain_range} must be positive")
        if not (0 <= self.coupling < 1):
            raise ConfigError("population.coupling must be in [0, 1)")
        lo, hi = self.phase_jitter_range
        if lo < 0 or lo > hi:
            raise ConfigError("population.phase_jitter_range is invalid")


@dataclass
class ArtifactConfig:
    algorithm_id: str = "fomm_analog"
    pattern_scale: float = 0.3
    noise_scale: float = 0.1
    temporal_jitter: float = 0.05
    forgeries_per_video: int = 1


@dataclass
class SurrogateConfig:
    kinds: tuple[str, ...] = SURROGATE_KINDS
    levels: tuple[int, ...] = ()
    apply_to: str = "test"


@dataclass
class SplitConfig:
    test_identities: int = 8


@dataclass
class GenerationConfig:
    population: PopulationConfig = field(default_factory=PopulationConfig)
    artifact: ArtifactConfig = field(default_factory=ArtifactConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    split: SplitConfig = field(default_factory=SplitConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


_SECTIONS = {"population": PopulationConfig, "artifact": ArtifactConfig,
             "surrogate": SurrogateConfig, "split": SplitConfig}


def _coerce(raw: str, current, key: str):
    raw = raw.strip()
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if key == "kinds":
            if items == ["all"]:
                return SURROGATE_KINDS
            return tuple(normalize_kind(s) for s in items)
        if key == "levels":
            return tuple(int(s) for s in items)
        return tuple(float(s) for s in items)
    return raw


def parse_config(text: str) -> GenerationConfig:
    """Parse the INI-style generation config; every section must be present."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    parts = {}
    for name, cls in _SECTIONS.items():
        if not cp.has_section(name):
            raise ConfigError(f"config lacks section [{name}]")
        obj = cls()
        for key, raw in cp.items(name):
            if not hasattr(obj, key):
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            try:
                setattr(obj, key, _coerce(raw, getattr(obj, key), key))
            except ValueError as exc:
                raise ConfigError(f"[{name}] {key}: {exc}") from None
        parts[name] = obj
    cfg = GenerationConfig(**parts)
    cfg.population.validate()
    return cfg


def load_config(path: str | Path) -> GenerationConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: GenerationConfig) -> str:
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for key, val in dataclasses.asdict(getattr(cfg, name)).items():
            if isinstance(val, (tuple, list)):
                val = ", ".join(str(v) for v in val)
            lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)


# -- identities and artifacts ----------------------------------------------------------------


@dataclass(eq=False)
class IdentityProfile:
    identity: str
    freqs: np.ndarray          # (D, K) cycles per frame
    amps: np.ndarray           # (D, K)
    phase_jitter: np.ndarray   # (D, K) random-walk std per frame, radians
    coupling: np.ndarray       # (D, D) symmetric PSD
    baseline: np.ndarray       # (D,)
    offset: np.ndarray         # (D,) appearance
    gain: np.ndarray           # (D,) appearance, > 0

    def __post_init__(self):
        if np.any(self.gain <= 0):
            raise ConfigError(f"{self.identity}: appearance gains must be positive")
        try:
            np.linalg.cholesky(self.coupling)
        except np.linalg.LinAlgError:
            raise ConfigError(f"{self.identity}: coupling matrix is not positive definite") from None

    @property
    def fau_dim(self) -> int:
        return self.baseline.shape[0]

    def same_as(self, other: "IdentityProfile") -> bool:
        return self.identity == other.identity and all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name))
            for f in dataclasses.fields(self) if f.name != "identity")


def sample_identity(rng: np.random.Generator, config: PopulationConfig, identity: str = "id") -> IdentityProfile:
    config.validate()
    d, k = config.fau_dim, config.oscillators
    freqs = rng.uniform(*config.freq_range, size=(d, k))
    amps = rng.uniform(*config.amp_range, size=(d, k)) / np.sqrt(k)
    jitter = rng.uniform(*config.phase_jitter_range, size=(d, k))
    g = rng.standard_normal((d, d))
    coupling = (1.0 - config.coupling) * np.eye(d) + config.coupling * (g @ g.T) / d
    baseline = rng.uniform(*config.baseline_range, size=d)
    offset = config.offset_scale * rng.standard_normal(d)
    lo, hi = config.gain_range
    gain = np.exp(rng.uniform(np.log(lo), np.log(hi), size=d))
    return IdentityProfile(identity, freqs, amps, jitter, coupling, baseline, offset, gain)


@dataclass(frozen=True, eq=False)
class ArtifactSignature:
    algorithm_id: str
    pattern: np.ndarray
    noise_scale: float = 0.0
    temporal_jitter: float = 0.0

    def __post_init__(self):
        if self.noise_scale < 0 or self.temporal_jitter < 0:
            raise ConfigError("artifact scales must be non-negative")

    @classmethod
    def from_seed(cls, algorithm_id: str, seed: int, fau_dim: int, pattern_scale: float,
                  noise_scale: float, temporal_jitter: float) -> "ArtifactSignature":
        rng = make_rng(seed, "artifact", algorithm_id)
        return cls(algorithm_id, pattern_scale * rng.standard_normal(fau_dim), noise_scale, temporal_jitter)

    @classmethod
    def null(cls, fau_dim: int, algorithm_id: str = "null") -> "ArtifactSignature":
        return cls(algorithm_id, np.zeros(fau_dim), 0.0, 0.0)


def action_trajectory(profile: IdentityProfile, length: int, rng: np.random.Generator) -> np.ndarray:
    """Coupled oscillator sum, shape ``(T, D)``; phases are fresh per call."""
    if length < 1:
        raise ConfigError("video length must be >= 1")
    d, k = profile.freqs.shape
    phase0 = rng.uniform(0.0, 2 * np.pi, size=(d, k))
    walk = np.cumsum(rng.standard_normal((length, d, k)) * profile.phase_jitter, axis=0)
    t = np.arange(length, dtype=np.float64)[:, None, None]
    raw = np.sum(profile.amps * np.sin(2 * np.pi * profile.freqs * t + phase0 + walk), axis=2)
    return raw @ profile.coupling.T


def generate_genuine(profile: IdentityProfile, length: int, rng: np.random.Generator,
                     video_id: str | None = None) -> D.VideoRecord:
    actions = action_trajectory(profile, length, rng)
    frames = canonical(profile.baseline + profile.gain * actions + profile.offset)
    vid = video_id or f"gen-{profile.identity}"
    return D.VideoRecord(vid, profile.identity, profile.identity, profile.identity, D.PROV_GENUINE, frames)


def _time_warp(frames: np.ndarray, jitter: float, rng: np.random.Generator) -> np.ndarray:
    n = frames.shape[0]
    steps = np.clip(1.0 + jitter * rng.standard_normal(n), 0.25, 1.75)
    times = np.concatenate([[0.0], np.cumsum(steps[:-1])])
    times = times[times <= n - 1]
    i0 = np.floor(times).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = (times - i0)[:, None]
    return frames[i0] * (1.0 - frac) + frames[i1] * frac


def apply_deepfake(driving: D.VideoRecord, target: IdentityProfile, sig: ArtifactSignature,
                   rng: np.random.Generator, *, source: IdentityProfile,
                   video_id: str | None = None) -> D.VideoRecord:
    """Re-render ``driving`` with ``target``'s appearance and add the artifact channel.

    ``source`` is the driving subject's profile, needed to peel its appearance off
    the frames. Producing the driving subject's own face yields a reconstructed
    (self-deepfake) record, anything else a forgery.
    """
    if driving.provenance != D.PROV_GENUINE:
        raise UsageError(f"{driving.video_id}: deepfakes are driven by genuine videos only")
    if source.identity != driving.subject:
        raise UsageError(f"source profile {source.identity} does not match driving subject {driving.subject}")
    actions = (driving.frames - source.baseline - source.offset) / source.gain
    frames = source.baseline + target.gain * actions + target.offset
    if sig.temporal_jitter > 0:
        frames = _time_warp(frames, sig.temporal_jitter, rng)
    noise = rng.standard_normal(frames.shape)
    frames = canonical(frames + sig.pattern + sig.noise_scale * noise)
    if target.identity == driving.subject:
        prov, default_id = D.PROV_RECONSTRUCTED, f"recon-{driving.video_id}"
    else:
        prov, default_id = D.PROV_FORGED, f"forg-{driving.video_id}-{target.identity}"
    return D.VideoRecord(video_id or default_id, driving.subject, target.identity, driving.puppeteer,
                         prov, frames, artifact=sig.algorithm_id)


def apply_whitehat(driving: D.VideoRecord, sig: ArtifactSignature, rng: np.random.Generator, *,
                   profile: IdentityProfile, video_id: str | None = None) -> D.VideoRecord:
    """Self-deepfake: same subject as both driver and portrait."""
    return apply_deepfake(driving, profile, sig, rng, source=profile, video_id=video_id)


# -- surrogates ------------------------------------------------------------------------------


def normalize_kind(kind: str) -> str:
    kind = KIND_ALIASES.get(kind, kind)
    if kind not in SURROGATE_KINDS:
        raise DomainError(f"unknown surrogate kind {kind!r}")
    return kind


@dataclass(frozen=True)
class SurrogateSpec:
    kind: str
    level: int

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        if not (isinstance(self.level, (int, np.integer)) and 0 <= self.level <= MAX_LEVEL):
            raise DomainError(f"surrogate level must be an integer in [0, {MAX_LEVEL}], got {self.level!r}")

    @property
    def tag(self) -> str:
        return f"{self.kind}-L{self.level}"


def _quantize(x: np.ndarray, step: float) -> np.ndarray:
    return x if step == 0 else step * np.rint(x / step)


def _resize(x: np.ndarray, factor: int) -> np.ndarray:
    n = x.shape[0]
    if factor == 1 or n == 1:
        return x
    nb = -(-n // factor)
    pad = nb * factor - n
    xp = np.concatenate([x, np.repeat(x[-1:], pad, axis=0)]) if pad else x
    coarse = xp.reshape(nb, factor, -1).mean(axis=1)
    centers = np.minimum(np.arange(nb) * factor + (factor - 1) / 2.0, n - 1)
    t = np.arange(n, dtype=np.float64)
    return np.stack([np.interp(t, centers, coarse[:, j]) for j in range(x.shape[1])], axis=1)


def _block_average(x: np.ndarray, block: int) -> np.ndarray:
    if block == 1:
        return x
    out = np.empty_like(x)
    for s in range(0, x.shape[0], block):
        out[s:s + block] = x[s:s + block].mean(axis=0)
    return out


def surrogate_frames(frames: np.ndarray, spec: SurrogateSpec) -> np.ndarray:
    if spec.level == 0:
        return frames.copy()
    if spec.kind == "resize_analog":
        out = _resize(frames, RESIZE_FACTORS[spec.level])
    elif spec.kind == "jpeg_analog":
        out = _quantize(frames, QUANT_STEPS[spec.level])
    elif spec.kind == "vc_analog":
        out = _quantize(_block_average(frames, VC_BLOCKS[spec.level]), VC_QUANT_STEPS[spec.level])
    else:
        out = gaussian_filter1d(frames, BLUR_SIGMAS[spec.level], axis=0, mode="nearest")
    return canonical(out)


def apply_surrogate(record: D.VideoRecord, spec: SurrogateSpec, rng: np.random.Generator | None = None,
                    video_id: str | None = None) -> D.VideoRecord:
    """Identity labels are kept; provenance wraps the base provenance. The analogs are deterministic."""
    return D.VideoRecord(video_id or f"{record.video_id}~{spec.tag}", record.subject, record.appearance,
                         record.puppeteer, D.surrogate_provenance(record.provenance, spec.kind, spec.level),
                         surrogate_frames(record.frames, spec), record.artifact)


# -- dataset build ---------------------------------------------------------------------------


@dataclass
class SyntheticCorpus:
    manifest: D.DatasetManifest
    records: dict[str, D.VideoRecord]
    profiles: dict[str, IdentityProfile]
    signature: ArtifactSignature

    def dataset(self) -> D.Dataset:
        return D.Dataset(self.manifest, records=self.records)


def build_rddp_dataset(config: GenerationConfig, seed: int, out_dir: str | Path | None = None) -> SyntheticCorpus:
    """Materialise genuine, forged, reconstructed and (optionally) surrogate sets.

    Every record draws from its own stream ``make_rng(seed, "video", video_id)``
    so the output does not depend on generation order.
    """
    pop, art, spl = config.population, config.artifact, config.split
    pop.validate()
    n = pop.n_identities
    if n < 2:
        raise ConfigError("population.n_identities must be >= 2")
    if not (0 <= spl.test_identities <= n):
        raise ConfigError("split.test_identities out of range")
    if spl.test_identities == 1 or n - spl.test_identities == 1:
        raise ConfigError("each nonempty split needs >= 2 identities to form forgeries")
    if pop.videos_per_identity < 1 or art.forgeries_per_video < 0:
        raise ConfigError("videos_per_identity must be >= 1 and forgeries_per_video >= 0")

    labels = [f"id{i:03d}" for i in range(n)]
    order = make_rng(seed, "split").permutation(n)
    test = sorted(labels[i] for i in order[: spl.test_identities])
    train = sorted(set(labels) - set(test))
    groups = [g for g in (train, test) if g]

    profiles = {s: sample_identity(make_rng(seed, "identity", s), pop, s) for s in labels}
    sig = ArtifactSignature.from_seed(art.algorithm_id, seed, pop.fau_dim, art.pattern_scale,
                                      art.noise_scale, art.temporal_jitter)
    records: dict[str, D.VideoRecord] = {}
    driving: dict[str, str] = {}
    for group in groups:
        for s in group:
            others = [x for x in group if x != s]
            for j in range(pop.videos_per_identity):
                gid = f"gen-{s}-v{j:02d}"
                g = generate_genuine(profiles[s], pop.frames, make_rng(seed, "video", gid), gid)
                records[gid] = g
                rid = f"recon-{s}-v{j:02d}"
                records[rid] = apply_whitehat(g, sig, make_rng(seed, "video", rid), profile=profiles[s], video_id=rid)
                driving[rid] = gid
                for f in range(art.forgeries_per_video):
                    pick = make_rng(seed, "target", gid, f)
                    x = others[int(pick.integers(len(others)))]
                    fid = f"forg-{s}-v{j:02d}-f{f}-{x}"
                    records[fid] = apply_deepfake(g, profiles[x], sig, make_rng(seed, "video", fid),
                                                  source=profiles[s], video_id=fid)
                    driving[fid] = gid

    sur = config.surrogate
    if sur.levels:
        scope = test if sur.apply_to == "test" else labels
        base = [r for r in records.values() if r.puppeteer in scope and r.provenance.tag in (D.GENUINE, D.FORGED)]
        for kind in sur.kinds:
            for level in sur.levels:
                spec = SurrogateSpec(kind, level)
                for r in base:
                    sr = apply_surrogate(r, spec)
                    records[sr.video_id] = sr
                    if r.video_id in driving:
                        driving[sr.video_id] = driving[r.video_id]

    ordered = sorted(records)
    schema = list(D.FAU_COLUMNS[: pop.fau_dim]) if pop.fau_dim <= len(D.FAU_COLUMNS) else \
        [f"AU{i:02d}_r" for i in range(1, pop.fau_dim + 1)]
    entries = [records[k].entry(f"fau/{k}.csv") for k in ordered]
    metadata = {
        "generator": "synth/1",
        "seed": int(seed),
        "config_digest": config.digest(),
        "config": config.to_dict(),
        "driving": {k: driving[k] for k in sorted(driving)},
        "schema": schema,
    }
    manifest = D.DatasetManifest(entries, pop.fau_dim, {"train": train, "test": test}, metadata)
    corpus = SyntheticCorpus(manifest, {k: records[k] for k in ordered}, profiles, sig)
    if out_dir is not None:
        write_corpus(corpus, out_dir)
    return corpus


def atomic_write(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def write_corpus(corpus: SyntheticCorpus, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    schema = corpus.manifest.metadata["schema"]
    for e in corpus.manifest.records:
        atomic_write(out / e.path, D.write_fau_csv(corpus.records[e.video_id].frames, schema))
    path = out / "manifest.json"
    atomic_write(path, D.save_manifest(corpus.manifest))
    return path
