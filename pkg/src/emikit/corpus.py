"""Synthetic trimodal corpus: aligned feature streams with a known latent
intensity trajectory, controllable corruption, annotation prompts, and the
on-disk EMIF feature format.

Each sample carries a smooth 6-dim latent trajectory z(t) in [0,1]. The
visual stream is a fixed random linear mixing of z(t), the audio stream a
differently-mixed view of z(t) together with its (faster-varying) frame
difference, and the text vector a mixing of the trajectory's temporal mean.
The regression target is the temporal mean of z, so the corpus is learnable
by construction. All generated features are quantized to float32 precision
(mirroring real encoder outputs) so the binary file round-trip is bit-exact.

EMIF file layout (little-endian):
    magic b"EMIF" | u32 version
    per sample:
        u32 id_len | id bytes (utf-8)
        u32 T | u32 D_v | u32 D_a | u32 D_s
        f32 fps_v | f32 fps_a | f32 fps_s
        6 x f32 target
        u32 corruption_len | corruption JSON bytes (0 if none)
        T*D_v f32 | T*D_a f32 | D_s f32 payloads
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataFormatError, UsageError

EMIF_MAGIC = b"EMIF"
EMIF_VERSION = 1

N_EMOTIONS = 6

# the 17 commonly coded action units
AU_NAMES = {
    1: "Inner Brow Raiser",
    2: "Outer Brow Raiser",
    4: "Brow Lowerer",
    5: "Upper Lid Raiser",
    6: "Cheek Raiser",
    7: "Lid Tightener",
    9: "Nose Wrinkler",
    10: "Upper Lip Raiser",
    12: "Lip Corner Puller",
    14: "Dimpler",
    15: "Lip Corner Depressor",
    17: "Chin Raiser",
    20: "Lip Stretcher",
    23: "Lip Tightener",
    25: "Lips Part",
    26: "Jaw Drop",
    45: "Blink",
}

EXPRESSION_CLASSES = ("Neutral", "Happy", "Sad", "Surprise", "Fear", "Disgust", "Anger", "Other")
INTENSITY_LEVELS = ("Low", "Medium", "High")

# emotion-dimension -> expression class used when deriving synthetic annotations
_CLASS_FOR_DIM = ("Happy", "Surprise", "Sad", "Fear", "Disgust", "Anger")
_AUS_FOR_CLASS = {
    "Happy": (6, 12, 25),
    "Surprise": (1, 2, 26),
    "Sad": (1, 4, 15),
    "Fear": (1, 5, 20),
    "Disgust": (9, 10, 17),
    "Anger": (4, 7, 23),
    "Neutral": (2, 45, 14),
    "Other": (14, 17, 45),
}


class BadMagicError(DataFormatError):
    pass


class VersionMismatchError(DataFormatError):
    pass


class TruncatedPayloadError(DataFormatError):
    pass


@dataclass
class FeatureSequence:
    """Time-indexed matrix of per-frame feature vectors for one modality."""

    modality: str  # visual | audio | text
    frames: np.ndarray  # (T, D) float64
    frame_rate_hz: float

    @property
    def length(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


@dataclass
class SampleBundle:
    """Aligned trimodal features plus the 6-dim intensity target in [0,1]."""

    id: str
    visual: FeatureSequence
    audio: FeatureSequence
    text: FeatureSequence
    target: np.ndarray  # (6,) in [0,1]
    corruption: Optional[dict] = None

    def validate(self):
        if self.visual.length != self.audio.length:
            raise DataFormatError(
                f"sample {self.id}: visual T={self.visual.length} != audio T={self.audio.length}")
        if self.text.length != 1:
            raise DataFormatError(f"sample {self.id}: text must have T=1")
        if self.target.shape != (N_EMOTIONS,):
            raise DataFormatError(f"sample {self.id}: target must have 6 entries")
        if np.any(self.target < 0) or np.any(self.target > 1):
            raise DataFormatError(f"sample {self.id}: target outside [0,1]")


@dataclass
class AnnotationRecord:
    """Expression class, AU codes and VA values behind a text prompt."""

    expression_class: str
    intensity_label: str
    au_codes: list  # [(au_id, au_name), ...]
    valence: float
    arousal: float
    va_stddev: float

    def validate(self):
        if self.expression_class not in EXPRESSION_CLASSES:
            raise UsageError(f"unknown expression class {self.expression_class!r}")
        if self.intensity_label not in INTENSITY_LEVELS:
            raise UsageError(f"unknown intensity label {self.intensity_label!r}")
        if not self.au_codes:
            raise UsageError("annotation must carry at least one AU code")
        if not (-1.0 <= self.valence <= 1.0) or not (-1.0 <= self.arousal <= 1.0):
            raise UsageError("valence/arousal must lie in [-1, 1]")
        if self.va_stddev < 0:
            raise UsageError("va_stddev must be non-negative")


@dataclass
class CorruptionSpec:
    """Controllable degradation of one modality of one sample."""

    modality: str  # visual | audio | text
    kind: str  # gaussian_noise | occlusion_mask | dropout_frames
    strength: float
    frame_span: Optional[tuple] = None  # half-open (start, end)

    def validate(self, seq_len):
        if self.modality not in ("visual", "audio", "text"):
            raise UsageError(f"unknown modality {self.modality!r}")
        if self.kind not in ("gaussian_noise", "occlusion_mask", "dropout_frames"):
            raise UsageError(f"unknown corruption kind {self.kind!r}")
        if not (0.0 <= self.strength <= 1.0):
            raise UsageError("corruption strength must lie in [0, 1]")
        if self.frame_span is not None:
            s, e = self.frame_span
            if not (0 <= s <= e <= seq_len):
                raise UsageError(f"frame span ({s}, {e}) outside [0, {seq_len})")


def _f32(x):
    # quantize to float32 precision, keep float64 storage
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def _latent_trajectory(rng, T):
    """Smooth per-dimension mix of 3 low-frequency sinusoids plus a DC
    offset, affine-squashed into [0,1] using the amplitude bound."""
    t = np.arange(T) / T
    z = np.empty((T, N_EMOTIONS))
    for d in range(N_EMOTIONS):
        offset = rng.uniform(-0.5, 0.5)
        amps = rng.uniform(0.2, 1.0, size=3)
        freqs = rng.uniform(0.3, 2.0, size=3)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
        wave = offset + np.sum(
            amps[:, None] * np.sin(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]),
            axis=0)
        bound = abs(offset) + amps.sum()
        z[:, d] = 0.5 + 0.5 * wave / bound
    return z


def generate_corpus(seed, n_samples, T, dims=(32, 48, 16),
                    noise=(0.05, 0.05, 0.05), frame_rate_hz=5.0):
    """Generate a deterministic corpus of aligned trimodal samples.

    dims = (D_v, D_a, D_s); noise gives the per-modality additive gaussian
    sigma applied to the mixed features. Deterministic in seed.
    """
    if n_samples < 1:
        raise UsageError("n_samples must be at least 1")
    if T < 4:
        raise UsageError("T must be at least 4")
    d_v, d_a, d_s = dims
    if d_v < 1 or d_a < 1 or d_s < 1:
        raise UsageError(f"all feature dims must be positive, got {dims}")

    rng = np.random.default_rng(seed)
    mix_v = rng.normal(size=(N_EMOTIONS, d_v))
    mix_a = rng.normal(size=(2 * N_EMOTIONS, d_a))
    mix_s = rng.normal(size=(N_EMOTIONS, d_s))
    s_v, s_a, s_s = noise

    samples = []
    for i in range(n_samples):
        z = _latent_trajectory(rng, T)
        target = np.clip(z.mean(axis=0), 0.0, 1.0)
        dz = np.diff(z, axis=0, prepend=z[:1]) * (T / 4.0)  # faster-varying view

        visual = z @ mix_v + s_v * rng.normal(size=(T, d_v))
        audio = np.concatenate([z, dz], axis=1) @ mix_a + s_a * rng.normal(size=(T, d_a))
        text = z.mean(axis=0, keepdims=True) @ mix_s + s_s * rng.normal(size=(1, d_s))

        samples.append(SampleBundle(
            id=f"s{i:05d}",
            visual=FeatureSequence("visual", _f32(visual), frame_rate_hz),
            audio=FeatureSequence("audio", _f32(audio), frame_rate_hz),
            text=FeatureSequence("text", _f32(text), 0.0),
            target=_f32(target),
        ))
    return samples


_AROUSAL_MIX = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])


def generate_annotations(samples, seed):
    """Derive one AnnotationRecord per sample from its intensity target.

    Class, intensity level, AU set and VA values are deterministic functions
    of the target, so prompts stay informative about the features; only the
    annotation-spread proxy va_stddev is drawn at random.
    """
    rng = np.random.default_rng(seed)
    records = {}
    for sample in samples:
        t = sample.target
        m = float(t.mean())
        cls = _CLASS_FOR_DIM[int(np.argmax(t))]
        if m < 0.47:
            level = "Low"
        elif m < 0.53:
            level = "Medium"
        else:
            level = "High"
        au_ids = _AUS_FOR_CLASS[cls][: 1 + INTENSITY_LEVELS.index(level)]
        valence = float(np.clip(2.0 * m - 1.0, -1.0, 1.0))
        arousal = float(np.clip(t @ _AROUSAL_MIX, -1.0, 1.0))
        records[sample.id] = AnnotationRecord(
            expression_class=cls,
            intensity_label=level,
            au_codes=[(a, AU_NAMES.get(a, "Unknown")) for a in au_ids],
            valence=valence,
            arousal=arousal,
            va_stddev=float(rng.uniform(0.0, 0.6)),
        )
    return records


def render_prompt(rec: AnnotationRecord) -> str:
    """Structured text prompt for one annotation record.

    "Happy (Intensity: High) with AU6 (Cheek Raiser) and AU12 (Lip Corner
    Puller), Valence=0.83, Arousal=0.65"
    """
    rec.validate()
    au_part = " and ".join(f"AU{i} ({name})" for i, name in rec.au_codes)
    return (f"{rec.expression_class} (Intensity: {rec.intensity_label}) with {au_part}, "
            f"Valence={rec.valence:.2f}, Arousal={rec.arousal:.2f}")


def corrupt(sample: SampleBundle, spec: CorruptionSpec, seed) -> SampleBundle:
    """Return a degraded copy of one modality; the target is unchanged."""
    seq = getattr(sample, spec.modality)
    spec.validate(seq.length)
    out = copy.deepcopy(sample)
    frames = getattr(out, spec.modality).frames
    rng = np.random.default_rng(seed)

    if spec.strength == 0.0:
        return out
    if spec.kind == "gaussian_noise":
        std = frames.std(axis=0)
        if seq.length == 1:
            std = np.full(frames.shape[1], frames.std())
        frames += rng.normal(size=frames.shape) * (spec.strength * std)
    elif spec.kind == "occlusion_mask":
        span = spec.frame_span if spec.frame_span is not None else (0, seq.length)
        frames[span[0]:span[1], :] = 0.0
    elif spec.kind == "dropout_frames":
        drop = rng.random(seq.length) < spec.strength
        frames[drop, :] = 0.0

    getattr(out, spec.modality).frames = _f32(frames)
    out.corruption = dict(sample.corruption or {})
    out.corruption[spec.modality] = {
        "kind": spec.kind,
        "strength": spec.strength,
        "frame_span": list(spec.frame_span) if spec.frame_span else None,
    }
    return out


# ---------------------------------------------------------------------------
# EMIF binary feature files

def write_features(path, samples):
    with open(path, "wb") as fh:
        fh.write(EMIF_MAGIC)
        fh.write(struct.pack("<I", EMIF_VERSION))
        for sample in samples:
            sample.validate()
            ident = sample.id.encode("utf-8")
            corr = json.dumps(sample.corruption).encode("utf-8") if sample.corruption else b""
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<IIII", sample.visual.length, sample.visual.dim,
                                 sample.audio.dim, sample.text.dim))
            fh.write(struct.pack("<fff", sample.visual.frame_rate_hz,
                                 sample.audio.frame_rate_hz, sample.text.frame_rate_hz))
            fh.write(np.asarray(sample.target, dtype="<f4").tobytes())
            fh.write(struct.pack("<I", len(corr)))
            fh.write(corr)
            for seq in (sample.visual, sample.audio, sample.text):
                fh.write(np.asarray(seq.frames, dtype="<f4").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedPayloadError(f"truncated payload while reading {what}")
    return buf


def read_features(path):
    samples = []
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMIF_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {EMIF_MAGIC!r}")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != EMIF_VERSION:
            raise VersionMismatchError(f"unsupported version {version}, expected {EMIF_VERSION}")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise TruncatedPayloadError("truncated payload while reading sample header")
            id_len = struct.unpack("<I", head)[0]
            ident = _read_exact(fh, id_len, "sample id").decode("utf-8")
            t_len, d_v, d_a, d_s = struct.unpack("<IIII", _read_exact(fh, 16, "dims"))
            fps = struct.unpack("<fff", _read_exact(fh, 12, "frame rates"))
            target = np.frombuffer(_read_exact(fh, 24, "target"), dtype="<f4").astype(np.float64)
            corr_len = struct.unpack("<I", _read_exact(fh, 4, "corruption header"))[0]
            corr = json.loads(_read_exact(fh, corr_len, "corruption")) if corr_len else None

            def read_seq(modality, rows, dim, fps_val):
                raw = _read_exact(fh, 4 * rows * dim, f"{modality} payload of {ident}")
                frames = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, dim)
                return FeatureSequence(modality, frames, fps_val)

            samples.append(SampleBundle(
                id=ident,
                visual=read_seq("visual", t_len, d_v, fps[0]),
                audio=read_seq("audio", t_len, d_a, fps[1]),
                text=read_seq("text", 1, d_s, fps[2]),
                target=target,
                corruption=corr,
            ))
    return samples


# ---------------------------------------------------------------------------
# annotation records as line-delimited JSON

def write_annotations(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for ident in sorted(records):
            rec = records[ident]
            fh.write(json.dumps({
                "id": ident,
                "class": rec.expression_class,
                "intensity": rec.intensity_label,
                "aus": [[i, name] for i, name in rec.au_codes],
                "valence": rec.valence,
                "arousal": rec.arousal,
                "va_std": rec.va_stddev,
            }) + "\n")


def read_annotations(path):
    records = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records[obj["id"]] = AnnotationRecord(
                    expression_class=obj["class"],
                    intensity_label=obj["intensity"],
                    au_codes=[(int(i), str(name)) for i, name in obj["aus"]],
                    valence=float(obj["valence"]),
                    arousal=float(obj["arousal"]),
                    va_stddev=float(obj["va_std"]),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DataFormatError(f"{path}:{line_no}: bad annotation record: {exc}") from exc
    return records
