"""Feature ingestion: the VPF binary container and the synthetic generator.

VPF layout (all integers little-endian u32, all floats little-endian f32):
bytes 0-3 magic "VPFT"; 4-7 version (=1); 8-11 record count; 12-15 channel
count D; then per record: T, label, clip_id byte length, clip_id UTF-8,
and T*D floats row-major (time-major). Floats are f32 on disk and widened
to float64 in memory; synthetic data is quantized through f32 at creation
so a generate -> write -> read cycle is bit-exact.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    CorruptionError,
    DataInconsistencyError,
    FormatError,
)
from .rng import stream

MAGIC = b"VPFT"
VERSION = 1


@dataclass
class FeatureSequence:
    """One clip: frames [T, D] (float64), an integer label, and an id."""

    frames: np.ndarray
    label: int
    clip_id: str

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise DataInconsistencyError(
                f"clip {self.clip_id!r}: frames must be [T, D], got shape {self.frames.shape}"
            )
        if not np.all(np.isfinite(self.frames)):
            raise DataInconsistencyError(f"clip {self.clip_id!r}: non-finite feature values")
        if self.label < 0:
            raise DataInconsistencyError(f"clip {self.clip_id!r}: negative label {self.label}")


@dataclass
class Dataset:
    clips: list = field(default_factory=list)
    num_classes: int = 0
    dim: int = 0

    def __post_init__(self):
        for clip in self.clips:
            if clip.frames.shape[1] != self.dim:
                raise DataInconsistencyError(
                    f"clip {clip.clip_id!r} has D={clip.frames.shape[1]}, dataset D={self.dim}"
                )
            if clip.label >= self.num_classes:
                raise DataInconsistencyError(
                    f"clip {clip.clip_id!r} label {clip.label} >= num_classes {self.num_classes}"
                )

    def __len__(self) -> int:
        return len(self.clips)

    def __getitem__(self, i: int) -> FeatureSequence:
        return self.clips[i]


def write_vpf(ds: Dataset, path: str):
    """Serialize ``ds`` atomically (temp file + rename in the target dir)."""
    parts = [struct.pack("<4sIII", MAGIC, VERSION, len(ds.clips), ds.dim)]
    for clip in ds.clips:
        cid = clip.clip_id.encode("utf-8")
        t = clip.frames.shape[0]
        parts.append(struct.pack("<III", t, clip.label, len(cid)))
        parts.append(cid)
        parts.append(clip.frames.astype("<f4").tobytes(order="C"))
    blob = b"".join(parts)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".vpf.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_vpf(path: str) -> Dataset:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: missing or wrong magic (expected {MAGIC!r})")
    if len(blob) < 16:
        raise CorruptionError(f"{path}: truncated header", offset=len(blob))
    version, count, dim = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} (expected {VERSION})")
    pos = 16
    clips = []
    max_label = -1
    for rec in range(count):
        if len(blob) - pos < 12:
            raise CorruptionError(f"{path}: truncated header of record {rec}", offset=pos)
        t, label, cid_len = struct.unpack_from("<III", blob, pos)
        pos += 12
        if len(blob) - pos < cid_len:
            raise CorruptionError(f"{path}: truncated clip_id of record {rec}", offset=pos)
        try:
            clip_id = blob[pos : pos + cid_len].decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptionError(f"{path}: invalid UTF-8 clip_id of record {rec}", offset=pos) from e
        pos += cid_len
        need = 4 * t * dim
        if len(blob) - pos < need:
            raise CorruptionError(f"{path}: truncated features of record {rec}", offset=pos)
        frames = (
            np.frombuffer(blob, dtype="<f4", count=t * dim, offset=pos)
            .reshape(t, dim)
            .astype(np.float64)
        )
        pos += need
        clips.append(FeatureSequence(frames=frames, label=int(label), clip_id=clip_id))
        max_label = max(max_label, int(label))
    if pos != len(blob):
        raise CorruptionError(f"{path}: {len(blob) - pos} trailing bytes", offset=pos)
    return Dataset(clips=clips, num_classes=max_label + 1, dim=dim)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic class-balanced synthetic dataset.

    Class c decomposes into a content index a = c // M and a motion index
    m = c %% M (M = number of motion frequencies). Content writes the unit
    vector e_a on channels [0, A); motion writes a sinusoid of frequency
    motion_frequencies[m] cycles-per-clip, with a per-clip random phase, on
    channel A + m. Gaussian noise covers every channel. A single frame
    cannot reveal m (the phase is random), so labels need temporal context.
    """

    num_classes: int = 8
    clips_per_class: int = 32
    frames: int = 32
    dim: int = 64
    content_axis_count: int = 4
    motion_frequencies: tuple = (2, 5)
    noise_sigma: float = 0.1
    seed: int = 0

    def validate(self):
        m = len(self.motion_frequencies)
        if self.num_classes < 1 or self.clips_per_class < 1:
            raise ConfigError("num_classes and clips_per_class must be positive")
        if self.frames < 1 or self.dim < 1:
            raise ConfigError("frames and dim must be positive")
        if len(set(self.motion_frequencies)) != m or m < 1:
            raise ConfigError("motion_frequencies must be non-empty and distinct")
        if self.content_axis_count * m < self.num_classes:
            raise ConfigError(
                f"content_axis_count * motion frequencies = {self.content_axis_count * m} "
                f"cannot cover {self.num_classes} classes"
            )
        if self.dim < self.content_axis_count + m:
            raise ConfigError(
                f"dim={self.dim} too small for {self.content_axis_count} content + {m} motion channels"
            )
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    spec.validate()
    a_count = spec.content_axis_count
    m_count = len(spec.motion_frequencies)
    t_axis = np.arange(spec.frames, dtype=np.float64)
    clips = []
    for c in range(spec.num_classes):
        a, m = divmod(c, m_count)
        freq = float(spec.motion_frequencies[m])
        for k in range(spec.clips_per_class):
            rng = stream(spec.seed, "synthetic", c, k)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            frames = rng.normal(0.0, spec.noise_sigma, size=(spec.frames, spec.dim))
            frames[:, a] += 1.0
            frames[:, a_count + m] += np.sin(
                2.0 * math.pi * freq * t_axis / spec.frames + phase
            )
            # Quantize through the on-disk precision so a write/read
            # round-trip reproduces this dataset exactly.
            frames = frames.astype(np.float32).astype(np.float64)
            clip_id = (
                f"a{a}.m{m}.k{k:03d}|content:0-{a_count - 1}"
                f"|motion:{a_count}-{a_count + m_count - 1}"
            )
            clips.append(FeatureSequence(frames=frames, label=c, clip_id=clip_id))
    return Dataset(clips=clips, num_classes=spec.num_classes, dim=spec.dim)
