"""Feature-space tooling: archives, synthetic corpora, F0 and MCEP transforms.

A feature archive holds per-utterance MCEP matrices, F0 tracks, and opaque
aperiodicity payloads in a little-endian 32-bit binary format (magic
"ALGF").  Round trips are byte-exact: arrays are canonicalized to
contiguous little-endian float32 on construction, so write -> read ->
write reproduces the file bit for bit.

Synthetic corpora replace recorded speech at desk scale.  Each utterance
is a sum of seeded sinusoids plus Gaussian noise with speaker-specific
offset/scale, and a lognormal F0 track with unvoiced gaps.  The draw
order per utterance is fixed and documented on synth_corpus so tests can
recompute trajectories in closed form.

F0 conversion is the log-domain Gaussian-normalized transform: voiced
frames map through exp((ln f0 - mu_src)/sigma_src * sigma_tgt + mu_tgt),
unvoiced frames stay 0.  Aperiodicities pass through untouched.  All
statistics use the population (divide-by-N) convention.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

ARCHIVE_MAGIC = b"ALGF"
ARCHIVE_VERSION = 1
MIN_FRAMES_PER_UTT = 128

_F32 = np.dtype("<f4")


def _canon_f32(a, ndim_allowed) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(a), dtype=_F32)
    if arr.ndim not in ndim_allowed:
        raise ValueError(f"array must have ndim in {ndim_allowed}, got {arr.ndim}")
    return arr


@dataclass
class Utterance:
    mcep: np.ndarray
    f0: np.ndarray
    ap: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=_F32))

    def __post_init__(self):
        self.mcep = _canon_f32(self.mcep, (2,))
        self.f0 = _canon_f32(self.f0, (1,))
        self.ap = _canon_f32(self.ap, (1, 2))
        if self.mcep.shape[1] != self.f0.shape[0]:
            raise ValueError(
                f"frame count mismatch: mcep has {self.mcep.shape[1]} frames, "
                f"f0 has {self.f0.shape[0]}"
            )
        if (self.f0 < 0).any():
            raise ValueError("f0 must be nonnegative (0 encodes unvoiced)")

    @property
    def frames(self) -> int:
        return self.mcep.shape[1]


@dataclass
class FeatureArchive:
    mcep_dim: int
    utterances: list
    version: int = ARCHIVE_VERSION

    def __post_init__(self):
        for i, utt in enumerate(self.utterances):
            if utt.mcep.shape[0] != self.mcep_dim:
                raise ValueError(
                    f"utterance {i} has {utt.mcep.shape[0]} coefficient rows, "
                    f"archive declares {self.mcep_dim}"
                )

    @property
    def total_frames(self) -> int:
        return sum(u.frames for u in self.utterances)


def write_archive(archive: FeatureArchive, path) -> int:
    """Serialize to the ALGF binary format; returns bytes written."""
    parts = [
        struct.pack(
            "<4sHHI",
            ARCHIVE_MAGIC,
            archive.version,
            archive.mcep_dim,
            len(archive.utterances),
        )
    ]
    for utt in archive.utterances:
        ap = utt.ap
        if ap.ndim == 1:
            rows, cols = 0, ap.shape[0]  # rows=0 marks a flat vector
        else:
            rows, cols = ap.shape
        parts.append(struct.pack("<III", utt.frames, rows, cols))
        parts.append(utt.mcep.tobytes())
        parts.append(utt.f0.tobytes())
        parts.append(ap.tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise ValueError(f"truncated feature archive: {self.path}")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int, shape) -> np.ndarray:
        raw = self.take(count * 4)
        return np.frombuffer(raw, dtype=_F32).reshape(shape).copy()


def read_archive(path) -> FeatureArchive:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    magic, version, mcep_dim, n_utt = r.unpack("<4sHHI")
    if magic != ARCHIVE_MAGIC:
        raise ValueError(f"not a feature archive: {path}")
    if version != ARCHIVE_VERSION:
        raise ValueError(f"unsupported feature archive version {version}")
    utterances = []
    for _ in range(n_utt):
        frames, ap_rows, ap_cols = r.unpack("<III")
        mcep = r.floats(mcep_dim * frames, (mcep_dim, frames))
        f0 = r.floats(frames, (frames,))
        if ap_rows == 0:
            ap = r.floats(ap_cols, (ap_cols,))
        else:
            ap = r.floats(ap_rows * ap_cols, (ap_rows, ap_cols))
        utterances.append(Utterance(mcep=mcep, f0=f0, ap=ap))
    if r.off != len(blob):
        raise ValueError(f"trailing bytes in feature archive: {path}")
    return FeatureArchive(mcep_dim=mcep_dim, utterances=utterances)


# -- synthetic corpora ------------------------------------------------------


@dataclass(frozen=True)
class SpeakerProfile:
    """Parameters of one synthetic voice.

    `mcep_offset` and `mcep_scale` shift/scale every coefficient dimension;
    two profiles with different offsets stand in for two speakers.  F0 is
    lognormal with the given log-domain mean and spread.
    """

    name: str = "speaker"
    mcep_offset: float = 0.0
    mcep_scale: float = 1.0
    f0_log_mu: float = math.log(150.0)
    f0_log_sigma: float = 0.15
    noise_std: float = 0.3
    voiced_fraction: float = 0.85
    n_harmonics: int = 3
    sine_amp: float = 0.5


def speaker_a_profile() -> SpeakerProfile:
    return SpeakerProfile(
        name="a", mcep_offset=-1.0, mcep_scale=1.0,
        f0_log_mu=math.log(120.0), f0_log_sigma=0.12,
    )


def speaker_b_profile() -> SpeakerProfile:
    return SpeakerProfile(
        name="b", mcep_offset=1.0, mcep_scale=1.3,
        f0_log_mu=math.log(220.0), f0_log_sigma=0.18,
    )


def synth_corpus(seed: int, n_utterances: int, frames_per_utt: int,
                 profile: SpeakerProfile, mcep_dim: int = 24) -> FeatureArchive:
    """Deterministic pseudo-speech corpus for one speaker.

    Each utterance u uses its own generator seeded with [seed, u] and draws,
    in this fixed order: harmonic amplitudes (dim x H uniform), integer
    cycle counts (dim x H in [1, 8]), phases (dim x H uniform), the noise
    field (dim x T standard normal, drawn even when noise_std is 0 so the
    stream layout never depends on the profile), the voiced mask
    (T uniforms), and the log-F0 deviations (T standard normals).  The
    coefficient matrix is

        mcep[d, t] = offset + scale * sum_h amp * sin(2 pi cycles t / T + phase)
                     + noise_std * noise

    Cycle counts are integers, so trajectories are exactly periodic over T.
    The first two frames are forced voiced so F0 statistics always exist.
    """
    if frames_per_utt < MIN_FRAMES_PER_UTT:
        raise ValueError(
            f"frames_per_utt must be >= {MIN_FRAMES_PER_UTT} "
            "(batch construction draws 128 frames)"
        )
    if n_utterances < 1:
        raise ValueError("need at least one utterance")
    t_axis = np.arange(frames_per_utt, dtype=np.float64)
    utterances = []
    for u in range(n_utterances):
        rng = np.random.default_rng([seed, u])
        h = profile.n_harmonics
        amp = rng.uniform(0.2, 1.0, (mcep_dim, h)) * profile.sine_amp
        cycles = rng.integers(1, 9, (mcep_dim, h)).astype(np.float64)
        phase = rng.uniform(0.0, 2.0 * np.pi, (mcep_dim, h))
        noise = rng.standard_normal((mcep_dim, frames_per_utt))
        voiced = rng.random(frames_per_utt) < profile.voiced_fraction
        voiced[:2] = True
        logf0_dev = rng.standard_normal(frames_per_utt)

        angles = (
            2.0 * np.pi / frames_per_utt * cycles[:, :, None] * t_axis[None, None, :]
            + phase[:, :, None]
        )
        base = (amp[:, :, None] * np.sin(angles)).sum(axis=1)
        mcep = profile.mcep_offset + profile.mcep_scale * base
        mcep = mcep + profile.noise_std * noise
        f0 = np.where(
            voiced,
            np.exp(profile.f0_log_mu + profile.f0_log_sigma * logf0_dev),
            0.0,
        )
        ap = 0.9 + 0.1 * rng.random((1, frames_per_utt))
        utterances.append(Utterance(mcep=mcep, f0=f0, ap=ap))
    return FeatureArchive(mcep_dim=mcep_dim, utterances=utterances)


# -- statistics and transforms ----------------------------------------------


@dataclass
class SpeakerStats:
    logf0_mu: float
    logf0_sigma: float
    mcep_mean: np.ndarray
    mcep_std: np.ndarray

    def __post_init__(self):
        self.mcep_mean = np.asarray(self.mcep_mean, dtype=np.float64)
        self.mcep_std = np.asarray(self.mcep_std, dtype=np.float64)


def logf0_stats(f0: np.ndarray) -> tuple:
    """(mu, sigma) of ln(f0) over voiced frames, population convention."""
    f0 = np.asarray(f0, dtype=np.float64)
    voiced = f0[f0 > 0]
    if voiced.size < 2:
        raise ValueError("need at least 2 voiced frames for log-F0 statistics")
    logs = np.log(voiced)
    return float(logs.mean()), float(logs.std())


def logf0_convert(f0: np.ndarray, src: SpeakerStats, tgt: SpeakerStats) -> np.ndarray:
    """Log-domain Gaussian-normalized F0 transport; unvoiced frames stay 0."""
    if src.logf0_sigma <= 0:
        raise ValueError("source log-F0 sigma must be positive for conversion")
    f0 = np.asarray(f0, dtype=np.float64)
    out = np.zeros_like(f0)
    voiced = f0 > 0
    z = (np.log(f0[voiced]) - src.logf0_mu) / src.logf0_sigma
    out[voiced] = np.exp(z * tgt.logf0_sigma + tgt.logf0_mu)
    return out


def ap_passthrough(ap):
    """Aperiodicities are converted without any modification."""
    return ap


def speaker_stats(archive: FeatureArchive) -> SpeakerStats:
    """Corpus-level statistics: per-dimension MCEP mean/std and log-F0 (mu, sigma)."""
    if not archive.utterances:
        raise ValueError("cannot compute statistics of an empty archive")
    mcep = np.concatenate([u.mcep for u in archive.utterances], axis=1).astype(np.float64)
    f0 = np.concatenate([u.f0 for u in archive.utterances]).astype(np.float64)
    mu, sigma = logf0_stats(f0)
    return SpeakerStats(
        logf0_mu=mu,
        logf0_sigma=sigma,
        mcep_mean=mcep.mean(axis=1),
        mcep_std=mcep.std(axis=1),
    )


def save_stats(stats: SpeakerStats, path) -> None:
    doc = {
        "logf0_mu": stats.logf0_mu,
        "logf0_sigma": stats.logf0_sigma,
        "mcep_mean": [float(v) for v in stats.mcep_mean],
        "mcep_std": [float(v) for v in stats.mcep_std],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_stats(path) -> SpeakerStats:
    with open(path) as fh:
        doc = json.load(fh)
    return SpeakerStats(
        logf0_mu=float(doc["logf0_mu"]),
        logf0_sigma=float(doc["logf0_sigma"]),
        mcep_mean=doc["mcep_mean"],
        mcep_std=doc["mcep_std"],
    )


def sample_frames(archive: FeatureArchive, n: int = 128,
                  rng: np.random.Generator = None) -> np.ndarray:
    """Draw n distinct frames across the whole archive, in drawn order."""
    if rng is None:
        rng = np.random.default_rng()
    total = archive.total_frames
    if total < n:
        raise ValueError(
            f"archive has {total} frames, batch wants {n}; "
            "reduce frames_per_batch or add utterances"
        )
    pool = np.concatenate([u.mcep for u in archive.utterances], axis=1)
    idx = rng.choice(total, size=n, replace=False)
    return pool[:, idx]


def mcep_normalize(x: np.ndarray, stats: SpeakerStats) -> np.ndarray:
    """Per-dimension z-scoring; promotes to 64-bit."""
    if (stats.mcep_std <= 0).any():
        raise ValueError("mcep_std must be positive in every dimension")
    x = np.asarray(x, dtype=np.float64)
    return (x - stats.mcep_mean[:, None]) / stats.mcep_std[:, None]


def mcep_denormalize(z: np.ndarray, stats: SpeakerStats) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z * stats.mcep_std[:, None] + stats.mcep_mean[:, None]
