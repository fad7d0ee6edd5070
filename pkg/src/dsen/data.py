"""Dataset container, synthetic dyadic-EEG generator, and CSV ingestion.

The generator stands in for real paired recordings: per pair, per band, each
channel carries a constant-modulus band-limited tone whose slow amplitude
envelope is shared across the subject's channels. Friend pairs mix a shared
envelope into the beta and gamma bands (weight sqrt(coupling_rho)) so their
band-limited envelopes correlate across subjects at about coupling_rho;
theta/alpha envelopes are always private. Constant-modulus carriers are used
instead of Gaussian noise because a Gaussian carrier's Rayleigh envelope caps
the measurable envelope correlation near pi/4 even under perfect coupling.

File format ``.dyad``: magic b"DYAD", u32 LE version, u32 LE header length,
UTF-8 JSON header (counts, rate, labels, channel names), then a float32 LE
payload ordered pair-major, subject-major, channel-major, time-minor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DataCorruptionError,
    DataFormatError,
    IngestionError,
)
from .signal import BAND_EDGES, BAND_ORDER, EEGRecording, SegmentedSample, resample

DYAD_MAGIC = b"DYAD"
DYAD_VERSION = 1

LABELS = ("stranger", "friend")
COUPLED_BANDS = ("beta", "gamma")


@dataclass
class DyadicSample:
    """One windowed data sample of a dyad: time-locked segments from both
    subjects plus the relationship label and gender metadata."""

    pair_id: str
    x: SegmentedSample
    y: SegmentedSample
    label: str
    gender_match: str = "same"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ConfigError(f"label must be one of {LABELS}, got '{self.label}'")
        if self.gender_match not in ("same", "different"):
            raise ConfigError("gender_match must be 'same' or 'different'")
        if (
            self.x.n_segments != self.y.n_segments
            or self.x.segments[0].shape != self.y.segments[0].shape
        ):
            raise ConfigError("subject blocks of a pair must be shaped alike")

    @property
    def label_index(self) -> int:
        return LABELS.index(self.label)


@dataclass
class GeneratorConfig:
    """Knobs of the synthetic dyad generator.

    coupling_rho is the shared-envelope weight (variance fraction) injected
    into friend pairs' beta/gamma bands; stranger_rho plays the same role for
    stranger pairs. band_power maps band name to relative amplitude.
    """

    n_stranger_pairs: int = 18
    n_friend_pairs: int = 54
    coupling_rho: float = 0.6
    stranger_rho: float = 0.0
    band_power: dict[str, float] = field(
        default_factory=lambda: {b: 1.0 for b in BAND_ORDER}
    )
    noise_floor: float = 0.2
    seed: int = 0
    n_channels: int = 30
    n_segments: int = 9
    segment_len: int = 400
    sample_rate_hz: float = 200.0
    samples_per_pair: int = 4
    envelope_band: tuple[float, float] = (0.3, 1.5)
    envelope_depth: float = 0.4
    carrier_margin: float = 0.2  # keep tones off the band edges
    phase_coupling: bool = False

    def __post_init__(self):
        if not 0.0 <= self.coupling_rho <= 1.0 or not 0.0 <= self.stranger_rho <= 1.0:
            raise ConfigError("coupling rhos must lie in [0, 1]")
        if self.n_stranger_pairs < 0 or self.n_friend_pairs < 0:
            raise ConfigError("pair counts must be >= 0")
        for name in self.band_power:
            if name not in BAND_EDGES:
                raise ConfigError(f"unknown band '{name}' in band_power")
        if self.noise_floor < 0:
            raise ConfigError("noise_floor must be >= 0")
        for name in ("n_channels", "n_segments", "segment_len", "samples_per_pair"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


def _slow_process(rng: np.random.Generator, t: np.ndarray, band: tuple[float, float],
                  n_tones: int = 6) -> np.ndarray:
    """Zero-mean, unit-variance band-limited drift (sum of random tones)."""
    freqs = rng.uniform(band[0], band[1], size=n_tones)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_tones)
    return np.sqrt(2.0 / n_tones) * np.cos(
        2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]
    ).sum(axis=0)


def _pair_block(cfg: GeneratorConfig, rng: np.random.Generator, rho_by_band: dict[str, float]) -> np.ndarray:
    """One [2, C, T] segment block for a pair."""
    c, t_len = cfg.n_channels, cfg.segment_len
    t = np.arange(t_len) / cfg.sample_rate_hz
    out = np.zeros((2, c, t_len))
    for band in BAND_ORDER:
        power = cfg.band_power.get(band, 0.0)
        if power <= 0.0:
            continue
        rho = rho_by_band[band]
        shared_env = _slow_process(rng, t, cfg.envelope_band)
        lo, hi = BAND_EDGES[band]
        # Analysis filters have wide transition bands; carriers sit in the
        # band interior so their envelopes survive band-pass filtering.
        lo, hi = lo + cfg.carrier_margin * (hi - lo), hi - cfg.carrier_margin * (hi - lo)
        shared_freqs = rng.uniform(lo, hi, size=c)
        shared_phases = rng.uniform(0.0, 2.0 * np.pi, size=c)
        phase_offsets = rng.uniform(0.0, 2.0 * np.pi, size=c)
        for subject in (0, 1):
            private_env = _slow_process(rng, t, cfg.envelope_band)
            drift = np.sqrt(1.0 - rho) * private_env + np.sqrt(rho) * shared_env
            envelope = np.maximum(1.0 + cfg.envelope_depth * drift, 0.02)
            if cfg.phase_coupling and rho > 0.0:
                # Shared carriers; a fixed per-channel offset keeps PLV at 1
                # for the coupled bands without identical waveforms.
                freqs = shared_freqs
                phases = shared_phases + subject * phase_offsets
            else:
                freqs = rng.uniform(lo, hi, size=c)
                phases = rng.uniform(0.0, 2.0 * np.pi, size=c)
            carrier = np.cos(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])
            out[subject] += power * envelope[None, :] * carrier
    if cfg.noise_floor > 0.0:
        out += cfg.noise_floor * rng.standard_normal(out.shape)
    return out


def generate(cfg: GeneratorConfig) -> list[DyadicSample]:
    """Produce the synthetic dyadic dataset described by ``cfg``.

    Deterministic: each pair derives its RNG stream from (seed, pair index),
    so parallel and serial generation agree bitwise.
    """
    samples: list[DyadicSample] = []
    n_pairs = cfg.n_stranger_pairs + cfg.n_friend_pairs
    for pair_idx in range(n_pairs):
        label = "stranger" if pair_idx < cfg.n_stranger_pairs else "friend"
        rho = cfg.stranger_rho if label == "stranger" else cfg.coupling_rho
        rho_by_band = {b: (rho if b in COUPLED_BANDS else 0.0) for b in BAND_ORDER}
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(pair_idx,))
        )
        gender = "same" if rng.random() < 0.5 else "different"
        pair_id = f"pair{pair_idx:03d}"
        for _ in range(cfg.samples_per_pair):
            blocks = [
                _pair_block(cfg, rng, rho_by_band) for _ in range(cfg.n_segments)
            ]
            x_segments = [b[0].astype(np.float32) for b in blocks]
            y_segments = [b[1].astype(np.float32) for b in blocks]
            window_s = cfg.segment_len / cfg.sample_rate_hz
            samples.append(
                DyadicSample(
                    pair_id=pair_id,
                    x=SegmentedSample(segments=x_segments, window_seconds=window_s),
                    y=SegmentedSample(segments=y_segments, window_seconds=window_s),
                    label=label,
                    gender_match=gender,
                )
            )
    return samples


# -- container format ---------------------------------------------------------


def write_dataset(samples: list[DyadicSample], path) -> None:
    """Serialize samples to the ``.dyad`` container (lossless round-trip)."""
    if not samples:
        raise ConfigError("refusing to write an empty dataset")
    first = samples[0]
    n_channels = first.x.segments[0].shape[0]
    n_segments = first.x.n_segments
    segment_len = first.x.segments[0].shape[1]
    window_s = first.x.window_seconds
    header = {
        "sample_rate_hz": segment_len / window_s,
        "n_channels": n_channels,
        "n_segments": n_segments,
        "segment_len": segment_len,
        "channel_names": [f"ch{i:02d}" for i in range(n_channels)],
        "samples": [
            {"pair_id": s.pair_id, "label": s.label, "gender_match": s.gender_match}
            for s in samples
        ],
    }
    blob = bytearray()
    blob += DYAD_MAGIC
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob += struct.pack("<II", DYAD_VERSION, len(header_bytes))
    blob += header_bytes
    for s in samples:
        for seg_block in (s.x, s.y):
            arr = np.concatenate(seg_block.segments, axis=1)
            if arr.shape != (n_channels, n_segments * segment_len):
                raise ConfigError("all samples must share the dataset shape")
            blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def read_dataset(path) -> list[DyadicSample]:
    """Read a ``.dyad`` container written by ``write_dataset``."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != DYAD_MAGIC:
        raise DataFormatError(f"{path}: not a dyadic dataset (bad magic)")
    if len(blob) < 12:
        raise DataCorruptionError(f"{path}: truncated header", byte_offset=len(blob))
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != DYAD_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if 12 + header_len > len(blob):
        raise DataCorruptionError(f"{path}: header extends past end of file",
                                  byte_offset=len(blob))
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: unreadable header ({exc})") from exc

    n_channels = int(header["n_channels"])
    n_segments = int(header["n_segments"])
    segment_len = int(header["segment_len"])
    rate = float(header["sample_rate_hz"])
    records = header["samples"]
    block_values = n_channels * n_segments * segment_len
    expected = 12 + header_len + len(records) * 2 * block_values * 4
    if len(blob) != expected:
        raise DataCorruptionError(
            f"{path}: header promises {expected} bytes, file has {len(blob)}",
            byte_offset=min(expected, len(blob)),
        )

    window_s = segment_len / rate
    payload = np.frombuffer(blob, dtype="<f4", offset=12 + header_len)
    payload = payload.reshape(len(records), 2, n_channels, n_segments * segment_len)
    samples = []
    for rec, block in zip(records, payload):
        def split(arr):
            return [arr[:, i * segment_len : (i + 1) * segment_len].copy()
                    for i in range(n_segments)]

        samples.append(
            DyadicSample(
                pair_id=rec["pair_id"],
                x=SegmentedSample(segments=split(block[0]), window_seconds=window_s),
                y=SegmentedSample(segments=split(block[1]), window_seconds=window_s),
                label=rec["label"],
                gender_match=rec["gender_match"],
            )
        )
    return samples


# -- CSV ingestion -------------------------------------------------------------


def import_csv(directory, target_rate_hz: float = 200.0, n_segments: int = 1) -> list[DyadicSample]:
    """Ingest paired per-subject CSV recordings.

    ``directory`` must contain ``manifest.csv`` with the columns
    pair_id,file_x,file_y,label,gender_match,sample_rate and one CSV per
    subject (rows = time samples, columns = channels). Recordings are
    resampled to ``target_rate_hz`` when the manifest rate differs and split
    into ``n_segments`` equal segments.
    """
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.exists():
        raise IngestionError(f"no manifest.csv in {directory}")
    samples = []
    with open(manifest) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise IngestionError("manifest.csv is empty")
    head = lines[0].split(",")
    expected_cols = ["pair_id", "file_x", "file_y", "label", "gender_match", "sample_rate"]
    if [c.strip() for c in head] != expected_cols:
        raise IngestionError(f"manifest header must be {','.join(expected_cols)}")
    for line in lines[1:]:
        cols = [c.strip() for c in line.split(",")]
        if len(cols) != 6:
            raise IngestionError(f"malformed manifest line: {line!r}")
        pair_id, file_x, file_y, label, gender, rate_s = cols
        try:
            rate = float(rate_s)
        except ValueError as exc:
            raise IngestionError(f"pair {pair_id}: bad sample_rate {rate_s!r}") from exc

        def load(name):
            path = directory / name
            if not path.exists():
                raise IngestionError(f"pair {pair_id}: missing file {name}")
            data = np.loadtxt(path, delimiter=",", ndmin=2)
            return data.T  # rows are time samples -> [channels, samples]

        data_x, data_y = load(file_x), load(file_y)
        if data_x.shape != data_y.shape:
            raise IngestionError(
                f"pair {pair_id}: partner files disagree "
                f"({data_x.shape} vs {data_y.shape})"
            )
        if rate != target_rate_hz:
            data_x = resample(EEGRecording(data_x, rate), target_rate_hz).data
            data_y = resample(EEGRecording(data_y, rate), target_rate_hz).data
        total = data_x.shape[1]
        if total % n_segments:
            raise IngestionError(
                f"pair {pair_id}: {total} samples not divisible into "
                f"{n_segments} segments"
            )
        seg_len = total // n_segments
        window_s = seg_len / target_rate_hz

        def split(arr):
            return [arr[:, i * seg_len : (i + 1) * seg_len].astype(np.float32)
                    for i in range(n_segments)]

        samples.append(
            DyadicSample(
                pair_id=pair_id,
                x=SegmentedSample(segments=split(data_x), window_seconds=window_s),
                y=SegmentedSample(segments=split(data_y), window_seconds=window_s),
                label=label,
                gender_match=gender,
            )
        )
    return samples
