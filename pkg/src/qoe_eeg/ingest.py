"""Raw EEG recordings, subjective ratings, and a seeded test-signal generator.

File layout handled here:

* recording CSV: ``time,<ch1>,...,<chN>`` header then one line per sample,
  with a ``<basename>.meta.json`` sidecar holding ``subject_id``,
  ``video_id``, ``sample_rate_hz`` and optionally ``stimulus_start_sample``.
* ratings JSON: ``{subject_id, video_id, scores: {VC, VQ, AC, IL, SA}}``.
* manifest JSON: ``{entries: [{recording, ratings}]}``; relative paths are
  resolved against the manifest's directory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import fileio, seeding
from .errors import (
    BadMetadata,
    IngestError,
    InvalidRating,
    InvalidSpec,
    MalformedRow,
    MissingChannel,
    PairMismatch,
    RecordingTooShort,
)

CHANNELS = ("Fp1", "Fp2", "T3", "T4", "P3", "P4", "O1", "O2")
FACTORS = ("VC", "VQ", "AC", "IL", "SA")
MIN_SECONDS = 3.0
DECIMALS = 6


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RawRecording:
    subject_id: str
    video_id: str
    sample_rate: float
    channels: tuple
    samples: np.ndarray  # (channels, samples), microvolts

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "samples", _frozen(self.samples))

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def with_samples(self, samples) -> "RawRecording":
        return RawRecording(self.subject_id, self.video_id, self.sample_rate,
                            self.channels, samples)


@dataclass(frozen=True)
class RatingRecord:
    subject_id: str
    video_id: str
    scores: Mapping[str, int]

    def __post_init__(self):
        validate_scores(self.scores)
        object.__setattr__(self, "scores", {f: int(self.scores[f]) for f in FACTORS})


def validate_scores(scores: Mapping) -> None:
    for f in FACTORS:
        if f not in scores:
            raise InvalidRating(f"missing score for factor {f}")
        v = scores[f]
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) and not (
            isinstance(v, float) and v.is_integer()
        ):
            raise InvalidRating(f"score for factor {f} is not an integer: {v!r}")
        if not 1 <= int(v) <= 9:
            raise InvalidRating(f"score for factor {f} out of range [1, 9]: {v}")


@dataclass(frozen=True)
class SynthSpec:
    """Sum-of-sinusoids plus Gaussian noise, per canonical channel.

    ``components`` maps a channel label to ``[(frequency_hz, amplitude_uv), ...]``;
    unlisted channels carry noise only.
    """

    duration: float
    sample_rate: float = 250.0
    components: Mapping[str, Sequence] = field(default_factory=dict)
    noise_std: float = 0.0
    seed: int = 0
    subject_id: str = "synth"
    video_id: str = "v00"

    def validate(self) -> None:
        if not self.sample_rate > 0:
            raise InvalidSpec(f"sample_rate must be positive, got {self.sample_rate}")
        if not self.duration > MIN_SECONDS:
            raise InvalidSpec(f"duration must exceed {MIN_SECONDS} s, got {self.duration}")
        if not self.noise_std >= 0:
            raise InvalidSpec(f"noise_std must be >= 0, got {self.noise_std}")
        nyquist = self.sample_rate / 2
        for ch, comps in self.components.items():
            if ch not in CHANNELS:
                raise InvalidSpec(f"unknown channel {ch!r}")
            for freq, amp in comps:
                if not 0 < freq < nyquist:
                    raise InvalidSpec(
                        f"component {freq} Hz on {ch} violates Nyquist: must lie in "
                        f"(0, {nyquist}) Hz at {self.sample_rate} Hz sampling"
                    )
                if not math.isfinite(amp):
                    raise InvalidSpec(f"non-finite amplitude on {ch}")


def synth_recording(spec: SynthSpec) -> RawRecording:
    spec.validate()
    n = int(round(spec.duration * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    out = np.zeros((len(CHANNELS), n))
    for ci, ch in enumerate(CHANNELS):
        for freq, amp in spec.components.get(ch, ()):
            out[ci] += amp * np.sin(2 * np.pi * freq * t)
        if spec.noise_std > 0:
            out[ci] += spec.noise_std * seeding.rng(spec.seed, ci).standard_normal(n)
    return RawRecording(spec.subject_id, spec.video_id, spec.sample_rate, CHANNELS, out)


# -- files -------------------------------------------------------------------

def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


def _read_meta(csv_path: Path) -> dict:
    meta_path = sidecar_path(csv_path)
    if not meta_path.exists():
        raise BadMetadata(f"sidecar {meta_path} missing")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise BadMetadata(f"sidecar {meta_path} is not valid JSON: {e}") from None
    for key in ("subject_id", "video_id", "sample_rate_hz"):
        if key not in meta:
            raise BadMetadata(f"sidecar {meta_path} lacks {key!r}")
    try:
        rate = float(meta["sample_rate_hz"])
    except (TypeError, ValueError):
        raise BadMetadata(f"sample_rate_hz not numeric in {meta_path}") from None
    if not rate > 0 or not math.isfinite(rate):
        raise BadMetadata(f"sample_rate_hz must be positive, got {meta['sample_rate_hz']}")
    start = meta.get("stimulus_start_sample", 0)
    if not isinstance(start, int) or start < 0:
        raise BadMetadata(f"stimulus_start_sample must be a non-negative integer, got {start!r}")
    return {"subject_id": str(meta["subject_id"]), "video_id": str(meta["video_id"]),
            "sample_rate": rate, "stimulus_start_sample": start}


def load_recording(path) -> RawRecording:
    """Read a recording CSV plus sidecar, reorder to CHANNELS, trim the baseline."""
    path = Path(path)
    meta = _read_meta(path)
    with open(path, "r", newline="") as fh:
        header = fh.readline().rstrip("\r\n").split(",")
        if not header or header[0].strip() != "time":
            raise MalformedRow(f"{path}: header must start with 'time'")
        labels = [h.strip() for h in header[1:]]
        missing = [c for c in CHANNELS if c not in labels]
        if missing:
            raise MissingChannel(f"{path}: missing channel(s) {', '.join(missing)}")
        cols = [labels.index(c) + 1 for c in CHANNELS]
        width = len(header)
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != width:
                raise MalformedRow(f"{path}:{lineno}: expected {width} fields, got {len(parts)}")
            try:
                values = [float(parts[i]) for i in range(width)]
            except ValueError:
                raise MalformedRow(f"{path}:{lineno}: non-numeric value") from None
            rows.append([values[c] for c in cols])
    data = np.array(rows, dtype=np.float64).reshape(-1, len(CHANNELS)).T
    if not np.all(np.isfinite(data)):
        raise MalformedRow(f"{path}: non-finite sample value")
    data = data[:, meta["stimulus_start_sample"]:]
    if data.shape[1] < meta["sample_rate"] * MIN_SECONDS:
        raise RecordingTooShort(
            f"{path}: {data.shape[1]} samples after baseline trim, need at least "
            f"{MIN_SECONDS:g} s at {meta['sample_rate']:g} Hz"
        )
    return RawRecording(meta["subject_id"], meta["video_id"], meta["sample_rate"], CHANNELS, data)


def write_recording(rec: RawRecording, path, stimulus_start_sample: int = 0) -> Path:
    """Write ``rec`` as CSV + sidecar; values rounded to DECIMALS places."""
    path = Path(path)
    n = rec.num_samples
    table = np.empty((n, len(rec.channels) + 1))
    table[:, 0] = np.arange(n) / rec.sample_rate
    table[:, 1:] = rec.samples.T
    header = ",".join(("time",) + tuple(rec.channels))
    with fileio.atomic_open(path, "w", newline="\n") as fh:
        np.savetxt(fh, table, fmt=f"%.{DECIMALS}f", delimiter=",", header=header,
                   comments="", newline="\n")
    meta = {"subject_id": rec.subject_id, "video_id": rec.video_id,
            "sample_rate_hz": rec.sample_rate, "stimulus_start_sample": stimulus_start_sample}
    fileio.write_text(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_ratings(path) -> RatingRecord:
    path = Path(path)
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise InvalidRating(f"{path}: not valid JSON: {e}") from None
    for key in ("subject_id", "video_id", "scores"):
        if key not in raw:
            raise InvalidRating(f"{path}: missing {key!r}")
    try:
        return RatingRecord(str(raw["subject_id"]), str(raw["video_id"]), raw["scores"])
    except InvalidRating as e:
        raise InvalidRating(f"{path}: {e.args[0]}") from None


def write_ratings(rating: RatingRecord, path) -> Path:
    path = Path(path)
    body = {"subject_id": rating.subject_id, "video_id": rating.video_id,
            "scores": dict(rating.scores)}
    fileio.write_text(path, json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def read_entries(path) -> list:
    """Manifest entries as dicts with absolute paths."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise IngestError(f"{path}: manifest is not valid JSON: {e}") from None
    entries = raw.get("entries")
    if not isinstance(entries, list):
        raise IngestError(f"{path}: manifest lacks an 'entries' list")
    base = path.parent
    out = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict):
            raise IngestError(f"{path}: entry {i} is not an object")
        out.append({k: str((base / v).resolve()) if isinstance(v, str) else v
                    for k, v in e.items()})
    return out


def load_pair(entry: dict):
    rec = load_recording(entry["recording"])
    rating = load_ratings(entry["ratings"])
    if (rec.subject_id, rec.video_id) != (rating.subject_id, rating.video_id):
        raise PairMismatch(
            f"recording id {rec.subject_id}/{rec.video_id} paired with rating id "
            f"{rating.subject_id}/{rating.video_id}"
        )
    return rec, rating


def load_manifest(path) -> list:
    """Load every (recording, rating) pair listed in a manifest, in order."""
    pairs = []
    for i, entry in enumerate(read_entries(path)):
        try:
            pairs.append(load_pair(entry))
        except IngestError as e:
            raise type(e)(f"entry {i}: {e.args[0]}") from e
    return pairs
