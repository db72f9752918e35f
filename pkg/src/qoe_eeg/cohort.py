"""Synthetic cohorts whose labels are driven by one spectral tier.

A cohort spec is a JSON-compatible dict::

    {
      "sample_rate": 250, "duration": 60, "noise_std": 2.0, "seed": 0,
      "baseline_seconds": 0,
      "tier": {"frequency": 10, "channels": ["Fp1", ..., "O2"],
               "amplitudes": [1.0, 3.0, 6.0], "jitter": 0.2},
      "nuisance": {"frequencies": [2, 6, 20, 38], "amplitude_range": [0.5, 4.0]},
      "factors": ["VC", "VQ", "AC", "IL", "SA"]
    }

Recording ``i`` belongs to class ``i % 3``. Its tier channels carry a
sinusoid at ``tier.frequency`` whose amplitude is the class amplitude scaled
by ``1 + jitter * u`` with ``u ~ U(-1, 1)``; every channel also carries
label-independent nuisance sinusoids and white noise. Factors listed in
``factors`` get a score inside the class bin (1-3, 4-6, 7-9); the rest get a
uniform score in 1..9.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from . import fileio, seeding
from .errors import InvalidSpec
from .ingest import (
    CHANNELS,
    FACTORS,
    RatingRecord,
    RawRecording,
    SynthSpec,
    synth_recording,
    write_ratings,
    write_recording,
)

DEFAULT_SPEC = {
    "sample_rate": 250.0,
    "duration": 60.0,
    "noise_std": 2.0,
    "seed": 0,
    "baseline_seconds": 0.0,
    "tier": {"frequency": 10.0, "channels": list(CHANNELS),
             "amplitudes": [1.0, 3.0, 6.0], "jitter": 0.2},
    "nuisance": {"frequencies": [2.0, 6.0, 20.0, 38.0], "amplitude_range": [0.5, 4.0]},
    "factors": list(FACTORS),
}


def normalize_spec(spec: dict | None) -> dict:
    """Fill defaults and validate; raises InvalidSpec."""
    out = copy.deepcopy(DEFAULT_SPEC)
    for key, value in (spec or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key].update(value)
        else:
            out[key] = value
    rate = float(out["sample_rate"])
    nyquist = rate / 2
    tier = out["tier"]
    if len(tier["amplitudes"]) != 3:
        raise InvalidSpec("tier.amplitudes must list one amplitude per class (3)")
    if not 0 <= tier["jitter"] < 1:
        raise InvalidSpec("tier.jitter must lie in [0, 1)")
    for ch in tier["channels"]:
        if ch not in CHANNELS:
            raise InvalidSpec(f"unknown tier channel {ch!r}")
    for f in [tier["frequency"], *out["nuisance"]["frequencies"]]:
        if not 0 < f < nyquist:
            raise InvalidSpec(
                f"component {f} Hz violates Nyquist: must lie in (0, {nyquist:g}) Hz "
                f"at {rate:g} Hz sampling")
    for fac in out["factors"]:
        if fac not in FACTORS:
            raise InvalidSpec(f"unknown factor {fac!r}")
    if out["baseline_seconds"] < 0:
        raise InvalidSpec("baseline_seconds must be >= 0")
    # duration/noise checks live in SynthSpec
    SynthSpec(duration=float(out["duration"]), sample_rate=rate,
              noise_std=float(out["noise_std"])).validate()
    return out


def make_member(spec: dict, index: int):
    """Recording, rating, and stimulus start sample for cohort member ``index``."""
    spec = normalize_spec(spec)
    label = index % 3
    gen = seeding.rng(spec["seed"], "member", index)
    tier = spec["tier"]
    lo, hi = spec["nuisance"]["amplitude_range"]
    components = {}
    for ch in CHANNELS:
        comps = [(float(f), float(gen.uniform(lo, hi))) for f in spec["nuisance"]["frequencies"]]
        if ch in tier["channels"]:
            amp = tier["amplitudes"][label] * (1 + tier["jitter"] * gen.uniform(-1, 1))
            comps.append((float(tier["frequency"]), float(amp)))
        components[ch] = comps
    subject = f"s{index // 9 + 1:02d}"
    video = f"v{index % 9 + 1:02d}"
    rate = float(spec["sample_rate"])
    base = int(round(spec["baseline_seconds"] * rate))
    rec = synth_recording(SynthSpec(
        duration=float(spec["duration"]) + base / rate, sample_rate=rate, components=components,
        noise_std=float(spec["noise_std"]), seed=seeding.derive(spec["seed"], "noise", index),
        subject_id=subject, video_id=video))
    if base:
        # baseline is noise only
        samples = np.array(rec.samples)
        samples[:, :base] = seeding.rng(spec["seed"], "baseline", index).standard_normal(
            (len(CHANNELS), base)) * spec["noise_std"]
        rec = rec.with_samples(samples)
    scores = {}
    for fac in FACTORS:
        if fac in spec["factors"]:
            scores[fac] = int(3 * label + 1 + gen.integers(0, 3))
        else:
            scores[fac] = int(gen.integers(1, 10))
    return rec, RatingRecord(subject, video, scores), base


def make_cohort(spec: dict, count: int) -> list:
    """``count`` in-memory (RawRecording, RatingRecord) pairs, baseline already dropped."""
    out = []
    for i in range(count):
        rec, rating, base = make_member(spec, i)
        if base:
            rec = RawRecording(rec.subject_id, rec.video_id, rec.sample_rate, rec.channels,
                               rec.samples[:, base:])
        out.append((rec, rating))
    return out


def member_stem(index: int) -> str:
    return f"rec_{index:04d}"


def write_cohort(spec: dict, count: int, out_dir) -> Path:
    """Write recordings, ratings and ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        rec, rating, base = make_member(spec, i)
        stem = member_stem(i)
        write_recording(rec, out_dir / f"{stem}.csv", stimulus_start_sample=base)
        write_ratings(rating, out_dir / f"{stem}.ratings.json")
        entries.append({"recording": f"{stem}.csv", "ratings": f"{stem}.ratings.json"})
    manifest = out_dir / "manifest.json"
    fileio.write_text(manifest, json.dumps({"entries": entries}, indent=2) + "\n")
    return manifest
