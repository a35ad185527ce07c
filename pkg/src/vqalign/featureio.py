"""Feature file format, dataset manifests, and the synthetic corpus generator.

Feature files ("VQAF") hold one video's frame-feature matrix:

    bytes 0..3    magic "VQAF"
    byte  4       format version, u8, currently 1
    bytes 5..8    frame count T, u32 little-endian
    bytes 9..12   feature dim F, u32 little-endian
    then          T*F float32 little-endian, row-major
    then          id length L, u16 little-endian
    then          L bytes UTF-8 video id

Manifests are JSON documents listing datasets, each with a declared MOS
range and records of {video_id, mos, feature_path}; feature paths are
resolved relative to the manifest's directory.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .seeding import SYNTH, rng_for

MAGIC = b"VQAF"
FORMAT_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")


@dataclasses.dataclass
class FrameFeatureSequence:
    """One video's per-frame feature matrix, stored as float32."""

    video_id: str
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ValidationError(
                f"features must be a T x F matrix, got shape {self.features.shape}"
            )
        if self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValidationError(
                f"features need T >= 1 and F >= 1, got shape {self.features.shape}"
            )
        if not np.isfinite(self.features).all():
            raise ValidationError(f"features for {self.video_id!r} contain non-finite values")

    @property
    def frame_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclasses.dataclass
class VideoRecord:
    video_id: str
    mos: float
    feature_path: str


@dataclasses.dataclass
class DatasetSpec:
    """One dataset: declared MOS range, records, optional split assignment."""

    name: str
    mos_min: float
    mos_max: float
    records: list
    split: dict | None = None

    @property
    def scale(self) -> float:
        """Width of the declared MOS range."""
        return self.mos_max - self.mos_min

    def validate(self):
        if not self.name:
            raise ValidationError("dataset name must be nonempty")
        if not self.records:
            raise ValidationError(f"dataset {self.name!r} has no records")
        if not (self.mos_max > self.mos_min):
            raise ValidationError(
                f"dataset {self.name!r} needs mos_max > mos_min, "
                f"got [{self.mos_min}, {self.mos_max}]"
            )
        seen = set()
        for rec in self.records:
            if rec.video_id in seen:
                raise ValidationError(
                    f"dataset {self.name!r} has duplicate video_id {rec.video_id!r}"
                )
            seen.add(rec.video_id)
            if not (self.mos_min <= rec.mos <= self.mos_max):
                raise ValidationError(
                    f"dataset {self.name!r} record {rec.video_id!r} has mos {rec.mos} "
                    f"outside declared range [{self.mos_min}, {self.mos_max}]"
                )
        if self.split is not None:
            if set(self.split) != seen:
                raise ValidationError(
                    f"dataset {self.name!r} split does not cover exactly its records"
                )
            bad = {v for v in self.split.values() if v not in SPLIT_NAMES}
            if bad:
                raise ValidationError(
                    f"dataset {self.name!r} has unknown split labels {sorted(bad)}"
                )
        return self

    def records_in(self, part: str) -> list:
        """Records assigned to one of 'train', 'val', 'test'."""
        if part not in SPLIT_NAMES:
            raise ValidationError(f"unknown split name {part!r}")
        if self.split is None:
            raise ValidationError(f"dataset {self.name!r} has no split assigned")
        return [r for r in self.records if self.split[r.video_id] == part]


# -- binary feature files -------------------------------------------------


def write_features(seq: FrameFeatureSequence, path):
    """Serialize one sequence; see the module docstring for the layout."""
    id_bytes = seq.video_id.encode("utf-8")
    if len(id_bytes) > 0xFFFF:
        raise FormatError(f"video_id too long to encode ({len(id_bytes)} bytes > 65535)")
    t, f = seq.features.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<II", t, f))
        fh.write(np.ascontiguousarray(seq.features, dtype="<f4").tobytes())
        fh.write(struct.pack("<H", len(id_bytes)))
        fh.write(id_bytes)


def read_features(path) -> FrameFeatureSequence:
    """Parse one feature file, reporting the byte offset of any damage."""
    with open(path, "rb") as fh:
        buf = fh.read()

    def need(offset, count, what):
        if len(buf) < offset + count:
            raise FormatError(
                f"{path}: truncated while reading {what} at byte {offset}: "
                f"need {count} more bytes, file ends at {len(buf)}"
            )

    need(0, 4, "magic")
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0: expected {MAGIC!r}, found {buf[:4]!r}")
    need(4, 1, "version")
    version = buf[4]
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported version {version} at byte 4 (expected {FORMAT_VERSION})"
        )
    need(5, 8, "dimensions")
    t, f = struct.unpack_from("<II", buf, 5)
    if t < 1:
        raise FormatError(f"{path}: frame count {t} at byte 5 must be >= 1")
    if f < 1:
        raise FormatError(f"{path}: feature dim {f} at byte 9 must be >= 1")
    payload = 4 * t * f
    need(13, payload, f"{t}x{f} feature payload")
    features = np.frombuffer(buf, dtype="<f4", count=t * f, offset=13).reshape(t, f)
    off = 13 + payload
    need(off, 2, "id length")
    (id_len,) = struct.unpack_from("<H", buf, off)
    off += 2
    need(off, id_len, "video id")
    try:
        video_id = buf[off : off + id_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: video id at byte {off} is not valid UTF-8") from exc
    off += id_len
    if len(buf) != off:
        raise FormatError(f"{path}: {len(buf) - off} unexpected trailing bytes at byte {off}")
    if not np.isfinite(features).all():
        raise FormatError(f"{path}: feature payload contains non-finite values")
    return FrameFeatureSequence(video_id=video_id, features=features.copy())


# -- manifests -------------------------------------------------------------


def _require(mapping, key, kind, where):
    if not isinstance(mapping, dict) or key not in mapping:
        raise FormatError(f"manifest {where}: missing key {key!r}")
    value = mapping[key]
    if not isinstance(value, kind):
        raise FormatError(
            f"manifest {where}: key {key!r} has type {type(value).__name__}"
        )
    return value


def load_manifest(path) -> list:
    """Read and validate a dataset manifest; returns a list of DatasetSpec."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    version = _require(doc, "version", int, "root")
    if version != 1:
        raise FormatError(f"{path}: unsupported manifest version {version}")
    raw_datasets = _require(doc, "datasets", list, "root")
    if not raw_datasets:
        raise ValidationError(f"{path}: manifest lists no datasets")
    base = os.path.dirname(os.path.abspath(path))
    datasets = []
    names = set()
    for d_idx, raw in enumerate(raw_datasets):
        where = f"datasets[{d_idx}]"
        name = _require(raw, "name", str, where)
        if name in names:
            raise ValidationError(f"{path}: duplicate dataset name {name!r}")
        names.add(name)
        mos_min = float(_require(raw, "mos_min", (int, float), where))
        mos_max = float(_require(raw, "mos_max", (int, float), where))
        raw_records = _require(raw, "records", list, where)
        records = []
        for r_idx, rec in enumerate(raw_records):
            rwhere = f"{where}.records[{r_idx}]"
            video_id = _require(rec, "video_id", str, rwhere)
            mos = float(_require(rec, "mos", (int, float), rwhere))
            rel = _require(rec, "feature_path", str, rwhere)
            records.append(
                VideoRecord(
                    video_id=video_id,
                    mos=mos,
                    feature_path=os.path.normpath(os.path.join(base, rel)),
                )
            )
        spec = DatasetSpec(name=name, mos_min=mos_min, mos_max=mos_max, records=records)
        spec.validate()
        datasets.append(spec)
    return datasets


def write_manifest(path, datasets, feature_paths=None):
    """Write a manifest; ``feature_paths`` optionally overrides stored paths.

    ``feature_paths`` maps (dataset name, video_id) to the path string to
    store, letting callers write paths relative to the manifest location.
    """
    doc = {"version": 1, "datasets": []}
    for spec in datasets:
        spec.validate()
        entry = {
            "name": spec.name,
            "mos_min": spec.mos_min,
            "mos_max": spec.mos_max,
            "records": [],
        }
        for rec in spec.records:
            stored = rec.feature_path
            if feature_paths is not None:
                stored = feature_paths[(spec.name, rec.video_id)]
            entry["records"].append(
                {"video_id": rec.video_id, "mos": rec.mos, "feature_path": stored}
            )
        doc["datasets"].append(entry)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# -- synthetic corpus ------------------------------------------------------


@dataclasses.dataclass
class SynthConfig:
    """Knobs for the synthetic multi-dataset corpus.

    Each dataset d maps a latent quality p (uniform on its latent range)
    through a monotone observer curve and an affine scale:
    MOS = scale_d * observer_d(p) + offset_d + noise. Frame features embed p
    linearly (a fixed random direction shared by all datasets) plus jitter,
    so a linear readout can recover the latent ordering.
    """

    n_datasets: int = 2
    videos_per_dataset: int = 200
    frame_count_range: tuple = (30, 30)
    feature_dim: int = 64
    scales: tuple | None = None
    offsets: tuple | None = None
    latent_ranges: tuple | None = None
    nonlinearity: float = 0.0
    noise_sigma: float = 0.0
    feature_jitter: float = 0.1
    identical_observers: bool = False

    def resolved(self):
        """Validate and fill defaults; returns (scales, offsets, latent_ranges)."""
        d = self.n_datasets
        if d < 1:
            raise ConfigError(f"n_datasets must be >= 1, got {d}")
        if self.videos_per_dataset < 1:
            raise ConfigError(f"videos_per_dataset must be >= 1, got {self.videos_per_dataset}")
        if self.feature_dim < 2:
            raise ConfigError(f"feature_dim must be >= 2, got {self.feature_dim}")
        lo, hi = self.frame_count_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"frame_count_range must satisfy 1 <= lo <= hi, got {lo, hi}")
        scales = tuple(self.scales) if self.scales is not None else (1.0,) * d
        offsets = tuple(self.offsets) if self.offsets is not None else (0.0,) * d
        ranges = (
            tuple(tuple(r) for r in self.latent_ranges)
            if self.latent_ranges is not None
            else ((0.0, 1.0),) * d
        )
        if len(scales) != d or len(offsets) != d or len(ranges) != d:
            raise ConfigError(
                f"scales/offsets/latent_ranges must each have {d} entries, "
                f"got {len(scales)}/{len(offsets)}/{len(ranges)}"
            )
        for a in scales:
            if a <= 0:
                raise ConfigError(f"scales must be positive, got {a}")
        for r_lo, r_hi in ranges:
            if not (0.0 <= r_lo < r_hi <= 1.0):
                raise ConfigError(f"latent ranges must satisfy 0 <= lo < hi <= 1, got {r_lo, r_hi}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.feature_jitter < 0:
            raise ConfigError(f"feature_jitter must be >= 0, got {self.feature_jitter}")
        if self.nonlinearity < 0:
            raise ConfigError(f"nonlinearity must be >= 0, got {self.nonlinearity}")
        return scales, offsets, ranges


def _observer(p, center, steepness):
    """Monotone map of [0,1] onto [0,1]; identity when steepness is zero."""
    if steepness == 0.0:
        return np.asarray(p, dtype=np.float64)

    def expit(x):
        return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))

    low = expit(steepness * (0.0 - center))
    high = expit(steepness * (1.0 - center))
    return (expit(steepness * (p - center)) - low) / (high - low)


def synth_generate(config: SynthConfig, out_dir, seed: int) -> list:
    """Generate feature files, a manifest, and a truth sidecar under ``out_dir``.

    Returns the generated datasets as loaded back through ``load_manifest``.
    A ``truth.json`` sidecar records each video's latent quality and every
    dataset's observer/affine parameters for diagnostics and tests.
    """
    scales, offsets, ranges = config.resolved()
    os.makedirs(out_dir, exist_ok=True)

    rng_embed = rng_for(seed, SYNTH, 0)
    direction = rng_embed.normal(size=config.feature_dim)
    base_point = rng_embed.normal(size=config.feature_dim)

    rng_obs = rng_for(seed, SYNTH, 1)
    if config.identical_observers:
        centers = [float(rng_obs.uniform(0.35, 0.65))] * config.n_datasets
    else:
        centers = [float(rng_obs.uniform(0.35, 0.65)) for _ in range(config.n_datasets)]

    t_lo, t_hi = config.frame_count_range
    datasets = []
    rel_paths = {}
    truth = {"version": 1, "seed": seed, "datasets": []}
    for d in range(config.n_datasets):
        name = f"synth{d}"
        a, b = scales[d], offsets[d]
        lo, hi = ranges[d]
        obs_lo = float(_observer(lo, centers[d], config.nonlinearity))
        obs_hi = float(_observer(hi, centers[d], config.nonlinearity))
        mos_min = a * obs_lo + b
        mos_max = a * obs_hi + b
        sub = os.path.join(out_dir, name)
        os.makedirs(sub, exist_ok=True)
        rng_d = rng_for(seed, SYNTH, 2 + d)
        records = []
        latents = {}
        for i in range(config.videos_per_dataset):
            video_id = f"{name}_v{i:04d}"
            p = float(rng_d.uniform(lo, hi))
            t = int(rng_d.integers(t_lo, t_hi + 1))
            frames = p * direction + base_point + config.feature_jitter * rng_d.normal(
                size=(t, config.feature_dim)
            )
            mos = a * float(_observer(p, centers[d], config.nonlinearity)) + b
            if config.noise_sigma > 0:
                mos += float(rng_d.normal(0.0, config.noise_sigma))
            mos = float(np.clip(mos, mos_min, mos_max))
            rel = os.path.join(name, f"{video_id}.vqaf")
            write_features(
                FrameFeatureSequence(video_id=video_id, features=frames),
                os.path.join(out_dir, rel),
            )
            records.append(VideoRecord(video_id=video_id, mos=mos, feature_path=rel))
            rel_paths[(name, video_id)] = rel
            latents[video_id] = p
        spec = DatasetSpec(name=name, mos_min=mos_min, mos_max=mos_max, records=records)
        datasets.append(spec)
        truth["datasets"].append(
            {
                "name": name,
                "scale": a,
                "offset": b,
                "latent_range": [lo, hi],
                "observer_center": centers[d],
                "nonlinearity": config.nonlinearity,
                "declared_range": [mos_min, mos_max],
                "latents": latents,
            }
        )

    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest_path, datasets, feature_paths=rel_paths)
    with open(os.path.join(out_dir, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2)
        fh.write("\n")
    return load_manifest(manifest_path)
