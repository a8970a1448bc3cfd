"""Labeled IQ-frame datasets: balanced generation, binary persistence.

A dataset file is: magic "AMC1", version u32, frame_count u32, frame_len
u32, channel_count u32 (=2), then one record per frame (label u8, snr i8,
frame_len*2 float32 LE, I and Q interleaved per timestep), trailing CRC32.
A sibling "<path>.json" records the generator config and master seed.
"""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import ConfigError, ContractError
from .rng import derive_seed, stream
from .signals import DEFAULT_FADING_TAPS, ChannelConfig, ModulationScheme, _impair, modulate, noise_power

DATASET_MAGIC = b"AMC1"
DATASET_VERSION = 1
FRAME_MARGIN = 8  # samples discarded each side to skip filter transients

SPLIT_IDS = {"tiny_train": 0, "tiny_test": 1, "adv_data": 2}


@dataclass
class IQFrame:
    samples: np.ndarray  # [T, 2] float32; column 0 in-phase, column 1 quadrature
    label: ModulationScheme
    snr_db: float


class Dataset:
    """Array-backed frame collection with a split tag and metadata."""

    def __init__(self, samples, labels, snrs, split_tag: str, metadata: dict | None = None):
        self.samples = np.ascontiguousarray(samples, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.uint8)
        self.snrs = np.asarray(snrs, dtype=np.int8)
        self.split_tag = split_tag
        self.metadata = metadata or {}
        if not (len(self.samples) == len(self.labels) == len(self.snrs)):
            raise ContractError("dataset arrays disagree on frame count")

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i) -> IQFrame:
        return IQFrame(self.samples[i], ModulationScheme(int(self.labels[i])), float(self.snrs[i]))

    @property
    def frames(self):
        return [self[i] for i in range(len(self))]

    @property
    def frame_len(self) -> int:
        return self.samples.shape[1]

    def replace(self, samples=None, split_tag=None, **meta) -> "Dataset":
        out = Dataset(
            self.samples if samples is None else samples,
            self.labels.copy(),
            self.snrs.copy(),
            split_tag or self.split_tag,
            dict(self.metadata),
        )
        out.metadata.update(meta)
        return out


@dataclass
class SynthConfig:
    schemes: tuple = tuple(ModulationScheme)
    snr_grid: tuple = tuple(range(-20, 20, 2))
    split_sizes: dict = field(
        default_factory=lambda: {"tiny_train": 7700, "tiny_test": 330, "adv_data": 6600}
    )
    frame_len: int = 128
    freq_offset_std: float = 1e-4
    srate_offset_std: float = 1e-4
    fading_taps: tuple = DEFAULT_FADING_TAPS
    master_seed: int = 0

    def describe(self) -> dict:
        return {
            "schemes": [ModulationScheme(s).name for s in self.schemes],
            "snr_grid": list(self.snr_grid),
            "split_sizes": dict(self.split_sizes),
            "frame_len": self.frame_len,
            "freq_offset_std": self.freq_offset_std,
            "srate_offset_std": self.srate_offset_std,
            "fading_taps": [[m, d] for m, d in self.fading_taps],
            "master_seed": self.master_seed,
        }


def _split_layout(cfg: SynthConfig, count: int):
    """(scheme, snr) per frame index: schemes in blocks, SNRs round-robin."""
    n_schemes = len(cfg.schemes)
    if count % n_schemes != 0:
        raise ConfigError(
            f"split size {count} not divisible by {n_schemes} schemes; "
            f"choose a multiple of the scheme count for balanced labels"
        )
    per_scheme = count // n_schemes
    grid = cfg.snr_grid
    layout = []
    for s in cfg.schemes:
        for j in range(per_scheme):
            layout.append((ModulationScheme(s), int(grid[j % len(grid)])))
    return layout


def _synth_frame(cfg: SynthConfig, split_id: int, index: int, scheme, snr_db):
    payload_seed = derive_seed(cfg.master_seed, split_id, index, 0)
    chan_rng = stream(cfg.master_seed, split_id, index, 1)
    length = cfg.frame_len + 2 * FRAME_MARGIN
    sig = modulate(scheme, payload_seed, length)
    ch_cfg = ChannelConfig(
        snr_db=float(snr_db),
        freq_offset_std=cfg.freq_offset_std,
        srate_offset_std=cfg.srate_offset_std,
        fading_taps=cfg.fading_taps,
    )
    impaired = _impair(sig, ch_cfg, chan_rng)
    window = impaired[FRAME_MARGIN : FRAME_MARGIN + cfg.frame_len]
    rms = np.sqrt(np.mean(np.abs(window) ** 2))
    if rms > 0:
        window = window / rms
    n0 = noise_power(float(snr_db))
    if n0 > 0:
        sigma = math.sqrt(n0 / 2.0)
        window = window + sigma * (
            chan_rng.normal(size=len(window)) + 1j * chan_rng.normal(size=len(window))
        )
    out = np.empty((cfg.frame_len, 2), dtype=np.float32)
    out[:, 0] = window.real
    out[:, 1] = window.imag
    return out


def make_split(cfg: SynthConfig, split_tag: str) -> Dataset:
    if split_tag not in SPLIT_IDS:
        raise ConfigError(f"unknown split {split_tag!r}; expected one of {sorted(SPLIT_IDS)}")
    count = cfg.split_sizes[split_tag]
    split_id = SPLIT_IDS[split_tag]
    layout = _split_layout(cfg, count)
    samples = np.empty((count, cfg.frame_len, 2), dtype=np.float32)
    labels = np.empty(count, dtype=np.uint8)
    snrs = np.empty(count, dtype=np.int8)
    for i, (scheme, snr) in enumerate(layout):
        samples[i] = _synth_frame(cfg, split_id, i, scheme, snr)
        labels[i] = int(scheme)
        snrs[i] = snr
    return Dataset(samples, labels, snrs, split_tag, {"generator": cfg.describe()})


def make_dataset(cfg: SynthConfig) -> dict:
    """All three splits, deterministic under the master seed."""
    return {tag: make_split(cfg, tag) for tag in cfg.split_sizes}


def dataset_family(cfg_meta: dict) -> str:
    """Stable fingerprint of the generation config incl. master seed."""
    import hashlib

    blob = json.dumps(cfg_meta, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_dataset(ds: Dataset, path) -> None:
    path = str(path)
    n, t, ch = ds.samples.shape
    if ch != 2:
        raise ContractError(f"dataset must have 2 channels, got {ch}")
    body = bytearray()
    body += struct.pack("<III", n, t, ch)
    inter = ds.samples.astype("<f4", copy=False)
    for i in range(n):
        body += struct.pack("<Bb", int(ds.labels[i]), int(ds.snrs[i]))
        body += inter[i].tobytes()
    binio.write_envelope(path, DATASET_MAGIC, DATASET_VERSION, bytes(body))
    meta = dict(ds.metadata)
    meta.update({"split_tag": ds.split_tag, "frame_count": n, "frame_len": t})
    if "generator" in meta:
        meta["dataset_family"] = dataset_family(meta["generator"])
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    path = str(path)
    raw = binio.read_raw(path, DATASET_MAGIC, DATASET_VERSION)
    up = binio.Unpacker(raw[8:], path)
    n = up.u32("frame_count")
    t = up.u32("frame_len")
    ch = up.u32("channel_count")
    if ch != 2:
        raise ContractError(f"{path}: channel_count {ch}, expected 2")
    record = 2 + t * ch * 4
    expected_total = 8 + 12 + n * record + 4
    if len(raw) < expected_total:
        from .errors import TruncatedFileError

        raise TruncatedFileError(
            f"{path}: truncated dataset: expected {expected_total} bytes "
            f"({n} frames of {record} bytes), file has {len(raw)}"
        )
    binio.verify_trailing_crc(path, raw)
    samples = np.empty((n, t, ch), dtype=np.float32)
    labels = np.empty(n, dtype=np.uint8)
    snrs = np.empty(n, dtype=np.int8)
    for i in range(n):
        labels[i] = up.u8("label")
        snrs[i] = up.i8("snr")
        raw = up.take(t * ch * 4, f"frame {i} samples")
        samples[i] = np.frombuffer(raw, dtype="<f4").reshape(t, ch)
    metadata = {}
    try:
        with open(path + ".json") as fh:
            metadata = json.load(fh)
    except FileNotFoundError:
        pass
    split_tag = metadata.get("split_tag", "unknown")
    return Dataset(samples, labels, snrs, split_tag, metadata)
