"""Event streams, frame binning, corruption models, and synthetic tasks.

Raw data is a stream of timestamped events at spatial coordinates with a
polarity channel.  Frames are built by uniform time binning with per-voxel
count saturation, giving values in [0, 1] (binary at the default saturation
of one event).  Corruptions act on binned frames and are pure functions of
(frames, config), so a fixed seed yields the same corrupted copy for every
model evaluated under it.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EVENT_DROP = "event_drop"
TIME_JITTER = "time_jitter"
BIN_DROP = "bin_drop"
CORRUPTION_FAMILIES = (EVENT_DROP, TIME_JITTER, BIN_DROP)

# Shared severity grid for robustness sweeps.
SEVERITY_GRID = (0.0, 0.1, 0.2, 0.3, 0.4)


@dataclass
class EventStream:
    """Timestamped events on a 1-d coordinate grid with polarity channels."""

    times: np.ndarray  # (n_events,), in [0, duration]
    coords: np.ndarray  # (n_events,), integer coordinates
    polarities: np.ndarray  # (n_events,), integer channel ids
    duration: float
    n_coords: int
    n_polarities: int = 2

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        self.coords = np.asarray(self.coords, dtype=np.int64)
        self.polarities = np.asarray(self.polarities, dtype=np.int64)
        n = self.times.shape[0]
        if self.coords.shape != (n,) or self.polarities.shape != (n,):
            raise ValueError("times, coords, and polarities must have equal lengths")
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if n and (self.times.min() < 0.0 or self.times.max() > self.duration):
            raise ValueError("event timestamps must lie in [0, duration]")
        if n and (self.coords.min() < 0 or self.coords.max() >= self.n_coords):
            raise ValueError("event coordinates out of range")
        if n and (self.polarities.min() < 0 or self.polarities.max() >= self.n_polarities):
            raise ValueError("event polarities out of range")

    @property
    def n_events(self) -> int:
        return self.times.shape[0]

    @property
    def frame_width(self) -> int:
        """Flattened frame width: one block of coordinates per polarity."""
        return self.n_coords * self.n_polarities

    def canonical_sort(self) -> "EventStream":
        """Stable order by (time, coordinate, polarity)."""
        order = np.lexsort((self.polarities, self.coords, self.times))
        return EventStream(
            self.times[order],
            self.coords[order],
            self.polarities[order],
            self.duration,
            self.n_coords,
            self.n_polarities,
        )


def bin_events(stream: EventStream, n_bins: int, saturation: int = 1) -> np.ndarray:
    """Uniform time binning into (n_bins, frame_width) frames in [0, 1].

    Per-voxel counts saturate at ``saturation`` and are divided by it, so
    the default gives binary frames.  An event at exactly ``t = duration``
    lands in the last bin.  Channel layout is polarity-major: flat index
    ``polarity * n_coords + coordinate``.
    """
    if n_bins < 1:
        raise ValueError("need at least one bin")
    if saturation < 1:
        raise ValueError("saturation must be a positive count")
    bins = np.minimum((stream.times / stream.duration * n_bins).astype(np.int64), n_bins - 1)
    flat = stream.polarities * stream.n_coords + stream.coords
    counts = np.zeros((n_bins, stream.frame_width))
    np.add.at(counts, (bins, flat), 1.0)
    return np.minimum(counts, float(saturation)) / float(saturation)


# ---------------------------------------------------------------------------
# Corruption models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorruptionConfig:
    """One corruption: a family, a severity in [0, 1], and a seed."""

    family: str
    severity: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in CORRUPTION_FAMILIES:
            raise ValueError(f"unknown corruption family {self.family!r}")
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity must lie in [0, 1], got {self.severity}")


def corrupt(frames: np.ndarray, cfg: CorruptionConfig) -> np.ndarray:
    """Corrupted copy of binned frames; pure function of (frames, cfg).

    Families:
      - event_drop: each (bin, channel) cell is zeroed independently with
        probability ``severity`` — frames that are already zero stay zero.
      - time_jitter: each whole bin is displaced by one step (random sign,
        clipped at the ends) with probability ``severity``; displaced and
        resident content accumulates and is re-clipped to [0, 1].
      - bin_drop: each whole bin is zeroed with probability ``severity``.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"frames must be (n_bins, width), got shape {x.shape}")
    rng = np.random.default_rng(cfg.seed)
    p = cfg.severity
    if cfg.family == EVENT_DROP:
        keep = rng.random(x.shape) >= p
        return x * keep
    if cfg.family == BIN_DROP:
        keep = rng.random(x.shape[0]) >= p
        return x * keep[:, None]
    # time_jitter
    n_bins = x.shape[0]
    moved = rng.random(n_bins) < p
    signs = rng.integers(0, 2, size=n_bins) * 2 - 1
    dest = np.arange(n_bins)
    dest[moved] = np.clip(dest[moved] + signs[moved], 0, n_bins - 1)
    out = np.zeros_like(x)
    np.add.at(out, dest, x)
    return np.minimum(out, 1.0)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Binned frame sequences with labels; values validated to [0, 1]."""

    frames: np.ndarray  # (n, n_steps, width)
    labels: np.ndarray  # (n,)
    n_classes: int

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (n, n_steps, width), got shape {self.frames.shape}")
        if self.labels.shape != (self.frames.shape[0],):
            raise ValueError("need one label per sequence")
        if self.frames.size and (self.frames.min() < 0.0 or self.frames.max() > 1.0):
            raise ValueError("frame values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels out of range")

    @property
    def n_samples(self) -> int:
        return self.frames.shape[0]

    def subset(self, idx: np.ndarray | Sequence[int]) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.frames[idx], self.labels[idx], self.n_classes)


@dataclass
class SplitDataset:
    train: Dataset
    val: Dataset
    test: Dataset


def measured_input_bound(frames: np.ndarray) -> float:
    """Largest per-step frame 2-norm over a whole array of sequences."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    return float(np.sqrt((x**2).sum(axis=2)).max())


BLOCK_STYLE = "blocks"
RATE_STYLE = "rate"


@dataclass(frozen=True)
class SynthTaskConfig:
    """Synthetic event-stream classification task.

    Two generative styles.  ``"blocks"``: class ``c`` emits a burst of
    events on its own coordinate block during its own window of time bins,
    over a low background — classes are spatially separable.  ``"rate"``:
    every class is active everywhere and classes differ only in event rate
    (linearly spaced between ``rate_background`` and ``rate_active``), so
    the only usable signal is overall activity level — the regime where
    graded sub-threshold codes solve the task but all-or-nothing spiking
    needs thresholds placed between the class operating points.

    Rates are mean event counts per (bin, coordinate, polarity) cell.
    """

    n_classes: int = 2
    n_steps: int = 10
    n_coords: int = 32
    n_polarities: int = 2
    n_train: int = 256
    n_val: int = 128
    n_test: int = 128
    rate_active: float = 3.0
    rate_background: float = 0.05
    duration: float = 1.0
    style: str = BLOCK_STYLE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.n_coords < self.n_classes or self.n_steps < self.n_classes:
            raise ValueError("need at least one coordinate and one bin per class")
        if self.style not in (BLOCK_STYLE, RATE_STYLE):
            raise ValueError(f"unknown task style {self.style!r}")
        if self.rate_background < 0.0:
            raise ValueError("rates are mean event counts and cannot be negative")
        if self.rate_active <= self.rate_background:
            raise ValueError("active rate must exceed the background rate")

    @property
    def frame_width(self) -> int:
        return self.n_coords * self.n_polarities


def _synth_sample(cfg: SynthTaskConfig, label: int, rng: np.random.Generator) -> EventStream:
    """Draw one labeled event stream from the task's generative model."""
    if cfg.style == RATE_STYLE:
        span = cfg.rate_active - cfg.rate_background
        rate = cfg.rate_background + span * (label + 1) / cfg.n_classes
        rates = np.full((cfg.n_steps, cfg.n_polarities, cfg.n_coords), rate)
    else:
        rates = np.full((cfg.n_steps, cfg.n_polarities, cfg.n_coords), cfg.rate_background)
        coord_block = np.array_split(np.arange(cfg.n_coords), cfg.n_classes)[label]
        bin_block = np.array_split(np.arange(cfg.n_steps), cfg.n_classes)[label]
        rates[np.ix_(bin_block, np.arange(cfg.n_polarities), coord_block)] = cfg.rate_active
    counts = rng.poisson(rates)

    bin_idx, pol_idx, coord_idx = np.nonzero(counts)
    reps = counts[bin_idx, pol_idx, coord_idx]
    bins = np.repeat(bin_idx, reps)
    pols = np.repeat(pol_idx, reps)
    coords = np.repeat(coord_idx, reps)
    bin_width = cfg.duration / cfg.n_steps
    times = (bins + rng.random(bins.size)) * bin_width
    return EventStream(
        times=np.minimum(times, cfg.duration),
        coords=coords,
        polarities=pols,
        duration=cfg.duration,
        n_coords=cfg.n_coords,
        n_polarities=cfg.n_polarities,
    ).canonical_sort()


def _synth_split(cfg: SynthTaskConfig, n: int, split_id: int) -> Dataset:
    rng = np.random.default_rng([cfg.seed, split_id])
    labels = rng.permutation(np.arange(n) % cfg.n_classes)
    frames = np.empty((n, cfg.n_steps, cfg.frame_width))
    for i in range(n):
        frames[i] = bin_events(_synth_sample(cfg, int(labels[i]), rng), cfg.n_steps)
    return Dataset(frames, labels, cfg.n_classes)


def synth_task(cfg: SynthTaskConfig) -> SplitDataset:
    """Generate disjoint train/val/test splits (separate seeded streams)."""
    return SplitDataset(
        train=_synth_split(cfg, cfg.n_train, 0),
        val=_synth_split(cfg, cfg.n_val, 1),
        test=_synth_split(cfg, cfg.n_test, 2),
    )


# ---------------------------------------------------------------------------
# Dataset container
#
# Little-endian binary layout (deterministic, no timestamps):
#   magic     4s  b"SNND"
#   version   u32 (currently 1)
#   n         u32 number of sequences
#   n_steps   u32
#   width     u32
#   n_classes u32
#   labels    n * i64
#   frames    n * n_steps * width * f64, C order
# ---------------------------------------------------------------------------

_DATASET_MAGIC = b"SNND"
_DATASET_VERSION = 1


def save_dataset(path: str, ds: Dataset) -> None:
    """Write a dataset to a deterministic binary file."""
    n, n_steps, width = ds.frames.shape
    buf = io.BytesIO()
    buf.write(_DATASET_MAGIC)
    buf.write(struct.pack("<IIIII", _DATASET_VERSION, n, n_steps, width, ds.n_classes))
    buf.write(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())
    buf.write(np.ascontiguousarray(ds.frames, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_frames(path: str) -> Dataset:
    """Read a dataset written by :func:`save_dataset`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DATASET_MAGIC:
            raise ValueError(f"not a dataset file (magic {magic!r})")
        version, n, n_steps, width, n_classes = struct.unpack("<IIIII", fh.read(20))
        if version != _DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        labels_raw = fh.read(8 * n)
        frames_raw = fh.read(8 * n * n_steps * width)
        if len(labels_raw) != 8 * n or len(frames_raw) != 8 * n * n_steps * width:
            raise ValueError("dataset truncated")
        if fh.read(1):
            raise ValueError("trailing bytes after dataset payload")
    labels = np.frombuffer(labels_raw, dtype="<i8").copy()
    frames = np.frombuffer(frames_raw, dtype="<f8").reshape(n, n_steps, width).copy()
    return Dataset(frames, labels, n_classes)
