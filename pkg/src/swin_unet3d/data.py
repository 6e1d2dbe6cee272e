"""Traffic-movie data: synthetic generation, slicing, augmentation, file I/O.

A movie is an 8-bit (frames, H, W, 8) volume at 5 minutes per frame. The
eight channels are volume then average speed for each diagonal heading:

    0: volume NE   1: volume SE   2: volume SW   3: volume NW
    4: speed  NE   5: speed  SE   6: speed  SW   7: speed  NW

A training sample is one hour of history (12 frames) paired with targets 5,
10, 15, 30, 45 and 60 minutes ahead, i.e. frame offsets +1, +2, +3, +6, +9
and +12 after the last input frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "TrafficMovie",
    "TrafficSample",
    "FormatError",
    "HEADINGS",
    "HORIZON_OFFSETS",
    "HORIZON_MINUTES",
    "N_INPUT_FRAMES",
    "N_TARGET_FRAMES",
    "generate_synthetic",
    "slice_samples",
    "flip_augment",
    "normalize",
    "denormalize",
    "read_movie",
    "write_movie",
]

HEADINGS = ("NE", "SE", "SW", "NW")
N_CHANNELS = 8
N_INPUT_FRAMES = 12
N_TARGET_FRAMES = 6
HORIZON_OFFSETS = (1, 2, 3, 6, 9, 12)  # frames after the last input frame
HORIZON_MINUTES = (5, 10, 15, 30, 45, 60)
FRAMES_PER_SAMPLE = N_INPUT_FRAMES + HORIZON_OFFSETS[-1]  # 24

# channel permutations induced by geometric flips (volume and speed together)
_HFLIP_CHANNELS = np.array([3, 2, 1, 0, 7, 6, 5, 4])  # NE<->NW, SE<->SW
_VFLIP_CHANNELS = np.array([1, 0, 3, 2, 5, 4, 7, 6])  # NE<->SE, NW<->SW

MOVIE_MAGIC = b"T4CM"
MOVIE_VERSION = 1


class FormatError(ValueError):
    """Corrupt or mistyped movie file."""


@dataclass(frozen=True)
class TrafficMovie:
    """Row-major (frame, h, w, channel) volume of 8-bit traffic states."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 4 or v.shape[-1] != N_CHANNELS:
            raise FormatError(f"movie values must be (F, H, W, {N_CHANNELS}), got {v.shape}")
        if v.dtype != np.uint8:
            raise FormatError(f"movie values must be uint8, got {v.dtype}")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class TrafficSample:
    """One (12-frame input, 6-frame target) pair in (frame, channel, H, W) layout."""

    input: np.ndarray  # float32 (12, 8, H, W), raw 0..255 values
    target: np.ndarray  # float32 (6, 8, H, W)
    origin: tuple[int, int] = (0, 0)  # (movie id, start frame)
    flips: tuple[bool, bool] = (False, False)  # (horizontal, vertical)


def generate_synthetic(
    height: int,
    width: int,
    frames: int,
    seed: int,
    n_roads: int | None = None,
    n_blobs: int = 5,
) -> TrafficMovie:
    """Deterministic synthetic movie: a sparse road grid with advecting congestion.

    A static road mask gates everything, and a handful of Gaussian congestion
    blobs drift across it with constant velocity (wrapping at the borders), so
    consecutive frames are strongly correlated and the future is predictable
    from the past.
    """
    if height < 16 or width < 16:
        raise ValueError(f"movie extent {height}x{width} must be at least 16x16")
    if frames < FRAMES_PER_SAMPLE:
        raise ValueError(f"need at least {FRAMES_PER_SAMPLE} frames, got {frames}")
    rng = np.random.default_rng(seed)

    mask = np.zeros((height, width), dtype=bool)
    if n_roads is None:
        n_roads = max(4, (height + width) // 12)
    for _ in range(n_roads):
        kind = rng.integers(3)
        if kind == 0:  # horizontal
            r = int(rng.integers(height))
            mask[r, :] = True
        elif kind == 1:  # vertical
            c = int(rng.integers(width))
            mask[:, c] = True
        else:  # diagonal
            r0 = int(rng.integers(height))
            sign = 1 if rng.integers(2) else -1
            cols = np.arange(width)
            rows = (r0 + sign * cols) % height
            mask[rows, cols] = True

    # blob state: position, velocity, spread, volume amplitude, speed level
    pos = rng.uniform([0, 0], [height, width], size=(n_blobs, 2))
    vel = rng.uniform(0.2, 1.0, size=(n_blobs, 2)) * rng.choice([-1.0, 1.0], size=(n_blobs, 2))
    sigma = rng.uniform(1.5, 3.5, size=n_blobs)
    vol_amp = rng.uniform(120.0, 240.0, size=n_blobs)
    speed_lvl = rng.uniform(60.0, 200.0, size=n_blobs)
    # heading from velocity sign: rows grow southward, cols grow eastward
    south = vel[:, 0] > 0
    east = vel[:, 1] > 0
    heading = np.where(south, np.where(east, 1, 2), np.where(east, 0, 3))

    rows = np.arange(height).reshape(-1, 1)
    cols = np.arange(width).reshape(1, -1)
    movie = np.zeros((frames, height, width, N_CHANNELS), dtype=np.uint8)
    for f in range(frames):
        vol = np.zeros((height, width, 4), dtype=np.float64)
        spd = np.zeros((height, width, 4), dtype=np.float64)
        centers = pos + vel * f
        for b in range(n_blobs):
            dr = np.abs(rows - centers[b, 0] % height)
            dr = np.minimum(dr, height - dr)  # wrapped distance
            dc = np.abs(cols - centers[b, 1] % width)
            dc = np.minimum(dc, width - dc)
            g = np.exp(-(dr * dr + dc * dc) / (2.0 * sigma[b] ** 2))
            h = int(heading[b])
            vol[:, :, h] += vol_amp[b] * g
            spd[:, :, h] = np.maximum(spd[:, :, h], speed_lvl[b] * g)
        frame = np.concatenate([vol, spd], axis=-1)
        frame *= mask[:, :, None]
        movie[f] = np.clip(np.rint(frame), 0, 255).astype(np.uint8)
    return TrafficMovie(movie)


def slice_samples(movie: TrafficMovie, movie_id: int = 0) -> list[TrafficSample]:
    """All (input, target) pairs; start frames run 0 .. frames - 24."""
    out: list[TrafficSample] = []
    data = movie.values
    for t0 in range(movie.frames - FRAMES_PER_SAMPLE + 1):
        inp = data[t0 : t0 + N_INPUT_FRAMES]
        tgt = data[[t0 + N_INPUT_FRAMES - 1 + k for k in HORIZON_OFFSETS]]
        out.append(
            TrafficSample(
                input=np.ascontiguousarray(inp.transpose(0, 3, 1, 2), dtype=np.float32),
                target=np.ascontiguousarray(tgt.transpose(0, 3, 1, 2), dtype=np.float32),
                origin=(movie_id, t0),
            )
        )
    return out


def _flip_array(a: np.ndarray, horizontal: bool, vertical: bool, permute: bool) -> np.ndarray:
    out = a
    if horizontal:
        out = out[:, :, :, ::-1]
        if permute:
            out = out[:, _HFLIP_CHANNELS]
    if vertical:
        out = out[:, :, ::-1, :]
        if permute:
            out = out[:, _VFLIP_CHANNELS]
    return np.ascontiguousarray(out)


def flip_augment(
    sample: TrafficSample,
    horizontal: bool,
    vertical: bool,
    permute_channels: bool = False,
) -> TrafficSample:
    """Flip input and target together along W and/or H.

    With ``permute_channels`` the heading channel pairs are swapped to stay
    physically consistent with the mirrored geometry; without it the channels
    are left untouched.
    """
    if not horizontal and not vertical:
        return sample
    return replace(
        sample,
        input=_flip_array(sample.input, horizontal, vertical, permute_channels),
        target=_flip_array(sample.target, horizontal, vertical, permute_channels),
        flips=(sample.flips[0] ^ horizontal, sample.flips[1] ^ vertical),
    )


def normalize(x: np.ndarray, enabled: bool = False) -> np.ndarray:
    """Map raw 0..255 values to 0..1 when enabled; plain float cast otherwise."""
    x = np.asarray(x, dtype=np.float32)
    return x / np.float32(255.0) if enabled else x


def denormalize(y: np.ndarray, enabled: bool = False) -> np.ndarray:
    """Invert :func:`normalize`, clamping to [0, 255] and rounding half-to-even."""
    y = np.asarray(y, dtype=np.float64)
    if enabled:
        y = y * 255.0
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


def write_movie(path, movie: TrafficMovie) -> None:
    f, h, w = movie.frames, movie.height, movie.width
    header = MOVIE_MAGIC + struct.pack("<5I", MOVIE_VERSION, f, h, w, N_CHANNELS)
    Path(path).write_bytes(header + movie.values.tobytes())


def read_movie(path) -> TrafficMovie:
    buf = Path(path).read_bytes()
    if len(buf) < 24:
        raise FormatError(f"truncated header: expected 24 bytes, got {len(buf)}")
    if buf[:4] != MOVIE_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r} at byte 0, expected {MOVIE_MAGIC!r}")
    version, f, h, w, c = struct.unpack_from("<5I", buf, 4)
    if version != MOVIE_VERSION:
        raise FormatError(f"unsupported movie version {version} at byte 4")
    if c != N_CHANNELS:
        raise FormatError(f"expected {N_CHANNELS} channels, got {c} at byte 20")
    expected = 24 + f * h * w * c
    if len(buf) != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes, got {len(buf)}")
    values = np.frombuffer(buf, dtype=np.uint8, offset=24).reshape(f, h, w, c).copy()
    return TrafficMovie(values)
