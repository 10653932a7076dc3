"""Uncompressed video sources, bilinear resizing and cuboid extraction.

Two sources are supported so the pipeline needs no codec dependencies:

* RGBV container: ASCII magic ``RGBV1\\n``, one ASCII header line
  ``width height fps frame_count\\n`` (fps may be decimal), then frame_count
  raw frames of height*width interleaved R,G,B bytes, no padding.
* Frame directory: binary PPM (P6, maxval 255) files named by zero-padded
  frame index, e.g. 000000.ppm, 000001.ppm, ...

Frames come back as uint8 (H, W, 3) arrays; reads are stateless, the same
index always yields the same bytes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CuboidError, VideoFormatError

RGBV_MAGIC = b"RGBV1\n"


class VideoSource:
    """Common surface: width/height/fps/frame_count plus frame(i)."""

    video_id: str
    width: int
    height: int
    fps: float
    frame_count: int

    def frame(self, index: int) -> np.ndarray:
        raise NotImplementedError

    def _check_index(self, index: int):
        if not 0 <= index < self.frame_count:
            raise VideoFormatError(
                f"{self.video_id}: frame index {index} outside [0, {self.frame_count})"
            )


class RgbvVideo(VideoSource):
    def __init__(self, path):
        path = Path(path)
        self.video_id = path.stem
        with open(path, "rb") as fh:
            magic = fh.read(len(RGBV_MAGIC))
            if magic != RGBV_MAGIC:
                raise VideoFormatError(f"{path}: bad magic {magic!r}, expected {RGBV_MAGIC!r}")
            header = bytearray()
            while not header.endswith(b"\n"):
                b = fh.read(1)
                if not b:
                    raise VideoFormatError(f"{path}: truncated header")
                header += b
                if len(header) > 256:
                    raise VideoFormatError(f"{path}: header line too long")
            offset = fh.tell()
        fields = header.decode("ascii", "replace").split()
        if len(fields) != 4:
            raise VideoFormatError(f"{path}: header must be 'width height fps frame_count'")
        try:
            self.width, self.height = int(fields[0]), int(fields[1])
            self.fps = float(fields[2])
            self.frame_count = int(fields[3])
        except ValueError:
            raise VideoFormatError(f"{path}: non-numeric header field in {fields}") from None
        if self.width < 1 or self.height < 1:
            raise VideoFormatError(f"{path}: zero or negative frame extents")
        if self.fps <= 0 or self.frame_count < 0:
            raise VideoFormatError(f"{path}: fps must be > 0 and frame_count >= 0")

        expected = offset + self.frame_count * self.height * self.width * 3
        actual = os.path.getsize(path)
        if actual < expected:
            raise VideoFormatError(f"{path}: truncated payload ({actual} < {expected} bytes)")
        if actual > expected:
            raise VideoFormatError(f"{path}: trailing data ({actual} > {expected} bytes)")
        self._path = path
        self._frames = (
            np.memmap(path, dtype=np.uint8, mode="r", offset=offset,
                      shape=(self.frame_count, self.height, self.width, 3))
            if self.frame_count
            else np.zeros((0, self.height, self.width, 3), dtype=np.uint8)
        )

    def frame(self, index: int) -> np.ndarray:
        self._check_index(index)
        return np.asarray(self._frames[index])


def open_rgbv(path) -> RgbvVideo:
    return RgbvVideo(path)


def write_rgbv(path, frames: np.ndarray, fps: float) -> None:
    """Write an (N, H, W, 3) uint8 array as an RGBV file."""
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise VideoFormatError(f"frames must be (N, H, W, 3), got {frames.shape}")
    n, h, w, _ = frames.shape
    fps_s = str(int(fps)) if float(fps).is_integer() else repr(float(fps))
    with open(path, "wb") as fh:
        fh.write(RGBV_MAGIC)
        fh.write(f"{w} {h} {fps_s} {n}\n".encode("ascii"))
        fh.write(frames.tobytes())


def _ppm_tokens(data: bytes, path, count: int):
    """First `count` whitespace-separated PNM header tokens ('#' comments skipped);
    returns (tokens, payload_offset)."""
    tokens, i, n = [], 0, len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] != ord("\n"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i] != ord("#"):
            i += 1
        if start == i:
            raise VideoFormatError(f"{path}: truncated PPM header")
        tokens.append(data[start:i])
    if i >= n or not data[i : i + 1].isspace():
        raise VideoFormatError(f"{path}: missing whitespace after PPM header")
    return tokens, i + 1


@dataclass
class _PpmFrame:
    path: Path
    offset: int


class FrameDirVideo(VideoSource):
    def __init__(self, path, fps: float = 120.0):
        path = Path(path)
        self.video_id = path.name
        self.fps = float(fps)
        if self.fps <= 0:
            raise VideoFormatError(f"{path}: fps must be > 0")
        entries = sorted(p for p in path.iterdir() if p.suffix.lower() == ".ppm")
        if not entries:
            raise VideoFormatError(f"{path}: no .ppm frames found")
        by_index: dict[int, Path] = {}
        for p in entries:
            if not p.stem.isdigit():
                raise VideoFormatError(f"{p}: frame name is not a zero-padded index")
            idx = int(p.stem, 10)
            if idx in by_index:
                raise VideoFormatError(f"{p}: duplicate frame index {idx}")
            by_index[idx] = p
        missing = sorted(set(range(len(by_index))) - set(by_index))
        if missing:
            raise VideoFormatError(f"{path}: missing frame indices {missing[:5]}")

        self.width = self.height = 0
        self._frames: list[_PpmFrame] = []
        for idx in range(len(by_index)):
            p = by_index[idx]
            head = p.read_bytes()
            tokens, offset = _ppm_tokens(head, p, 4)
            if tokens[0] != b"P6":
                raise VideoFormatError(f"{p}: not a binary P6 PPM (magic {tokens[0]!r})")
            try:
                w, h, maxval = (int(t) for t in tokens[1:4])
            except ValueError:
                raise VideoFormatError(f"{p}: non-numeric PPM header field") from None
            if maxval != 255:
                raise VideoFormatError(f"{p}: unsupported maxval {maxval}, only 255")
            if w < 1 or h < 1:
                raise VideoFormatError(f"{p}: zero frame extents")
            if idx == 0:
                self.width, self.height = w, h
            elif (w, h) != (self.width, self.height):
                raise VideoFormatError(
                    f"{p}: mixed extents {w}x{h}, expected {self.width}x{self.height}"
                )
            if len(head) - offset < w * h * 3:
                raise VideoFormatError(f"{p}: truncated pixel payload")
            self._frames.append(_PpmFrame(p, offset))
        self.frame_count = len(self._frames)

    def frame(self, index: int) -> np.ndarray:
        self._check_index(index)
        rec = self._frames[index]
        data = rec.path.read_bytes()
        px = np.frombuffer(data, dtype=np.uint8, count=self.height * self.width * 3,
                           offset=rec.offset)
        return px.reshape(self.height, self.width, 3)


def open_frame_dir(path, fps: float = 120.0) -> FrameDirVideo:
    return FrameDirVideo(path, fps)


def resize_bilinear(frame: np.ndarray, out_size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel centers, channels independent.

    Source coordinate for output index d is (d + 0.5) * in/out - 0.5, clamped
    to the valid range; returns float64, exactly the input when sizes match.
    """
    oh, ow = out_size
    if frame.ndim != 3:
        raise VideoFormatError(f"expected (H, W, C) frame, got shape {frame.shape}")
    h, w, _ = frame.shape
    if min(h, w, oh, ow) < 1:
        raise VideoFormatError(f"extents must be >= 1, got {h}x{w} -> {oh}x{ow}")
    src = frame.astype(np.float64)
    if (h, w) == (oh, ow):
        return src

    sy = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[:, None, None]
    wx = (sx - x0)[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


@dataclass
class Cuboid:
    """Model input block: float32 values (3, length, size, size) in [0, 1]."""

    values: np.ndarray
    origin: tuple[str, int]


def extract_cuboid(src: VideoSource, start: int, length: int = 98,
                   size: int = 120) -> Cuboid:
    """Stack frames [start, start+length), resized to size*size and scaled by
    1/255, channel-major. The window must fit inside the video."""
    if length < 1 or size < 1:
        raise CuboidError(f"length and size must be >= 1, got {length}/{size}")
    if start < 0 or start + length > src.frame_count:
        raise CuboidError(
            f"{src.video_id}: window [{start}, {start + length}) out of range "
            f"for {src.frame_count} frames"
        )
    values = np.empty((3, length, size, size), dtype=np.float32)
    for t in range(length):
        resized = resize_bilinear(src.frame(start + t), (size, size))
        values[:, t] = resized.transpose(2, 0, 1) / 255.0
    return Cuboid(values, (src.video_id, start))


def clamped_start(frame_count: int, start: int, length: int) -> int:
    """Right-clamp a window start so [start, start+length) fits; the video must
    be at least `length` frames long."""
    if frame_count < length:
        raise CuboidError(f"video has {frame_count} frames, shorter than window {length}")
    return max(0, min(start, frame_count - length))
