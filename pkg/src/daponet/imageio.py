"""Binary PPM (P6) I/O, letterbox preprocessing, and box drawing."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PAD_VALUE = 114


class ImageError(ValueError):
    pass


class PpmHeaderError(ImageError):
    pass


class PpmTruncatedError(ImageError):
    pass


class PpmMaxValueError(ImageError):
    pass


def _tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    toks, i = [], 0
    n = len(blob)
    while len(toks) < count:
        while i < n and blob[i:i + 1].isspace():
            i += 1
        if i < n and blob[i:i + 1] == b"#":
            while i < n and blob[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise PpmHeaderError("header ends early")
        j = i
        while j < n and not blob[j:j + 1].isspace() and blob[j:j + 1] != b"#":
            j += 1
        toks.append(blob[i:j])
        i = j
    return toks, i


def decode_ppm(blob: bytes) -> tuple[np.ndarray, int]:
    """Return (H x W x 3 uint8 array, maxval)."""
    if blob[:2] != b"P6":
        raise PpmHeaderError("not a binary PPM (missing P6 magic)")
    (ws, hs, ms), end = _tokens(blob[2:], 3)
    try:
        w, h, maxval = int(ws), int(hs), int(ms)
    except ValueError:
        raise PpmHeaderError(f"non-numeric header fields {ws!r} {hs!r} {ms!r}") from None
    if w <= 0 or h <= 0:
        raise PpmHeaderError(f"bad image size {w}x{h}")
    if not 0 < maxval < 65536:
        raise PpmHeaderError(f"bad max value {maxval}")
    if maxval > 255:
        raise PpmMaxValueError(f"16-bit PPM (max value {maxval}) is not supported")
    start = 2 + end + 1          # exactly one whitespace byte after maxval
    need = w * h * 3
    data = blob[start:start + need]
    if len(data) < need:
        raise PpmTruncatedError(f"payload has {len(data)} bytes, expected {need}")
    return np.frombuffer(data, np.uint8).reshape(h, w, 3), maxval


def read_ppm(path) -> np.ndarray:
    img, maxval = decode_ppm(Path(path).read_bytes())
    if maxval != 255:
        img = np.round(img.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return img


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode() + img.tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    atomic_write(path, encode_ppm(img))


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class LetterboxMeta:
    scale: float
    pad: tuple[int, int]              # (left, top)
    original_size: tuple[int, int]    # (H, W)

    def to_original(self, box) -> tuple[float, float, float, float]:
        left, top = self.pad
        h, w = self.original_size
        x1 = (box[0] - left) / self.scale
        y1 = (box[1] - top) / self.scale
        x2 = (box[2] - left) / self.scale
        y2 = (box[3] - top) / self.scale
        return (min(max(x1, 0.0), w), min(max(y1, 0.0), h),
                min(max(x2, 0.0), w), min(max(y2, 0.0), h))

    def to_letterbox(self, box) -> tuple[float, float, float, float]:
        left, top = self.pad
        s = self.scale
        return (box[0] * s + left, box[1] * s + top, box[2] * s + left, box[3] * s + top)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of an H x W x C float array."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = src.clip(0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    rows = img[y0] * (1 - fy)[:, None, None] + img[y1] * fy[:, None, None]
    return rows[:, x0] * (1 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]


def letterbox(img: np.ndarray, size=(640, 640)) -> tuple[np.ndarray, LetterboxMeta]:
    """Aspect-preserving resize into ``size`` with gray padding; returns 1 x 3 x H x W in [0, 1]."""
    th, tw = size
    h, w = img.shape[:2]
    s = min(th / h, tw / w)
    nh, nw = min(th, int(round(h * s))), min(tw, int(round(w * s)))
    top, left = (th - nh) // 2, (tw - nw) // 2
    canvas = np.full((th, tw, 3), PAD_VALUE / 255.0, dtype=np.float64)
    canvas[top:top + nh, left:left + nw] = resize_bilinear(img.astype(np.float64) / 255.0, nh, nw)
    x = canvas.transpose(2, 0, 1)[None].astype(np.float32)
    return np.ascontiguousarray(x), LetterboxMeta(float(s), (left, top), (h, w))


def load_image(path, size=(640, 640)) -> tuple[np.ndarray, LetterboxMeta]:
    return letterbox(read_ppm(path), size)


PALETTE = np.array([
    (255, 56, 56), (255, 157, 151), (255, 112, 31), (255, 178, 29), (207, 210, 49),
    (72, 249, 10), (146, 204, 23), (61, 219, 134), (26, 147, 52), (0, 212, 187),
    (44, 153, 168), (0, 194, 255), (52, 69, 147), (100, 115, 255), (0, 24, 236),
    (132, 56, 255), (82, 0, 133), (203, 56, 255), (255, 149, 200), (255, 55, 199),
], dtype=np.uint8)


def draw_boxes(img: np.ndarray, dets, thickness: int = 2) -> np.ndarray:
    out = np.array(img, dtype=np.uint8, copy=True)
    h, w = out.shape[:2]
    for d in dets:
        color = PALETTE[d.class_id % len(PALETTE)]
        x1, y1, x2, y2 = (int(round(v)) for v in d.box)
        x1, x2 = max(0, min(x1, w - 1)), max(0, min(x2, w - 1))
        y1, y2 = max(0, min(y1, h - 1)), max(0, min(y2, h - 1))
        t = thickness
        out[y1:min(y1 + t, h), x1:x2 + 1] = color
        out[max(y2 - t + 1, 0):y2 + 1, x1:x2 + 1] = color
        out[y1:y2 + 1, x1:min(x1 + t, w)] = color
        out[y1:y2 + 1, max(x2 - t + 1, 0):x2 + 1] = color
    return out
