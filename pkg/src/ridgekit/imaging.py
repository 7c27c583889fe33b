"""Image containers, PGM I/O and the four-stage preprocessing chain.

Stages: histogram equalization and block-FFT enhancement, block-mean
binarization, gradient segmentation, and two-subiteration parallel thinning.
Arrays are row-major ``(height, width)``; intensities are 0=black .. 255=white.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InputFormatError, SegmentationError

MIN_PIPELINE_SIDE = 32


@dataclass(eq=False)
class GrayImage:
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise ValueError("GrayImage needs a 2-D array")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def check_pipeline_size(self):
        if self.width < MIN_PIPELINE_SIDE or self.height < MIN_PIPELINE_SIDE:
            raise InputFormatError(
                f"image {self.width}x{self.height} is smaller than "
                f"{MIN_PIPELINE_SIDE}x{MIN_PIPELINE_SIDE}"
            )


@dataclass(eq=False)
class BinaryImage:
    """Ridge map: 1 = ridge, 0 = valley. ``roi`` marks in-fingerprint pixels."""

    bits: np.ndarray
    roi: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.bits = (np.asarray(self.bits) != 0).astype(np.uint8)
        if self.roi is not None:
            self.roi = np.asarray(self.roi, dtype=bool)
            if self.roi.shape != self.bits.shape:
                raise ValueError("roi shape does not match image")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def __eq__(self, other):
        if not isinstance(other, BinaryImage):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def to_gray(self) -> GrayImage:
        # ridge drawn black, as in the source images
        return GrayImage(np.where(self.bits == 1, 0, 255).astype(np.uint8))


# ---------------------------------------------------------------- PGM I/O


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise InputFormatError("unexpected end of PGM header", offset=start)
    return data[start:pos], start, pos


def decode_pgm(data: bytes) -> GrayImage:
    if data[:2] != b"P5":
        raise InputFormatError(f"unsupported image magic {data[:2]!r}, expected P5", offset=0)
    pos = 2
    values, starts = [], []
    for name in ("width", "height", "maxval"):
        tok, start, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise InputFormatError(f"bad {name} {tok!r} in PGM header", offset=start)
        values.append(int(tok))
        starts.append(start)
    width, height, maxval = values
    if maxval != 255:
        raise InputFormatError(f"maxval {maxval} not supported (need 255)", offset=starts[2])
    if width <= 0 or height <= 0:
        raise InputFormatError("zero image dimension", offset=starts[0] if width <= 0 else starts[1])
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise InputFormatError("missing whitespace after PGM header", offset=pos)
    pos += 1
    need = width * height
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise InputFormatError(
            f"truncated payload: {len(payload)} of {need} bytes", offset=pos + len(payload)
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
    return GrayImage(pixels)


def encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def load_pgm(path) -> GrayImage:
    return decode_pgm(Path(path).read_bytes())


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_pgm(img: GrayImage | BinaryImage, path):
    if isinstance(img, BinaryImage):
        img = img.to_gray()
    atomic_write_bytes(path, encode_pgm(img))


# ---------------------------------------------------------------- enhancement


def equalize_histogram(img: GrayImage) -> GrayImage:
    hist = np.bincount(img.pixels.ravel(), minlength=256)
    cdf = np.cumsum(hist) / img.pixels.size
    # round half up, so that 127.5 -> 128
    lut = np.floor(255.0 * cdf + 0.5).astype(np.uint8)
    return GrayImage(lut[img.pixels])


def _pad_to(a: np.ndarray, block: int, value=0) -> np.ndarray:
    h, w = a.shape
    ph = (-h) % block
    pw = (-w) % block
    if ph == 0 and pw == 0:
        return a
    return np.pad(a, ((0, ph), (0, pw)), constant_values=value)


def enhance_fft_blocks(img: GrayImage, block: int = 32, k: float = 0.45) -> GrayImage:
    """Per-block spectral power boost: IFFT(F * |F|**k).

    The raw product scales intensities by roughly |F|**k, so each block is
    mapped back to its original mean and standard deviation before clamping.
    This affine step leaves the relative spectrum untouched and makes k=0 the
    identity up to rounding.
    """
    h, w = img.pixels.shape
    src = _pad_to(img.pixels.astype(np.float64), block)
    out = np.empty_like(src)
    for r in range(0, src.shape[0], block):
        for c in range(0, src.shape[1], block):
            blk = src[r:r + block, c:c + block]
            spec = np.fft.fft2(blk)
            res = np.real(np.fft.ifft2(spec * np.abs(spec) ** k))
            sd_in = blk.std()
            sd_out = res.std()
            if sd_out > 1e-12 and sd_in > 0:
                res = (res - res.mean()) * (sd_in / sd_out) + blk.mean()
            else:
                res = np.full_like(blk, blk.mean())
            out[r:r + block, c:c + block] = res
    out = np.clip(np.floor(out[:h, :w] + 0.5), 0, 255)
    return GrayImage(out.astype(np.uint8))


# ---------------------------------------------------------------- binarization


def _block_reduce_mean(a: np.ndarray, block: int) -> np.ndarray:
    """Mean over each block, counting only pixels inside the original frame."""
    h, w = a.shape
    padded = _pad_to(a.astype(np.float64), block)
    ones = _pad_to(np.ones((h, w)), block)
    br, bc = padded.shape[0] // block, padded.shape[1] // block
    sums = padded.reshape(br, block, bc, block).sum(axis=(1, 3))
    counts = ones.reshape(br, block, bc, block).sum(axis=(1, 3))
    return sums / counts


def _expand(blocks: np.ndarray, block: int, shape) -> np.ndarray:
    full = np.repeat(np.repeat(blocks, block, axis=0), block, axis=1)
    return full[:shape[0], :shape[1]]


def binarize_adaptive(img: GrayImage, block: int = 16) -> BinaryImage:
    inv = 255.0 - img.pixels.astype(np.float64)
    means = _expand(_block_reduce_mean(inv, block), block, inv.shape)
    return BinaryImage((inv > means).astype(np.uint8))


# ---------------------------------------------------------------- segmentation


def gradient_magnitude(pixels: np.ndarray) -> np.ndarray:
    a = pixels.astype(np.float64)
    gx = ndimage.sobel(a, axis=1, mode="nearest")
    gy = ndimage.sobel(a, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def segment_gradient(img: GrayImage, block: int = 16, tau: float | None = None,
                     tau_scale: float = 0.35) -> np.ndarray:
    """Boolean ROI mask at pixel resolution.

    ``tau`` defaults to ``tau_scale`` times the global mean of the block means.
    """
    mag = gradient_magnitude(img.pixels)
    bmeans = _block_reduce_mean(mag, block)
    if tau is None:
        tau = tau_scale * float(bmeans.mean())
    fg = bmeans >= tau
    if tau <= 0:
        fg &= bmeans > 0
    labels, count = ndimage.label(fg)  # default structure is 4-connected
    if count == 0:
        raise SegmentationError("no foreground block passes the gradient threshold")
    sizes = ndimage.sum_labels(fg, labels, index=np.arange(1, count + 1))
    keep = int(np.argmax(sizes)) + 1
    return _expand(labels == keep, block, img.pixels.shape).astype(bool)


# ---------------------------------------------------------------- thinning

# neighbour bit order, counter-clockwise from east:
# bit0=E bit1=NE bit2=N bit3=NW bit4=W bit5=SW bit6=S bit7=SE
_NEIGHBOUR_WEIGHTS = np.array([[8, 4, 2], [16, 0, 1], [32, 64, 128]], dtype=np.int32)


def _bits(n: int) -> list[bool]:
    return [bool(n >> i & 1) for i in range(8)]


def _crossing(b: list[bool]) -> int:
    return sum(1 for i in (0, 2, 4, 6) if not b[i] and (b[i + 1] or b[(i + 2) % 8]))


def _build_thin_luts() -> tuple[np.ndarray, np.ndarray]:
    first = np.zeros(256, dtype=bool)
    second = np.zeros(256, dtype=bool)
    for n in range(256):
        b = _bits(n)
        n1 = sum(1 for k in (1, 3, 5, 7) if b[k - 1] or b[k])
        n2 = sum(1 for k in (1, 3, 5, 7) if b[k] or b[(k + 1) % 8])
        base = _crossing(b) == 1 and 2 <= min(n1, n2) <= 3
        first[n] = base and not ((b[1] or b[2] or not b[7]) and b[0])
        second[n] = base and not ((b[5] or b[6] or not b[3]) and b[4])
    return first, second


_LUT_FIRST, _LUT_SECOND = _build_thin_luts()


def _neighbour_codes(bits: np.ndarray) -> np.ndarray:
    return ndimage.correlate(bits.astype(np.int32), _NEIGHBOUR_WEIGHTS, mode="constant", cval=0)


_RING = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def _ring_components(bits: np.ndarray, y: int, x: int) -> int:
    """8-connected components among the ring pixels around (y, x), ignoring the centre."""
    h, w = bits.shape
    on = [0 <= y + dy < h and 0 <= x + dx < w and bits[y + dy, x + dx] == 1 for dy, dx in _RING]
    seen = [False] * 8
    comps = 0
    for i in range(8):
        if not on[i] or seen[i]:
            continue
        comps += 1
        stack = [i]
        seen[i] = True
        while stack:
            j = stack.pop()
            jy, jx = _RING[j]
            for m in range(8):
                my, mx = _RING[m]
                if on[m] and not seen[m] and max(abs(my - jy), abs(mx - jx)) == 1:
                    seen[m] = True
                    stack.append(m)
    return comps


def _makes_square(bits: np.ndarray, y: int, x: int) -> bool:
    h, w = bits.shape
    for r in (y - 1, y):
        for c in (x - 1, x):
            if 0 <= r and r + 1 < h and 0 <= c and c + 1 < w:
                if bits[r:r + 2, c:c + 2].all():
                    return True
    return False


def _remove_squares(bits: np.ndarray) -> bool:
    """Break every remaining 2x2 all-ones square, sequentially.

    A square pixel whose deletion keeps its neighbours connected is removed
    outright. At multi-branch junctions no such pixel exists; one pixel is
    then moved to a vacant ring position that rejoins the neighbours, so no
    component is ever split.
    """
    h, w = bits.shape
    changed = False
    sq = bits[:-1, :-1] & bits[1:, :-1] & bits[:-1, 1:] & bits[1:, 1:]
    for r, c in zip(*np.nonzero(sq)):
        if not bits[r:r + 2, c:c + 2].all():
            continue
        corners = ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1))
        done = False
        for y, x in corners:
            bits[y, x] = 0
            if _ring_components(bits, y, x) <= 1:
                done = True
                break
            bits[y, x] = 1
        if not done:
            for y, x in corners:
                bits[y, x] = 0
                for dy, dx in _RING:
                    by, bx = y + dy, x + dx
                    if not (0 <= by < h and 0 <= bx < w) or bits[by, bx]:
                        continue
                    bits[by, bx] = 1
                    if _ring_components(bits, y, x) <= 1 and not _makes_square(bits, by, bx):
                        done = True
                        break
                    bits[by, bx] = 0
                if done:
                    break
                bits[y, x] = 1
        changed |= done
    return changed


def thin(img: BinaryImage) -> BinaryImage:
    """Two-subiteration parallel thinning to a one-pixel-wide skeleton.

    Each subiteration marks deletable border pixels from their 3x3
    neighbourhood and removes them together. Any 2x2 square left at the
    fixpoint loses one simple pixel, and the loop repeats until stable.
    """
    bits = img.bits.astype(np.uint8).copy()
    while True:
        changed = False
        for lut in (_LUT_FIRST, _LUT_SECOND):
            codes = _neighbour_codes(bits)
            kill = lut[codes] & (bits == 1)
            if kill.any():
                bits[kill] = 0
                changed = True
        if not changed and not _remove_squares(bits):
            break
    return BinaryImage(bits, roi=img.roi)


# ---------------------------------------------------------------- full chain


@dataclass
class PreprocessResult:
    equalized: GrayImage
    enhanced: GrayImage
    binary: BinaryImage
    skeleton: BinaryImage
    roi: np.ndarray


def preprocess(img: GrayImage, fft_block: int = 32, k: float = 0.45,
               bin_block: int = 16, seg_block: int = 16) -> PreprocessResult:
    img.check_pipeline_size()
    eq = equalize_histogram(img)
    enh = enhance_fft_blocks(eq, block=fft_block, k=k)
    roi = segment_gradient(enh, block=seg_block)
    binary = binarize_adaptive(enh, block=bin_block)
    binary = BinaryImage(binary.bits * roi, roi=roi)
    skeleton = thin(binary)
    return PreprocessResult(eq, enh, binary, skeleton, roi)
