"""File formats for depth and mask grids.

PFM (single-channel, little-endian) stores float depth values; PGM (binary P5,
maxval 255) stores 0/255 masks; a minimal grayscale PNG reader/writer handles
16-bit packed label maps. All writers are deterministic byte-for-byte.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np


# ---------------------------------------------------------------- PFM

def write_pfm(path, values) -> None:
    """Write a 2D float array as a grayscale little-endian PFM."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("PFM writer expects a 2D array")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")  # negative scale marks little-endian
        fh.write(arr[::-1].astype("<f4").tobytes())  # PFM rasters run bottom-up


def read_pfm(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise ValueError(f"not a grayscale PFM: magic {magic!r}")
        dims = fh.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = fh.read(width * height * 4)
        if len(data) != width * height * 4:
            raise ValueError("truncated PFM payload")
    arr = np.frombuffer(data, dtype=dtype).reshape(height, width)
    return arr[::-1].astype(np.float64)


# ---------------------------------------------------------------- PGM

def write_pgm(path, mask) -> None:
    """Write a boolean (or 0/255 uint8) grid as binary PGM."""
    arr = np.asarray(mask)
    if arr.dtype == bool:
        arr = np.where(arr, 255, 0).astype(np.uint8)
    else:
        arr = arr.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM")
    # header: magic, width, height, maxval, one whitespace, then payload
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.find(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    arr = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return arr.reshape(height, width).copy()


def read_pgm_mask(path):
    return read_pgm(path) > 127


# ---------------------------------------------------------------- PNG (grayscale)

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _chunk(tag, payload):
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def write_png_gray16(path, values) -> None:
    """Write a uint16 grid as a 16-bit grayscale PNG (used for label maps)."""
    arr = np.asarray(values, dtype=np.uint16)
    if arr.ndim != 2:
        raise ValueError("PNG writer expects a 2D array")
    height, width = arr.shape
    ihdr = struct.pack(">IIBBBBB", width, height, 16, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + arr[r].astype(">u2").tobytes() for r in range(height))
    with open(path, "wb") as fh:
        fh.write(_PNG_SIG)
        fh.write(_chunk(b"IHDR", ihdr))
        fh.write(_chunk(b"IDAT", zlib.compress(raw, 9)))
        fh.write(_chunk(b"IEND", b""))


def read_png_gray(path):
    """Read an 8- or 16-bit grayscale non-interlaced PNG into a uint16 grid."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(_PNG_SIG):
        raise ValueError("not a PNG file")
    pos = len(_PNG_SIG)
    width = height = depth = None
    idat = b""
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        tag = data[pos + 4:pos + 8]
        payload = data[pos + 8:pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, color, _, _, interlace = struct.unpack(">IIBBBBB", payload)
            if color != 0:
                raise ValueError("only grayscale PNGs are supported")
            if interlace != 0:
                raise ValueError("interlaced PNGs are not supported")
            if depth not in (8, 16):
                raise ValueError(f"unsupported bit depth {depth}")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if width is None:
        raise ValueError("PNG missing IHDR")
    raw = zlib.decompress(idat)
    bpp = depth // 8
    stride = width * bpp
    out = np.zeros((height, width), dtype=np.uint16)
    prev = np.zeros(stride, dtype=np.uint8)
    pos = 0
    for r in range(height):
        filt = raw[pos]
        row = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=pos + 1).copy()
        pos += 1 + stride
        row = _unfilter(filt, row, prev, bpp)
        prev = row
        if depth == 16:
            out[r] = row.view(">u2").astype(np.uint16)
        else:
            out[r] = row
    return out


def _unfilter(filt, row, prev, bpp):
    """Undo PNG scanline filters 0-4 in place."""
    if filt == 0:
        return row
    if filt == 2:  # Up
        return ((row.astype(np.int32) + prev) & 0xFF).astype(np.uint8)
    out = row.astype(np.int32)
    for i in range(len(row)):
        left = out[i - bpp] if i >= bpp else 0
        up = int(prev[i])
        ul = int(prev[i - bpp]) if i >= bpp else 0
        if filt == 1:
            out[i] = (out[i] + left) & 0xFF
        elif filt == 3:
            out[i] = (out[i] + (left + up) // 2) & 0xFF
        elif filt == 4:
            p = left + up - ul
            pa, pb, pc = abs(p - left), abs(p - up), abs(p - ul)
            pred = left if (pa <= pb and pa <= pc) else (up if pb <= pc else ul)
            out[i] = (out[i] + pred) & 0xFF
        else:
            raise ValueError(f"unknown PNG filter {filt}")
    return out.astype(np.uint8)
