"""Bit-exact binary sample container ("APRS" packs) and PNG/CSV export.

Pack layout, all little-endian:

    magic    4s   b"APRS"
    version  u16  format version (currently 1)
    width    u16
    height   u16
    channels u8   always 1
    count    u64
    n_pairs  u8
    k_types  u8
    then `count` records of: label u8, width*height pixel bytes (row-major,
    quantized round(255*v), ties to even)

Round trips are bitwise: read(write(x)) == x.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"APRS"
VERSION = 1
_HEADER = struct.Struct("<4sHHHBQBB")

HEADER_SIZE = _HEADER.size  # 21


class PackFormatError(ValueError):
    """Malformed pack data; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


def quantize(values: np.ndarray) -> np.ndarray:
    """[0,1] float image -> u8, the storage quantization."""
    return np.rint(np.asarray(values, dtype=np.float64) * 255.0).astype(np.uint8)


def dequantize(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(255.0)


@dataclass
class PackData:
    """In-memory view of a pack: u8 images (count, H, W) and u8 labels."""

    images: np.ndarray
    labels: np.ndarray
    n_pairs: int
    k_types: int
    version: int = VERSION

    @property
    def count(self) -> int:
        return len(self.labels)

    @property
    def image_size(self) -> int:
        return self.images.shape[2]


def pack_bytes(images: np.ndarray, labels: np.ndarray, n_pairs: int, k_types: int) -> bytes:
    """Serialize u8 images (N, H, W) + labels (N,) to pack bytes."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.asarray(labels).astype(np.uint8)
    if images.ndim != 3 or len(labels) != len(images):
        raise ValueError(f"need (N, H, W) images with matching labels, got {images.shape}")
    n, h, w = images.shape
    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, VERSION, w, h, 1, n, n_pairs, k_types))
    rec = images.reshape(n, h * w)
    for i in range(n):
        out.write(bytes([labels[i]]))
        out.write(rec[i].tobytes())
    return out.getvalue()


def write_pack(path, images: np.ndarray, labels: np.ndarray, n_pairs: int, k_types: int) -> None:
    Path(path).write_bytes(pack_bytes(images, labels, n_pairs, k_types))


def write_pack_samples(path, samples: Iterable, n_pairs: int, k_types: int) -> None:
    """Convenience: quantize float Samples and write them."""
    samples = list(samples)
    if samples:
        images = np.stack([quantize(s.image) for s in samples])
    else:
        from .scenes import derive_image_size
        size = derive_image_size(n_pairs)
        images = np.zeros((0, size, size), dtype=np.uint8)
    labels = np.array([s.label for s in samples], dtype=np.uint8)
    write_pack(path, images, labels, n_pairs, k_types)


def parse_pack(data: bytes) -> PackData:
    if len(data) < HEADER_SIZE:
        raise PackFormatError(f"truncated header: {len(data)} bytes", len(data))
    magic, version, w, h, channels, count, n_pairs, k_types = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise PackFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise PackFormatError(f"unsupported version {version}", 4)
    if channels != 1:
        raise PackFormatError(f"unsupported channel count {channels}", 10)
    rec_size = 1 + w * h
    expected = HEADER_SIZE + count * rec_size
    if len(data) != expected:
        # offset of the first missing/extra byte
        raise PackFormatError(
            f"body length {len(data) - HEADER_SIZE} != count {count} x record {rec_size}",
            min(len(data), expected),
        )
    body = np.frombuffer(data, dtype=np.uint8, offset=HEADER_SIZE).reshape(count, rec_size)
    labels = body[:, 0].copy()
    images = body[:, 1:].reshape(count, h, w).copy()
    return PackData(images, labels, n_pairs, k_types, version)


def read_pack(path) -> PackData:
    return parse_pack(Path(path).read_bytes())


# --------------------------------------------------------------------------
# PNG + CSV export
# --------------------------------------------------------------------------

INDEX_CSV_COLUMNS = ("filename", "label", "seed", "index")


def save_png(image_u8: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(image_u8, dtype=np.uint8), mode="L").save(path)


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def export_png(samples: Iterable, out_dir) -> Path:
    """Write one grayscale PNG per sample plus an index.csv; returns csv path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "index.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(INDEX_CSV_COLUMNS)
        for i, s in enumerate(samples):
            name = f"sample_{i:06d}.png"
            save_png(quantize(s.image), out / name)
            writer.writerow([name, s.label, s.seed, s.index])
    return csv_path


def write_index_csv(path, rows: Iterable[tuple]) -> None:
    """rows of (filename, label, seed, index) in the export CSV schema."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(INDEX_CSV_COLUMNS)
        for row in rows:
            writer.writerow(list(row))


def read_index_csv(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return [
            {"filename": r["filename"], "label": int(r["label"]),
             "seed": int(r["seed"]), "index": int(r["index"])}
            for r in csv.DictReader(fh)
        ]
