"""Seed-list sampling protocol and the framed batch stream.

Seed lists emulate a fixed-cardinality training set without touching disk:
cardinality C uses C/1000 seeds, each seed owns local sample indices
0..999, and after a full pass the seed order is reshuffled (the samples
themselves are identical across epochs because they are pure functions of
(seed, local index)).

The frame stream serves pack-format batches over any byte channel: each
frame is a u32 little-endian length followed by that many bytes of a
complete pack; a zero length is the end-of-stream sentinel. The stream is
a pure function of (spec, cursor), so any consumer can resume or replay
from a recorded (seed, index) cursor.
"""

from __future__ import annotations

import functools
import logging
import socketserver
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import packfile
from .rng import MASK64, Stream
from .scenes import SceneSpec, generate_sample

log = logging.getLogger("allpairs.streams")

SAMPLES_PER_SEED = 1000
_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class Cursor:
    seed: int
    index: int

    @classmethod
    def parse(cls, text: str) -> "Cursor":
        try:
            seed, index = text.split(":")
            return cls(int(seed) & MASK64, int(index))
        except ValueError as e:
            raise ValueError(f"cursor must be '<seed>:<index>', got {text!r}") from e

    def __str__(self):
        return f"{self.seed}:{self.index}"


class SeedSchedule:
    """Random-access map from global training index to (seed, local index)."""

    def __init__(self, cardinality: int, master_seed: int):
        if cardinality <= 0:
            raise ValueError(f"cardinality must be >= 1, got {cardinality}")
        self.requested = cardinality
        n_seeds = -(-cardinality // SAMPLES_PER_SEED)  # ceil
        self.effective = n_seeds * SAMPLES_PER_SEED
        self.rounded = self.effective != cardinality
        self.master_seed = master_seed
        stream = Stream("seed-list", master_seed)
        seeds: list[int] = []
        seen = set()
        while len(seeds) < n_seeds:
            s = stream.u64() >> 1  # keep clear of the test-seed namespace
            if s not in seen:
                seen.add(s)
                seeds.append(s)
        self.seeds = tuple(seeds)

    @functools.lru_cache(maxsize=8)
    def _epoch_order(self, epoch: int) -> tuple[int, ...]:
        if epoch == 0:
            return self.seeds
        order = list(self.seeds)
        Stream("seed-shuffle", self.master_seed, epoch).shuffle(order)
        return tuple(order)

    def lookup(self, i: int) -> tuple[int, int]:
        epoch, pos = divmod(i, self.effective)
        seed = self._epoch_order(epoch)[pos // SAMPLES_PER_SEED]
        return seed, pos % SAMPLES_PER_SEED


def seedlist_stream(spec: SceneSpec, cardinality: int, master_seed: int):
    """Infinite sample stream cycling a fixed-cardinality seed list."""
    schedule = SeedSchedule(cardinality, master_seed)
    i = 0
    while True:
        seed, local = schedule.lookup(i)
        yield generate_sample(spec, seed, local)
        i += 1


def infinite_stream(spec: SceneSpec, seed: int, start: int = 0):
    """Unbounded unique-sample stream: index simply counts up."""
    i = start
    while True:
        yield generate_sample(spec, seed, i)
        i += 1


# --------------------------------------------------------------------------
# Framed batch protocol
# --------------------------------------------------------------------------

def batch_pack_bytes(spec: SceneSpec, seed: int, start_index: int, count: int) -> bytes:
    images = np.zeros((count, spec.image_size, spec.image_size), dtype=np.uint8)
    labels = np.zeros(count, dtype=np.uint8)
    for i in range(count):
        s = generate_sample(spec, seed, start_index + i)
        images[i] = packfile.quantize(s.image)
        labels[i] = s.label
    return packfile.pack_bytes(images, labels, spec.n_pairs, spec.k_types)


def iter_frames(spec: SceneSpec, batch_size: int, cursor: Cursor,
                n_batches: int | None = None) -> Iterator[bytes]:
    """Yield pack-format batch payloads for consecutive index ranges."""
    b = 0
    while n_batches is None or b < n_batches:
        start = cursor.index + b * batch_size
        yield batch_pack_bytes(spec, cursor.seed, start, batch_size)
        b += 1


def write_frame(fh, payload: bytes) -> None:
    fh.write(_LEN.pack(len(payload)))
    fh.write(payload)


def write_sentinel(fh) -> None:
    fh.write(_LEN.pack(0))


def read_frames(fh) -> Iterator[bytes]:
    """Yield frame payloads until the zero-length sentinel (or EOF)."""
    while True:
        head = fh.read(_LEN.size)
        if len(head) == 0:
            return
        if len(head) < _LEN.size:
            raise packfile.PackFormatError("truncated frame header", len(head))
        (length,) = _LEN.unpack(head)
        if length == 0:
            return
        payload = fh.read(length)
        if len(payload) < length:
            raise packfile.PackFormatError(
                f"truncated frame: expected {length} bytes, got {len(payload)}", len(payload))
        yield payload


def stream_to_file(fh, spec: SceneSpec, batch_size: int, cursor: Cursor,
                   n_batches: int | None, stop=lambda: False) -> int:
    """Write frames then the sentinel; returns number of samples written."""
    written = 0
    try:
        for payload in iter_frames(spec, batch_size, cursor, n_batches):
            if stop():
                break
            write_frame(fh, payload)
            written += batch_size
    except (BrokenPipeError, ConnectionResetError):
        log.warning("consumer went away; stream stopped at cursor %s",
                    Cursor(cursor.seed, cursor.index + written))
        return written
    write_sentinel(fh)
    fh.flush()
    return written


class _FrameHandler(socketserver.StreamRequestHandler):
    def handle(self):
        srv = self.server
        n = stream_to_file(self.wfile, srv.spec, srv.batch_size, srv.cursor,
                           srv.n_batches, stop=lambda: srv.stopping)
        log.info("served %d samples to %s", n, self.client_address)


class FrameServer(socketserver.ThreadingTCPServer):
    """Serves the identical deterministic stream to every connection."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, spec: SceneSpec, batch_size: int, cursor: Cursor,
                 n_batches: int | None = None):
        super().__init__(address, _FrameHandler)
        self.spec = spec
        self.batch_size = batch_size
        self.cursor = cursor
        self.n_batches = n_batches
        self.stopping = False

    def stop(self):
        self.stopping = True
        self.shutdown()
