import numpy as np
import pytest

from allpairs import packfile
from allpairs.packfile import (HEADER_SIZE, PackFormatError, dequantize,
                               export_png, pack_bytes, parse_pack, quantize,
                               read_index_csv, read_pack, write_pack,
                               write_pack_samples)
from allpairs.scenes import SceneSpec, generate_sample


def _images(n, size=76, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(n, size, size), dtype=np.uint8)


def test_header_size():
    assert HEADER_SIZE == 21


def test_empty_pack_round_trip(tmp_path):
    p = tmp_path / "empty.pack"
    write_pack(p, np.zeros((0, 76, 76), np.uint8), np.zeros(0, np.uint8), 4, 4)
    assert p.stat().st_size == HEADER_SIZE
    data = read_pack(p)
    assert data.count == 0
    assert data.n_pairs == 4 and data.k_types == 4


def test_round_trip_bitwise(tmp_path):
    images = _images(100)
    labels = (np.arange(100) % 2).astype(np.uint8)
    p = tmp_path / "x.pack"
    write_pack(p, images, labels, 4, 4)
    data = read_pack(p)
    assert np.array_equal(data.images, images)
    assert np.array_equal(data.labels, labels)
    # writing the parsed data back reproduces the file bytes exactly
    assert p.read_bytes() == pack_bytes(data.images, data.labels, 4, 4)


def test_truncation_reports_offset():
    blob = pack_bytes(_images(3), np.zeros(3, np.uint8), 2, 2)
    with pytest.raises(PackFormatError) as exc:
        parse_pack(blob[:-1])
    assert exc.value.offset == len(blob) - 1
    with pytest.raises(PackFormatError):
        parse_pack(blob + b"\x00")
    with pytest.raises(PackFormatError) as exc2:
        parse_pack(blob[:10])
    assert exc2.value.offset == 10


def test_bad_magic_and_version():
    blob = pack_bytes(_images(1), np.zeros(1, np.uint8), 2, 2)
    with pytest.raises(PackFormatError) as exc:
        parse_pack(b"XXXX" + blob[4:])
    assert exc.value.offset == 0
    bad_version = blob[:4] + b"\xff\x00" + blob[6:]
    with pytest.raises(PackFormatError) as exc2:
        parse_pack(bad_version)
    assert exc2.value.offset == 4


def test_quantize_round_trip_through_float():
    v = np.linspace(0, 1, 511)
    q = quantize(v)
    assert q.dtype == np.uint8
    assert np.array_equal(quantize(dequantize(q)), q)


def test_write_pack_samples(tmp_path):
    spec = SceneSpec(2, 2)
    samples = [generate_sample(spec, 5, i) for i in range(4)]
    p = tmp_path / "s.pack"
    write_pack_samples(p, samples, 2, 2)
    data = read_pack(p)
    assert data.count == 4
    assert np.array_equal(data.labels, [s.label for s in samples])
    assert np.array_equal(data.images[0], quantize(samples[0].image))


def test_write_pack_samples_empty(tmp_path):
    p = tmp_path / "e.pack"
    write_pack_samples(p, [], 2, 2)
    assert read_pack(p).count == 0


def test_export_png_decodes_equal_to_quantization(tmp_path):
    spec = SceneSpec(2, 2)
    samples = [generate_sample(spec, 8, i) for i in range(3)]
    csv_path = export_png(samples, tmp_path / "pngs")
    rows = read_index_csv(csv_path)
    assert len(rows) == 3
    for row, s in zip(rows, samples):
        assert row["label"] == s.label
        assert row["seed"] == 8
        decoded = packfile.load_png(tmp_path / "pngs" / row["filename"])
        assert np.array_equal(decoded, quantize(s.image))


def test_export_png_empty_writes_header_only(tmp_path):
    csv_path = export_png([], tmp_path / "none")
    text = csv_path.read_text().strip()
    assert text == "filename,label,seed,index"


def test_mismatched_labels_rejected():
    with pytest.raises(ValueError):
        pack_bytes(_images(3), np.zeros(2, np.uint8), 2, 2)
