import dataclasses
import math

import numpy as np
import pytest

from allpairs import glyphs
from allpairs.glyphs import (DEFAULT_CONFIG, EMPTY_GLYPH, FAMILIES, Glyph,
                             GlyphConfig, PlacementError, StrokePrimitive,
                             VariationIndexError, cardinality,
                             glyph_config_from_dict, glyph_config_to_dict,
                             instantiate, primitive_bbox, rasterize,
                             render_patch, render_sheet,
                             supersampled_reference, variation_space)
from allpairs.rng import Stream
from conftest import random_glyph_ids

# cardinalities from the published symbol table
TABLE_CARDINALITIES = {
    "circle": 165, "line": 174, "cross": 45_300, "angle": 39_000,
    "3-star": 1_430_000, "theta": 20_000, "phi": 20_000, "2-circle": 7_000,
    "circle-3star": 7_150_000, "box": 480, "box-diagonal": 518, "barbell": 78,
    "dot-line": 156, "z": 518, "triangle-lid": 1036, "dot-mid-line": 78,
    "hourglass": 518, "triangle": 11_800,
}


def test_symbol_names_order_and_ids():
    assert glyphs.NUM_SYMBOLS == 18
    assert glyphs.SYMBOL_NAMES[0] == "circle"
    assert glyphs.SYMBOL_NAMES[3] == "angle"  # 4-4 problem uses ids 1..4
    assert glyphs.symbol_type(18).name == "triangle"
    with pytest.raises(ValueError):
        glyphs.symbol_type(19)
    with pytest.raises(ValueError):
        glyphs.symbol_type(0)


def test_default_cardinalities_match_table():
    for t, fam in enumerate(FAMILIES, start=1):
        assert cardinality(t) == TABLE_CARDINALITIES[fam.name], fam.name


def test_circle_cardinality_165():
    assert cardinality(1) == 165


def test_variation_space_product_rule():
    for t in range(1, 19):
        space = variation_space(t)
        n = space.rotation_steps * space.scale_steps
        for _, s in space.shape_params:
            n *= s
        assert space.cardinality == n


def test_degenerate_config_cardinality_one():
    overrides = {"families": {f.name: {
        "rotation_steps": 1, "scale_steps": 1,
        "shape_steps": {p.name: 1 for p in f.shape_params}} for f in FAMILIES}}
    cfg = glyph_config_from_dict(overrides)
    for t in range(1, 19):
        assert cardinality(t, cfg) == 1
        g = instantiate(t, 0, cfg)
        assert 10 - 1e-6 <= max(g.width, g.height) <= 18 + 1e-6


def test_cross_exhaustive_enumeration_count():
    space = variation_space(3)
    seen = set()
    for v in range(space.cardinality):
        seen.add(space.decompose(v))
    assert len(seen) == space.cardinality == 45_300


def test_variation_index_out_of_range_reports_both():
    with pytest.raises(VariationIndexError) as exc:
        instantiate(1, 165)
    assert exc.value.index == 165
    assert exc.value.cardinality == 165
    with pytest.raises(VariationIndexError):
        instantiate(1, -1)


def test_circle_v0_single_primitive():
    g = instantiate(1, 0)
    assert len(g.primitives) == 1
    assert g.primitives[0].kind == "full-circle"
    assert 10 <= max(g.width, g.height) <= 18


def test_barbell_structure():
    for v in (0, 33, 77):
        kinds = sorted(p.kind for p in instantiate(12, v).primitives)
        assert kinds == ["dot", "dot", "segment"]


def test_instantiate_replay_bit_identical(stream):
    for t, v in random_glyph_ids(stream, 1000):
        a = glyphs._instantiate_cached.__wrapped__(t, v, DEFAULT_CONFIG)
        b = glyphs._instantiate_cached.__wrapped__(t, v, DEFAULT_CONFIG)
        assert a == b  # dataclass equality on float tuples is bitwise


def test_bbox_normalized_to_origin(stream):
    for t, v in random_glyph_ids(stream, 200):
        g = instantiate(t, v)
        x0, y0, x1, y1 = g.bbox
        assert x0 == 0.0 and y0 == 0.0
        ink = [primitive_bbox(p) for p in g.primitives]
        assert abs(min(b[0] for b in ink)) < 1e-6
        assert abs(min(b[1] for b in ink)) < 1e-6
        assert abs(max(b[2] for b in ink) - x1) < 1e-6
        assert abs(max(b[3] for b in ink) - y1) < 1e-6


def test_scale_bound_exhaustive_small_families():
    # every family with cardinality <= 1e5 is checked on a coarse sweep of
    # its full index range plus both endpoints
    for t in range(1, 19):
        card = cardinality(t)
        if card > 100_000:
            continue
        step = max(card // 400, 1)
        for v in list(range(0, card, step)) + [card - 1]:
            g = instantiate(t, v)
            md = max(g.width, g.height)
            assert 10 - 1e-6 <= md <= 18 + 1e-6, (t, v, md)


@pytest.mark.slow
def test_scale_bound_fully_exhaustive_small_families():
    for t in range(1, 19):
        card = cardinality(t)
        if card > 100_000:
            continue
        for v in range(card):
            g = glyphs._instantiate_cached.__wrapped__(t, v, DEFAULT_CONFIG)
            md = max(g.width, g.height)
            assert 10 - 1e-6 <= md <= 18 + 1e-6, (t, v, md)


def test_scale_bound_sampled_big_families(stream):
    for t in (5, 9):  # 1.43M and 7.15M variations
        card = cardinality(t)
        for _ in range(10_000):
            g = instantiate(t, stream.randint(card))
            md = max(g.width, g.height)
            assert 10 - 1e-6 <= md <= 18 + 1e-6


def test_rasterize_empty_glyph_is_identity():
    canvas = np.full((20, 20), 0.25, dtype=np.float32)
    before = canvas.copy()
    rasterize(EMPTY_GLYPH, canvas, (5, 5))
    assert np.array_equal(canvas, before)


def test_rasterize_rejects_out_of_bounds():
    g = instantiate(1, 164)  # max-size circle, 18 px
    canvas = np.zeros((17, 40), dtype=np.float32)
    with pytest.raises(PlacementError):
        rasterize(g, canvas, (0, 0))
    with pytest.raises(PlacementError):
        rasterize(g, np.zeros((40, 40), np.float32), (30, 0))
    with pytest.raises(PlacementError):
        rasterize(g, np.zeros((40, 40), np.float32), (-1, 0))


def test_rasterize_range_and_footprint(stream):
    for t, v in random_glyph_ids(stream, 50):
        g = instantiate(t, v)
        canvas = np.zeros((40, 40), dtype=np.float32)
        rasterize(g, canvas, (10, 10))
        assert canvas.min() >= 0.0 and canvas.max() <= 1.0
        assert canvas.max() > 0.5  # something was drawn
        # nothing outside bbox padded by 1 px
        x1 = 10 + int(math.ceil(g.width)) + 1
        y1 = 10 + int(math.ceil(g.height)) + 1
        outside = canvas.copy()
        outside[9:y1, 9:x1] = 0
        assert outside.max() == 0.0


def test_overlapping_strokes_never_exceed_one():
    # box-diagonal has strokes crossing at corners
    g = instantiate(11, 99)
    canvas = np.zeros((30, 30), dtype=np.float32)
    rasterize(g, canvas, (4, 4))
    assert canvas.max() <= 1.0


def test_circle_rotation_invariance():
    # full circle rendered at canvas center: the image is invariant under
    # 90-degree canvas rotation about that center
    g = instantiate(1, 164)
    w = int(math.ceil(g.width))
    canvas = np.zeros((w + 2, w + 2), dtype=np.float32)
    rasterize(g, canvas, (1, 1))
    assert np.abs(canvas - np.rot90(canvas)).max() <= 0.02


def test_aa_matches_supersampled_reference(stream):
    worst = 0.0
    for t, v in random_glyph_ids(stream, 100):
        g = instantiate(t, v)
        coarse = render_patch(g).astype(np.float64)
        ref = supersampled_reference(g, 4)
        worst = max(worst, float(np.abs(coarse - ref).max()))
    assert worst <= 0.05, worst


def test_single_segment_supersample_oracle(stream):
    # the line family is a single stroke: whole-pipeline supersampling
    for _ in range(50):
        g = instantiate(2, stream.randint(cardinality(2)))
        diff = np.abs(render_patch(g).astype(np.float64) - supersampled_reference(g, 4))
        assert diff.max() <= 0.05


def test_arc_primitive_coverage():
    # arcs are supported primitives even though no default family uses them
    arc = StrokePrimitive("arc", (6.0, 6.0, 4.0, 0.0, math.pi), 1.5)
    g = Glyph((arc,), (0.0, 0.0, 12.0, 12.0))
    patch = render_patch(g)
    assert patch.max() > 0.9
    ref = supersampled_reference(g, 4)
    assert np.abs(patch - ref).max() <= 0.05


def test_primitive_validation():
    with pytest.raises(ValueError):
        StrokePrimitive("segment", (0, 0, 1, 1), 0.0)
    with pytest.raises(ValueError):
        StrokePrimitive("full-circle", (0, 0, -1.0), 1.0)
    with pytest.raises(ValueError):
        StrokePrimitive("dot", (0, 0, 0.5), 1.0)  # dots must be >= 1 px
    with pytest.raises(ValueError):
        StrokePrimitive("blob", (0.0,), 1.0)


def test_render_sheet_layout_and_replay():
    sheet = render_sheet(list(range(1, 19)), 8, seed=11)
    assert sheet.shape == (18 * 24, 8 * 24)
    assert sheet.dtype == np.uint8
    single = render_sheet([5], 1, seed=11)
    assert single.shape == (24, 24)
    again = render_sheet(list(range(1, 19)), 8, seed=11)
    assert np.array_equal(sheet, again)


def test_glyph_config_json_round_trip(tmp_path):
    cfg = glyph_config_from_dict({"stroke_width": 2.0,
                                  "families": {"circle": {"scale_steps": 10}}})
    assert cfg.stroke_width == 2.0
    assert cardinality(1, cfg) == 10
    assert cardinality(2, cfg) == 174  # untouched
    path = tmp_path / "glyphs.json"
    path.write_text(__import__("json").dumps(glyph_config_to_dict(cfg)))
    loaded = glyphs.load_glyph_config(path)
    assert loaded == cfg


def test_glyph_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        glyph_config_from_dict({"families": {"pentagon": {}}})
    with pytest.raises(ValueError):
        glyph_config_from_dict({"families": {"circle": {"shape_steps": {"zig": 3}}}})


def test_stroke_width_override_changes_ink():
    thick = glyph_config_from_dict({"stroke_width": 3.0})
    a = render_patch(instantiate(2, 0))
    b = render_patch(instantiate(2, 0, thick))
    assert b.sum() > a.sum() * 1.5
