import numpy as np
import pytest

from allpairs.rng import Stream


@pytest.fixture
def stream():
    return Stream("tests", 12345)


def random_glyph_ids(stream, count):
    """(type id, variation) pairs drawn uniformly across all 18 families."""
    from allpairs import glyphs
    out = []
    for _ in range(count):
        t = 1 + stream.randint(glyphs.NUM_SYMBOLS)
        out.append((t, stream.randint(glyphs.cardinality(t))))
    return out
