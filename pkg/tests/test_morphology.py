import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shadowgen.morphology import d_frag, d_hole, fill_small_holes, label, remove_small_objects
from oracles import flood_components, oracle_d_frag, oracle_d_hole


def test_solid_square():
    m = np.zeros((40, 40))
    m[10:30, 10:30] = 1
    assert d_hole(m) == 0
    assert d_frag(m) == 0


def test_square_with_pinhole():
    m = np.zeros((30, 30))
    m[10:20, 10:20] = 1
    assert d_frag(m) == 0
    m[15, 15] = 0
    assert d_hole(m) == 1


def test_small_fragment_removed():
    m = np.zeros((30, 30))
    m[2:12, 2:12] = 1
    m[20:24, 20:24] = 1  # 16 px fragment
    m[27, 27] = 1
    assert d_frag(m) == 17


def test_border_hole_not_filled():
    m = np.ones((20, 20))
    m[0:3, 5:8] = 0  # notch touching the top border
    assert d_hole(m) == 0
    m[10:12, 10:12] = 0
    assert d_hole(m) == 4


def test_threshold_is_strict():
    m = np.zeros((30, 30))
    m[0:5, 0:10] = 1  # exactly 50 px: kept
    assert d_frag(m) == 0
    m[0, 9] = 0  # 49 px: removed
    assert d_frag(m) == 49


def test_empty_mask():
    assert d_hole(np.zeros((8, 8))) == 0
    assert d_frag(np.zeros((8, 8))) == 0


def test_diagonal_connectivity():
    m = np.eye(5, dtype=bool)
    assert label(m, 2)[1] == 1
    assert label(m, 1)[1] == 5


def test_labels_are_components():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.random((15, 17)) > 0.55
        labels, n = label(m)
        comps = flood_components(m.tolist())
        assert n == len(comps)
        for comp in comps:
            vals = {labels[y, x] for y, x in comp}
            assert len(vals) == 1 and 0 not in vals
        assert (labels[~m] == 0).all()


def test_exhaustive_4x4():
    # every 4x4 binary mask; a 4x4 raster can only hold small components
    for code in range(1 << 16):
        bits = [(code >> i) & 1 for i in range(16)]
        m = np.array(bits, dtype=bool).reshape(4, 4)
        assert d_frag(m) == oracle_d_frag(m)
        assert d_hole(m) == oracle_d_hole(m)


def test_random_32x32_with_varied_density():
    rng = np.random.default_rng(1)
    for i in range(200):
        m = rng.random((32, 32)) < (0.2 + 0.6 * (i % 10) / 9)
        assert d_frag(m) == oracle_d_frag(m)
        assert d_hole(m) == oracle_d_hole(m)


@settings(max_examples=60, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 24), st.integers(1, 24))))
def test_cleanups_match_oracle(m):
    assert d_frag(m) == oracle_d_frag(m)
    assert d_hole(m) == oracle_d_hole(m)


def test_large_components_untouched():
    m = np.zeros((64, 64), bool)
    m[5:20, 5:20] = True
    m[30:60, 30:40] = True
    np.testing.assert_array_equal(remove_small_objects(m), m)
    inv_big = np.ones((64, 64), bool)
    inv_big[10:20, 10:20] = False  # 100-px hole
    np.testing.assert_array_equal(fill_small_holes(inv_big), inv_big)


def test_connectivity_validation():
    with pytest.raises(ValueError):
        label(np.zeros((3, 3)), 3)
