import json
import math

import jsonschema
import numpy as np
import pytest

from shadowgen.errors import DegenerateMask, EmptyRegion
from shadowgen.geometry import BBox, bbox_from_mask, crop_resize
from shadowgen.metrics import (
    REPORT_JSON_SCHEMA,
    MetricsReport,
    Prediction,
    ber,
    box_iou,
    evaluate_dataset,
    format_table,
    psnr,
    rmse,
    shadow_ber,
    shape_l1,
)
from shadowgen.synthdata import GeneratorConfig, generate_tuples
from oracles import loop_ber, loop_rmse, loop_shadow_ber


def test_rmse_identity_and_offset():
    a = np.random.default_rng(0).random((8, 8, 3)) * 0.5
    assert rmse(a, a) == 0
    assert rmse(a + 10 / 255, a) == pytest.approx(10, abs=1e-9)


def test_rmse_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        reg = rng.random((16, 16)) > 0.6
        assert rmse(a, b) == pytest.approx(loop_rmse(a, b), abs=1e-6)
        assert rmse(a, b, reg) == pytest.approx(loop_rmse(a, b, reg), abs=1e-6)


def test_rmse_empty_region():
    a = np.zeros((4, 4, 3))
    with pytest.raises(EmptyRegion):
        rmse(a, a, np.zeros((4, 4)))


def test_psnr_values():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a) == math.inf
    assert psnr(np.ones((4, 4, 3)), a) == pytest.approx(0.0)
    b = np.full((4, 4, 3), 60 / 255)
    assert psnr(b, a) == pytest.approx(20 * math.log10(255 / 60), abs=1e-9)
    assert psnr(b, a) == pytest.approx(12.57, abs=5e-3)


def test_ber_perfect_and_inverted():
    g = np.zeros((8, 8))
    g[2:5, 2:6] = 1
    assert ber(g, g) == 0
    assert ber(1 - g, g) == 100
    assert shadow_ber(g, g) == 0
    assert shadow_ber(1 - g, g) == 100


def test_ber_loop_oracle():
    rng = np.random.default_rng(2)
    for _ in range(30):
        p, g = rng.random((16, 16)), rng.random((16, 16))
        assert ber(p, g) == loop_ber(p, g)
        assert shadow_ber(p, g) == loop_shadow_ber(p, g)


def test_ber_degenerate():
    with pytest.raises(DegenerateMask):
        ber(np.zeros((4, 4)), np.ones((4, 4)))
    with pytest.raises(EmptyRegion):
        shadow_ber(np.zeros((4, 4)), np.zeros((4, 4)))


def test_ber_region_with_both_classes():
    rng = np.random.default_rng(3)
    p, g = rng.random((16, 16)), rng.random((16, 16))
    region = np.ones((16, 16))
    assert ber(p, g, region) == ber(p, g)


def test_box_iou():
    assert box_iou(BBox(5, 5, 2, 2), BBox(5, 5, 2, 2)) == 1
    assert box_iou(BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)) == 0
    assert box_iou(BBox(0.5, 0.5, 1, 1), BBox(1.0, 0.5, 1, 1)) == pytest.approx(1 / 3)


def test_shape_l1():
    m = np.zeros((32, 32))
    m[4:12, 6:10] = 1
    moved = np.roll(m, (10, 5), axis=(0, 1))
    assert shape_l1(moved, m) == 0  # position does not matter
    # an empty prediction costs the mean of the (edge-blended) target crop
    gt_crop = crop_resize(m, bbox_from_mask(m), 32)
    assert shape_l1(np.zeros_like(m), m) == pytest.approx(gt_crop.mean())
    assert 0.85 < gt_crop.mean() <= 1.0


def test_permutation_invariance():
    rng = np.random.default_rng(4)
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    pm, gm = rng.random((16, 16)), rng.random((16, 16))
    perm = rng.permutation(256)

    def shuf(x):
        return x.reshape(256, -1)[perm].reshape(x.shape)

    assert rmse(shuf(a), shuf(b), shuf(gm)) == pytest.approx(rmse(a, b, gm))
    assert ber(shuf(pm), shuf(gm)) == pytest.approx(ber(pm, gm))


@pytest.fixture(scope="module")
def tuples():
    return generate_tuples(3, GeneratorConfig(resolution=32, height_range=(0.2, 0.35)), seed=2)


def perfect(t):
    return Prediction(t.gt.copy(), t.m_fs.copy(), BBox.from_seq(t.meta["B_s"]))


def test_evaluate_perfect_tuple(tuples):
    rep = evaluate_dataset([perfect(tuples[0])], tuples[:1])
    agg = rep.aggregate
    assert agg["rmse"] == 0 and agg["s_rmse"] == 0 and agg["ber"] == 0 and agg["s_ber"] == 0
    assert agg["psnr"] == math.inf and agg["box_iou"] == 1 and agg["shape_l1"] == 0
    assert rep.counts["psnr_infinite"] == 1


def test_aggregate_is_mean(tuples):
    preds = [Prediction(t.comp, np.roll(t.m_fs, 1, axis=1), BBox(10, 10, 5, 5)) for t in tuples[:2]]
    rep = evaluate_dataset(preds, tuples[:2])
    for k, v in rep.aggregate.items():
        assert v == pytest.approx(np.mean([r[k] for r in rep.rows]))


def test_report_round_trip_and_schema(tuples, tmp_path):
    preds = [perfect(tuples[0]), Prediction(tuples[1].comp, tuples[1].m_fs, BBox(3, 3, 2, 2))]
    rep = evaluate_dataset(preds, tuples[:2], config={"note": "x"}, label="demo")
    path = tmp_path / "r.json"
    rep.save(path)
    jsonschema.validate(json.loads(path.read_text()), REPORT_JSON_SCHEMA)
    back = MetricsReport.load(path)
    assert back == rep
    text = format_table([rep, back])
    assert "S-BER" in text and "demo" in text


def test_empty_rows_rejected():
    with pytest.raises(ValueError):
        MetricsReport.from_rows([])
