import math

import numpy as np
import pytest

from qregions.calibration import CalibrationSetTooSmallError
from qregions.naive_qr import (
    LEVELS_CENTERED,
    LEVELS_TAIL,
    NaiveModel,
    Rectangle,
    calibrate,
    cqr_score,
    cqr_scores,
    fit,
    membership_flags,
    quantile_levels,
    region,
)
from qregions.nn import MlpModel, TrainConfig, init_mlp
from qregions.numerics import Rng
from qregions.regions import AREA_MEASUREMENT, build_grid


def constant_net(p, value):
    net = init_mlp((p, 1), Rng(0))
    net.weights[0][...] = 0.0
    net.biases[0][...] = value
    return net


def box_model(lo_values, hi_values, alpha=0.1, offset=None):
    p = 1
    nets_lo = [constant_net(p, v) for v in lo_values]
    nets_hi = [constant_net(p, v) for v in hi_values]
    return NaiveModel(nets_lo, nets_hi, alpha, LEVELS_CENTERED, offset=offset)


class TestLevels:
    def test_centered_levels(self):
        assert quantile_levels(0.1, 2) == (0.025, 0.975)
        assert quantile_levels(0.1, 4) == pytest.approx((0.0125, 0.9875))

    def test_tail_variant(self):
        assert quantile_levels(0.1, 2, LEVELS_TAIL) == (0.05, 0.95)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            quantile_levels(0.1, 2, "median")


class TestCqrScore:
    def test_interior_point(self):
        model = box_model([0.0, 0.0], [1.0, 1.0])
        assert cqr_score(model, [0.0], [0.5, 0.5]) == pytest.approx(-0.5)

    def test_one_sided_exceedance(self):
        model = box_model([0.0, 0.0], [1.0, 1.0])
        assert cqr_score(model, [0.0], [2.0, 0.5]) == pytest.approx(1.0)

    def test_boundary_point(self):
        model = box_model([0.0, 0.0], [1.0, 1.0])
        assert cqr_score(model, [0.0], [1.0, 0.5]) == pytest.approx(0.0)


class TestCalibrate:
    def test_quantile_index(self):
        model = box_model([0.0], [1.0])
        rng = Rng(1)
        x = rng.uniform(size=(99, 1))
        y = rng.uniform(-1.0, 2.0, size=(99, 1))
        calibrated = calibrate(model, x, y, alpha=0.1)
        scores = np.sort(cqr_scores(model, x, y))
        assert calibrated.offset == pytest.approx(scores[89])

    def test_overcovering_base_shrinks(self):
        model = box_model([-10.0], [10.0])
        rng = Rng(2)
        x = rng.uniform(size=(99, 1))
        y = rng.uniform(-1.0, 1.0, size=(99, 1))
        calibrated = calibrate(model, x, y, alpha=0.1)
        assert calibrated.offset < 0.0
        box = region(calibrated, [0.0])
        assert box.lower[0] > -10.0 and box.upper[0] < 10.0

    def test_too_small_calibration_set(self):
        model = box_model([0.0], [1.0])
        with pytest.raises(CalibrationSetTooSmallError):
            calibrate(model, np.zeros((5, 1)), np.zeros((5, 1)), alpha=0.1)


class TestRegion:
    def test_zero_offset_degenerate_point(self):
        model = box_model([0.7, -0.2], [0.7, -0.2], offset=0.0)
        box = region(model, [0.0])
        assert np.allclose(box.lower, box.upper)
        assert box.contains([0.7, -0.2])
        assert box.volume() == 0.0

    def test_unit_square_widened_by_one(self):
        model = box_model([0.0, 0.0], [1.0, 1.0], offset=1.0)
        box = region(model, [0.0])
        assert np.allclose(box.lower, [-1.0, -1.0])
        assert np.allclose(box.upper, [2.0, 2.0])
        assert box.volume() == pytest.approx(9.0)

    def test_grid_count_matches_volume(self):
        responses = Rng(3).uniform(-2.0, 2.0, size=(400, 2))
        grid = build_grid(responses, 2, AREA_MEASUREMENT)
        model = box_model([-1.0, -0.5], [1.0, 1.5], offset=0.0)
        box = region(model, [0.0])
        count = box.grid_cell_count(grid)
        cell_area = float(np.prod(grid.cell_widths))
        # One cell layer per face of slack.
        per_face = 2 * (box.upper[0] - box.lower[0]) / grid.cell_widths[1] \
            + 2 * (box.upper[1] - box.lower[1]) / grid.cell_widths[0]
        assert abs(count - box.volume() / cell_area) <= per_face + 4

    def test_widening_monotonicity(self):
        narrow = region(box_model([0.0, 0.0], [1.0, 1.0], offset=0.1), [0.0])
        wide = region(box_model([0.0, 0.0], [1.0, 1.0], offset=0.5), [0.0])
        pts = Rng(4).uniform(-2, 3, size=(500, 2))
        assert np.all(wide.contains_batch(pts)[narrow.contains_batch(pts)])

    def test_membership_decomposes_per_coordinate(self):
        model = box_model([0.0, -1.0], [1.0, 1.0], offset=0.0)
        box = region(model, [0.0])
        pts = Rng(5).uniform(-2, 2, size=(200, 2))
        expected = np.array([
            all(box.lower[j] <= pt[j] <= box.upper[j] for j in range(2))
            for pt in pts
        ])
        assert np.array_equal(box.contains_batch(pts), expected)
        assert np.array_equal(
            membership_flags(model, np.zeros((200, 1)), pts), expected)


class TestOracleCoverage:
    def test_product_of_marginals(self):
        # With exact marginal quantiles on independent uniforms the
        # rectangle covers (1 - alpha/d)^d >= 1 - alpha.
        alpha, d, n = 0.1, 3, 40_000
        beta = alpha / d
        lo_values = [beta / 2.0] * d
        hi_values = [1.0 - beta / 2.0] * d
        model = box_model(lo_values, hi_values, alpha=alpha, offset=0.0)
        y = Rng(7).uniform(size=(n, d))
        hits = membership_flags(model, np.zeros((n, 1)), y)
        coverage = float(hits.mean())
        assert coverage >= 1 - alpha - 0.01
        assert coverage == pytest.approx((1 - beta) ** d, abs=0.008)


class TestFit:
    def test_constant_data_recovers_constant(self):
        rng = Rng(10)
        x = rng.uniform(-1, 1, size=(600, 1))
        y = np.full((600, 2), [0.4, -1.1])
        xv = rng.uniform(-1, 1, size=(128, 1))
        yv = np.full((128, 2), [0.4, -1.1])
        config = TrainConfig(learning_rate=5e-3, batch_size=128, max_epochs=300,
                             patience=300, seed=0)
        model = fit(x, y, xv, yv, alpha=0.1, config=config, hidden=(16,))
        lo, hi = model.bounds(np.array([[0.0]]))
        assert np.allclose(lo[0], [0.4, -1.1], atol=0.05)
        assert np.allclose(hi[0], [0.4, -1.1], atol=0.05)

    def test_conformal_coverage_after_fit(self):
        # End to end on heteroscedastic data: coverage lands near 1 - alpha.
        rng = Rng(20)

        def draw(n):
            x = rng.uniform(-1, 1, size=(n, 1))
            noise = rng.standard_normal(size=(n, 2))
            y = np.column_stack([x[:, 0], -x[:, 0]]) + 0.3 * noise
            return x, y

        x, y = draw(1500)
        xv, yv = draw(400)
        config = TrainConfig(learning_rate=1e-3, batch_size=256, max_epochs=150,
                             patience=30, seed=1)
        model = fit(x, y, xv, yv, alpha=0.1, config=config, hidden=(32, 32))
        xc, yc = draw(999)
        calibrated = calibrate(model, xc, yc, alpha=0.1)
        xt, yt = draw(4000)
        coverage = float(membership_flags(calibrated, xt, yt).mean())
        assert 0.86 <= coverage <= 0.94


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        model = box_model([0.0, -1.0], [1.0, 2.0], offset=0.35)
        model.save(tmp_path / "naive")
        loaded = NaiveModel.load(tmp_path / "naive")
        assert loaded.offset == model.offset
        assert loaded.scheme == model.scheme
        x = Rng(0).uniform(size=(5, 1))
        lo_a, hi_a = model.bounds(x)
        lo_b, hi_b = loaded.bounds(x)
        assert np.array_equal(lo_a, lo_b)
        assert np.array_equal(hi_a, hi_b)
