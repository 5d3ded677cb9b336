import numpy as np
import pytest

from qregions.metrics import (
    ClusterAssignment,
    ConstraintUnsatisfiedError,
    EvaluationReport,
    cluster_coverages,
    coverage,
    delta_coverage,
    kmeans,
    membership_flags,
    within_cluster_ss,
)
from qregions.numerics import Rng


class AllRule:
    def contains(self, x, y):
        return True


class NoneRule:
    def contains(self, x, y):
        return False


class BallRule:
    def __init__(self, radius):
        self.radius = radius

    def contains(self, x, y):
        return bool(np.linalg.norm(np.asarray(y)) <= self.radius)


class TestCoverage:
    def test_extremes(self):
        x = np.zeros((10, 1))
        y = Rng(0).uniform(size=(10, 2))
        assert coverage(AllRule(), x, y) == 1.0
        assert coverage(NoneRule(), x, y) == 0.0

    def test_matches_flag_mean(self):
        rng = Rng(1)
        x = np.zeros((200, 1))
        y = rng.standard_normal(size=(200, 2))
        rule = BallRule(1.2)
        flags = membership_flags(rule, x, y)
        assert coverage(rule, x, y) == pytest.approx(flags.mean())

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            coverage(AllRule(), np.zeros((0, 1)), np.zeros((0, 2)))


class TestKmeans:
    def test_recovers_separated_blobs(self):
        rng = Rng(5)
        blobs = [np.array([0.0, 0.0]), np.array([10.0, 0.0]), np.array([0.0, 10.0])]
        x = np.concatenate([
            center + 0.3 * rng.standard_normal(size=(100, 2)) for center in blobs
        ])
        truth = np.repeat([0, 1, 2], 100)
        result = kmeans(x, k=3, seed=0)
        # Compare up to label permutation via centroid matching.
        order = [int(np.argmin(np.linalg.norm(result.centroids - c, axis=1)))
                 for c in blobs]
        assert sorted(order) == [0, 1, 2]
        relabeled = np.array([order[t] for t in truth])
        assert np.mean(relabeled == result.labels) == 1.0

    def test_single_cluster_is_mean(self):
        x = Rng(2).uniform(size=(50, 3))
        result = kmeans(x, k=1, seed=0)
        assert np.allclose(result.centroids[0], x.mean(axis=0))
        assert np.all(result.labels == 0)

    def test_duplicate_rows_collapse(self):
        x = np.tile([1.5, -2.0], (40, 1))
        result = kmeans(x, k=3, seed=0)
        assert result.k == 1
        assert np.all(result.labels == 0)

    def test_restart_budget_error_carries_best(self):
        # 96% of mass in one blob: no 3-clustering has all clusters >= 20%.
        rng = Rng(9)
        x = np.concatenate([
            0.1 * rng.standard_normal(size=(480, 2)),
            np.array([50.0, 50.0]) + 0.1 * rng.standard_normal(size=(10, 2)),
            np.array([-50.0, 50.0]) + 0.1 * rng.standard_normal(size=(10, 2)),
        ])
        with pytest.raises(ConstraintUnsatisfiedError) as err:
            kmeans(x, k=3, seed=0, restarts=5)
        assert isinstance(err.value.best_attempt, ClusterAssignment)

    def test_objective_nonincreasing_over_restarts_winner(self):
        x = Rng(11).uniform(size=(300, 2))
        result = kmeans(x, k=3, seed=1)
        # The fixpoint cannot be improved by one more Lloyd sweep.
        dist_sq = ((x[:, None, :] - result.centroids[None, :, :]) ** 2).sum(axis=2)
        reassigned = dist_sq.argmin(axis=1)
        recentred = np.stack([x[reassigned == j].mean(axis=0) for j in range(3)])
        after = float(((x - recentred[reassigned]) ** 2).sum())
        assert after <= within_cluster_ss(x, result) + 1e-9


class TestDeltaCoverage:
    def test_exact_nominal_coverage_gives_zero(self):
        flags = np.array([True] * 9 + [False])  # 90% in every cluster
        labels = np.tile(np.arange(1), 10)
        clusters = ClusterAssignment(centroids=np.zeros((1, 2)), labels=labels)
        x = np.zeros((10, 1))
        y = np.zeros((10, 2))
        got = delta_coverage(None, x, y, clusters, alpha=0.1, flags=flags)
        assert got == pytest.approx(0.0)

    def test_hand_computed_value(self):
        # Cluster coverages 1.0, 0.8, 0.9 at alpha=0.1.
        flags = np.array([True] * 10 + [True] * 8 + [False] * 2 + [True] * 9 + [False])
        labels = np.repeat([0, 1, 2], 10)
        clusters = ClusterAssignment(centroids=np.zeros((3, 2)), labels=labels)
        got = delta_coverage(None, np.zeros((30, 1)), np.zeros((30, 2)),
                             clusters, alpha=0.1, flags=flags)
        assert got == pytest.approx((0.1 + 0.1 + 0.0) / 3)

    def test_empty_cluster_rejected(self):
        flags = np.ones(5, dtype=bool)
        clusters = ClusterAssignment(centroids=np.zeros((2, 2)),
                                     labels=np.zeros(5, dtype=int))
        with pytest.raises(ValueError):
            delta_coverage(None, np.zeros((5, 1)), np.zeros((5, 2)),
                           clusters, alpha=0.1, flags=flags)

    def test_total_coverage_is_size_weighted_cluster_mean(self):
        rng = Rng(3)
        flags = rng.uniform(size=100) < 0.85
        labels = rng.integers(0, 3, size=100)
        clusters = ClusterAssignment(centroids=np.zeros((3, 1)), labels=labels)
        per_cluster = cluster_coverages(flags, labels, 3)
        sizes = clusters.sizes()
        weighted = float(np.dot(per_cluster, sizes) / sizes.sum())
        assert weighted == pytest.approx(float(flags.mean()))


class TestEvaluationReport:
    def test_validation(self):
        with pytest.raises(ValueError):
            EvaluationReport(method="m", coverage=1.5, coverage_se=0.0,
                             area=1.0, area_se=0.0)
        report = EvaluationReport(method="m", coverage=0.9, coverage_se=0.01,
                                  area=300.0, area_se=5.0)
        assert report.to_dict()["method"] == "m"
