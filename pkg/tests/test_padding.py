import math

import numpy as np
import pytest

from encsearch.errors import PaddingError
from encsearch.padding import (
    EquilibriumReport,
    NoiseModel,
    SigmaRow,
    distinguishability,
    optimize_noise,
    pad_matrix,
    pad_partition,
    uniform_to_normal,
)
from encsearch.weighting import WeightedIndex


class TestUniformToNormal:
    def test_reference_arithmetic(self):
        mu, var = uniform_to_normal(0.0, 0.1, 3)
        assert mu == 0.0
        assert var == pytest.approx(0.01)

    def test_zero_width(self):
        assert uniform_to_normal(0.0, 0.0, 5) == (0.0, 0.0)

    def test_inverted(self):
        _, var = uniform_to_normal(0.0, math.sqrt(3) * 0.05, 1)
        assert math.sqrt(var) == pytest.approx(0.05)

    def test_nonzero_mean(self):
        mu, _ = uniform_to_normal(0.2, 0.1, 4)
        assert mu == pytest.approx(0.8)

    def test_errors(self):
        with pytest.raises(PaddingError):
            uniform_to_normal(0.0, -0.1, 2)
        with pytest.raises(PaddingError):
            uniform_to_normal(0.0, 0.1, 0)


class TestNoiseModel:
    def test_omega_exceeds_u(self):
        with pytest.raises(PaddingError, match="omega"):
            NoiseModel(pseudo_count=4, sigma=0.1, omega=5)

    def test_negative_params(self):
        with pytest.raises(PaddingError):
            NoiseModel(pseudo_count=-1, sigma=0.1, omega=0)
        with pytest.raises(PaddingError):
            NoiseModel(pseudo_count=4, sigma=-0.1, omega=2)

    def test_from_uniform(self):
        m = NoiseModel.from_uniform(10, 0.0, math.sqrt(3) * 0.05, 1)
        assert m.sigma == pytest.approx(0.05)

    def test_default_sizing(self):
        m = NoiseModel.default_for(1000, 0.05)
        assert m.pseudo_count == 100
        assert m.omega == 50


class TestPadMatrix:
    def test_sigma_zero_pseudo_entries_zero(self):
        values = np.random.default_rng(0).random((5, 4))
        model = NoiseModel(pseudo_count=3, sigma=0.0, omega=2, seed=1)
        padded = pad_matrix(values, model)
        assert padded.shape == (5, 7)
        assert not padded[:, 4:].any()

    def test_u_zero_identity(self):
        values = np.random.default_rng(0).random((3, 4))
        model = NoiseModel(pseudo_count=0, sigma=0.5, omega=0)
        np.testing.assert_array_equal(pad_matrix(values, model), values)

    def test_real_prefix_preserved(self):
        values = np.random.default_rng(2).random((6, 5))
        model = NoiseModel(pseudo_count=4, sigma=0.3, omega=2, seed=7)
        padded = pad_matrix(values, model)
        np.testing.assert_array_equal(padded[:, :5], values)

    def test_omega_nonzeros_per_row(self):
        values = np.zeros((10, 2))
        model = NoiseModel(pseudo_count=8, sigma=0.5, omega=3, seed=3)
        padded = pad_matrix(values, model)
        counts = (padded[:, 2:] != 0).sum(axis=1)
        assert (counts == 3).all()

    def test_sample_std_within_ten_percent(self):
        values = np.zeros((1000, 1))
        model = NoiseModel(pseudo_count=10, sigma=0.05, omega=5, seed=0)
        padded = pad_matrix(values, model)
        eps = padded[:, 1:][padded[:, 1:] != 0]
        assert np.std(eps) == pytest.approx(0.05, rel=0.10)

    def test_clamped(self):
        values = np.zeros((200, 1))
        model = NoiseModel(pseudo_count=4, sigma=5.0, omega=2, seed=0)
        padded = pad_matrix(values, model)
        assert padded.max() <= 1.0 and padded.min() >= -1.0

    def test_deterministic_and_common_random_numbers(self):
        values = np.random.default_rng(4).random((8, 3))
        a = pad_matrix(values, NoiseModel(6, 0.05, 3, seed=9))
        b = pad_matrix(values, NoiseModel(6, 0.05, 3, seed=9))
        np.testing.assert_array_equal(a, b)
        # Same seed at doubled sigma scales the identical noise pattern.
        c = pad_matrix(values, NoiseModel(6, 0.10, 3, seed=9))
        mask = a[:, 3:] != 0
        np.testing.assert_array_equal(mask, c[:, 3:] != 0)
        np.testing.assert_allclose(c[:, 3:][mask], 2.0 * a[:, 3:][mask])


def test_pad_partition():
    weighted = [
        WeightedIndex(doc_id=i, owner_id=1, partition=0, values=np.full(3, 0.5))
        for i in range(4)
    ]
    model = NoiseModel(pseudo_count=2, sigma=0.1, omega=1, seed=5)
    out = pad_partition(weighted, model)
    assert [s.doc_id for s in out] == [0, 1, 2, 3]
    for s in out:
        assert s.values.shape == (5,)
        np.testing.assert_array_equal(s.values[:3], 0.5)
    assert pad_partition([], model) == []


class TestDistinguishability:
    def test_identical_distributions_near_half(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=400)
        b = rng.normal(size=400)
        assert distinguishability(a, b) == pytest.approx(0.5, abs=0.05)

    def test_disjoint_support_separable(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=400) + 10.0
        b = rng.normal(size=400)
        assert distinguishability(a, b) >= 0.95

    def test_errors(self):
        with pytest.raises(PaddingError):
            distinguishability([], [1.0])
        with pytest.raises(PaddingError):
            distinguishability([1.0, 2.0], [1.0])


class FakeHandle:
    """Deterministic sweep handle: higher sigma shuffles more of the top-k."""

    def __init__(self):
        self.sigma = 0.0
        self.exact = [list(range(20))]

    def set_sigma(self, sigma):
        self.sigma = sigma

    def exact_query(self, query, k):
        return [(d, 100.0 - d) for d in self.exact[query][:k]]

    def run_query(self, query, k):
        swaps = int(self.sigma * 100)
        order = list(self.exact[query])
        for i in range(min(swaps, len(order) - 1)):
            order[i], order[i + 1] = order[i + 1], order[i]
        return [(d, 100.0 - d + self.sigma) for d in order[:k]]


class TestOptimizeNoise:
    def test_empty_grid(self):
        with pytest.raises(PaddingError):
            optimize_noise(FakeHandle(), [], 5, [0])

    def test_rows_and_argmax(self):
        report = optimize_noise(FakeHandle(), [0.01, 0.05, 0.1], 10, [0])
        assert len(report.rows) == 3
        best = max(report.rows, key=lambda r: r.f)
        assert report.sigma_star == best.sigma
        assert report.best_f == best.f
        for r in report.rows:
            # f is recomputed exactly from the stored x and y.
            assert r.f == pytest.approx(
                (100 * r.precision) ** 2 / 95 + (100 * r.rank_privacy) ** 2 / 80, abs=1e-12
            )

    def test_csv(self, tmp_path):
        report = EquilibriumReport(
            [SigmaRow(0.01, 0.99, 0.05, 104.0, 0.5), SigmaRow(0.02, 0.98, 0.1, 110.0, 0.5)]
        )
        path = tmp_path / "eq.csv"
        report.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "sigma,precision,rank_privacy,f,discriminator_accuracy,is_optimum"
        assert len(lines) == 3
        assert lines[2].endswith(",1")  # sigma=0.02 row is the optimum
