import numpy as np
import pytest

from auctionrisk.errors import DomainError
from auctionrisk.kernels import EPANECHNIKOV, KernelSpec, PolyBasis, gauss_legendre


class TestGaussLegendre:
    def test_order_two_textbook(self):
        rule = gauss_legendre(2)
        np.testing.assert_allclose(np.sort(rule.nodes), [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-15)
        np.testing.assert_allclose(rule.weights, [1.0, 1.0], atol=1e-15)

    def test_weights_sum_to_two(self):
        for order in (2, 5, 33, 64):
            assert gauss_legendre(order).weights.sum() == pytest.approx(2.0, abs=1e-12)

    def test_exact_for_squares_at_order_two(self):
        rule = gauss_legendre(2)
        assert rule.weights @ rule.nodes**2 == pytest.approx(2.0 / 3.0, abs=1e-14)

    @pytest.mark.parametrize("order", [3, 8, 17])
    def test_polynomial_exactness_degree(self, order):
        # exact through degree 2*order-1; analytic moments of t^k on [-1,1]
        rule = gauss_legendre(order)
        rng = np.random.default_rng(order)
        coeffs = rng.standard_normal(2 * order)
        vals = np.polynomial.polynomial.polyval(rule.nodes, coeffs)
        truth = sum(c * ((1 - (-1) ** (k + 1)) / (k + 1)) for k, c in enumerate(coeffs))
        assert rule.weights @ vals == pytest.approx(truth, rel=1e-13, abs=1e-13)

    def test_mapped_interval(self):
        rule = gauss_legendre(5)
        nodes, weights = rule.mapped(0.25, 0.75)
        assert nodes.min() > 0.25 and nodes.max() < 0.75
        assert weights.sum() == pytest.approx(0.5, abs=1e-14)

    def test_order_validation(self):
        with pytest.raises(DomainError):
            gauss_legendre(1)


class TestEpanechnikov:
    def test_unit_integral_by_quadrature(self):
        for order in (3, 33):
            rule = gauss_legendre(order)
            assert rule.weights @ EPANECHNIKOV(rule.nodes) == pytest.approx(1.0, abs=1e-10)

    def test_symmetric_nonnegative(self):
        t = np.linspace(-1, 1, 501)
        vals = EPANECHNIKOV(t)
        assert np.all(vals >= 0)
        np.testing.assert_allclose(vals, EPANECHNIKOV(-t), atol=1e-15)

    def test_zero_outside_support(self):
        assert EPANECHNIKOV(1.0001) == 0.0
        assert EPANECHNIKOV(-3.0) == 0.0

    def test_known_value(self):
        assert EPANECHNIKOV(0.0) == pytest.approx(0.75)

    def test_unknown_kind_rejected(self):
        with pytest.raises(DomainError):
            KernelSpec(kind="gaussian")


class TestPolyBasis:
    def test_rows(self):
        basis = PolyBasis(3)
        row = basis.pi(2.0)
        np.testing.assert_allclose(row, [1.0, 2.0, 2.0, 8.0 / 6.0])
        assert row.shape == (4,)

    def test_design_is_kronecker(self):
        basis = PolyBasis(2)
        x1 = np.array([1.0, 0.3, -0.7])
        row = basis.design([0.3, -0.7], 0.5)
        expect = np.kron(basis.pi(0.5), x1)
        np.testing.assert_allclose(row, expect)
        assert row.size == basis.dim(2)

    def test_order_validation(self):
        with pytest.raises(DomainError):
            PolyBasis(0)
