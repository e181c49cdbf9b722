import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auctionrisk.errors import DomainError
from auctionrisk.orderstat import bell_compose, bell_partial, phi, phi_deriv, phi_inverse


def central_diff(f, x, step=1e-6):
    return (f(x + step) - f(x - step)) / (2.0 * step)


class TestPhi:
    def test_boundaries(self):
        assert phi(0.0, 3) == 0.0
        assert phi(1.0, 5) == 1.0

    def test_two_bidders_midpoint(self):
        assert phi(0.5, 2) == pytest.approx(0.75, abs=1e-15)

    def test_three_bidders_midpoint(self):
        assert phi(0.5, 3) == pytest.approx(0.5, abs=1e-15)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            phi(-0.1, 3)
        with pytest.raises(DomainError):
            phi(1.1, 3)
        with pytest.raises(DomainError):
            phi(0.5, 1)
        with pytest.raises(DomainError):
            phi(0.5, 2.5)

    @given(
        a1=st.floats(0.001, 0.999),
        a2=st.floats(0.001, 0.999),
        n=st.integers(2, 12),
    )
    def test_strictly_increasing(self, a1, a2, n):
        lo, hi = sorted((a1, a2))
        if hi - lo > 1e-12:
            assert phi(hi, n) > phi(lo, n)

    def test_vectorized(self):
        a = np.linspace(0, 1, 11)
        np.testing.assert_allclose(phi(a, 4), [phi(float(v), 4) for v in a])


class TestPhiDeriv:
    def test_vanishes_at_one(self):
        assert phi_deriv(1.0, 3, 1) == 0.0

    def test_two_bidder_midpoint(self):
        assert phi_deriv(0.5, 2, 1) == pytest.approx(1.0, abs=1e-15)

    def test_first_derivative_value(self):
        # independent check: central finite difference of phi itself
        fd = central_diff(lambda a: phi(a, 3), 0.3)
        assert phi_deriv(0.3, 3, 1) == pytest.approx(1.26, abs=1e-9)
        assert phi_deriv(0.3, 3, 1) == pytest.approx(fd, abs=1e-6)

    def test_matches_finite_differences_on_grid(self):
        for n in (2, 3, 5, 9):
            grid = np.linspace(0.05, 0.95, 19)
            fd = np.array([central_diff(lambda a: phi(a, n), g) for g in grid])
            np.testing.assert_allclose(phi_deriv(grid, n, 1), fd, atol=1e-6)

    def test_second_derivative_matches_finite_differences(self):
        for n in (3, 4, 6):
            grid = np.linspace(0.1, 0.9, 9)
            fd = np.array([central_diff(lambda a: phi_deriv(a, n, 1), g, 1e-6) for g in grid])
            np.testing.assert_allclose(phi_deriv(grid, n, 2), fd, atol=1e-5)

    def test_higher_orders_vanish(self):
        assert phi_deriv(0.4, 3, 4) == 0.0
        assert phi_deriv(0.4, 2, 3) == 0.0

    def test_order_validation(self):
        with pytest.raises(DomainError):
            phi_deriv(0.5, 3, 0)


class TestPhiInverse:
    def test_examples(self):
        assert phi_inverse(0.75, 2) == pytest.approx(0.5, abs=1e-12)
        assert phi_inverse(0.0, 4) == 0.0
        assert phi_inverse(1.0, 4) == 1.0
        assert phi_inverse(0.5, 3) == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 5, 8])
    def test_round_trip(self, n):
        a = np.arange(1, 100) * 0.01
        np.testing.assert_allclose(phi_inverse(phi(a, n), n), a, atol=1e-10)

    @pytest.mark.parametrize("n", [3, 7])
    def test_near_boundary(self, n):
        # phi' vanishes at the endpoints, where plain Newton would stall
        for p in (1e-12, 1e-8, 1 - 1e-8, 1 - 1e-12):
            a = phi_inverse(p, n)
            assert abs(phi(a, n) - p) <= 1e-12

    def test_domain(self):
        with pytest.raises(DomainError):
            phi_inverse(-0.2, 3)


def poly_compose_oracle(j, t0, step=1e-4):
    """Finite-difference j-th derivative of g(f(t)) with f=t^2, g=u^3 at t0."""

    def comp(t):
        return (t**2) ** 3

    if j == 1:
        return central_diff(comp, t0, step)
    if j == 2:
        return (comp(t0 + step) - 2 * comp(t0) + comp(t0 - step)) / step**2
    if j == 3:
        return (
            comp(t0 + 2 * step) - 2 * comp(t0 + step) + 2 * comp(t0 - step) - comp(t0 - 2 * step)
        ) / (2 * step**3)
    raise ValueError(j)


class TestBellCompose:
    def _derivs(self, t0):
        f = [2 * t0, 2.0, 0.0]
        u = t0**2
        g = [3 * u**2, 6 * u, 6.0]
        return f, g

    def test_chain_rule_order_one(self):
        f, g = self._derivs(0.7)
        assert bell_compose(1, f, g) == pytest.approx(g[0] * f[0], abs=1e-14)

    def test_order_two_structure(self):
        # second derivative of a composition: g''*(f')^2 + g'*f''
        f, g = self._derivs(0.7)
        expect = g[1] * f[0] ** 2 + g[0] * f[1]
        assert bell_compose(2, f, g) == pytest.approx(expect, abs=1e-12)

    @pytest.mark.parametrize("j", [1, 2, 3])
    def test_against_finite_differences(self, j):
        f, g = self._derivs(0.7)
        assert bell_compose(j, f, g) == pytest.approx(poly_compose_oracle(j, 0.7), abs=1e-4)

    def test_partial_bell_small_cases(self):
        x = [2.0, 5.0, 7.0]
        assert bell_partial(2, 1, x) == pytest.approx(5.0)
        assert bell_partial(2, 2, x) == pytest.approx(4.0)
        assert bell_partial(3, 2, x) == pytest.approx(3 * 2.0 * 5.0)

    def test_order_zero_rejected(self):
        with pytest.raises(DomainError):
            bell_compose(0, [1.0], [1.0])

    def test_short_input_rejected(self):
        with pytest.raises(DomainError):
            bell_compose(3, [1.0, 2.0], [1.0, 2.0, 3.0])

    @settings(max_examples=25)
    @given(t0=st.floats(0.2, 1.5), c=st.floats(-2, 2))
    def test_exp_of_cubic_third_derivative(self, t0, c):
        # composite exp(c * t^3): analytic inner/outer derivatives
        inner = [3 * c * t0**2, 6 * c * t0, 6 * c]
        u = c * t0**3
        outer = [np.exp(u)] * 3
        step = 1e-3

        def comp(t):
            return np.exp(c * t**3)

        fd3 = (
            comp(t0 + 2 * step) - 2 * comp(t0 + step) + 2 * comp(t0 - step) - comp(t0 - 2 * step)
        ) / (2 * step**3)
        got = bell_compose(3, inner, outer)
        assert got == pytest.approx(fd3, rel=2e-3, abs=1e-4)
