import numpy as np
import pytest

from ctxsim import autodiff as ad
from ctxsim.gradcheck import (
    check,
    misranked_negative_batch,
    negative_pair_sign_table,
    numerical_grad,
    relative_error,
    ste_gain,
)
from ctxsim.similarity import neighborhoods


def test_relative_error():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 0.0]), np.array([0.0, 0.0])) == 1.0


def test_numerical_grad_marks_unstable():
    x = np.array([[0.0, 1.0]])
    grads, stable = numerical_grad(lambda a: float(np.abs(a).sum()), [x], signature=lambda a: (a > 0).tobytes())
    assert stable[0].tolist() == [[False, True]]
    assert np.isnan(grads[0][0, 0]) and grads[0][0, 1] == pytest.approx(1.0)


def test_check_agrees_and_disagrees():
    x = np.array([[0.3, -0.7]])
    assert check(lambda t: ad.sum(ad.square(t)), [x]) < 1e-8
    # stop_gradient hides half of d(x*x)/dx from the tape
    assert check(lambda t: ad.sum(ad.mul(t, ad.stop_gradient(t))), [x]) == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("alpha", [0.5, 10.0])
def test_ste_gain(alpha):
    np.testing.assert_array_equal(ste_gain(alpha, [-3.0, -1e-9, 0.0, 2.0]), np.full((1, 4), alpha))


class TestSignTable:
    def test_construction(self):
        F, labels, i, j = misranked_negative_batch()
        sets = neighborhoods(F @ F.T, 4, 0.0)
        assert j in sets[i] and labels[i] != labels[j]
        assert all(labels[p] == labels[j] for p in sets[j])

    def test_all_rows_match(self):
        rows, ctx = negative_pair_sign_table()
        assert len(rows) == 2 * (12 - 2)
        assert all(r.ok for r in rows), [r for r in rows if not r.ok]
        assert ctx["j_in_N(i)"] and ctx["labels_differ"] and ctx["g"] > 0

    def test_both_regimes_present(self):
        rows, _ = negative_pair_sign_table()
        inside = {r.in_partner_neighborhood for r in rows}
        assert inside == {True, False}
        mags = {round(r.predicted_magnitude, 12) for r in rows}
        # n - k differs from k, so the two magnitudes are distinguishable
        assert len(mags) == 2

    def test_scales_with_alpha(self):
        a, _ = negative_pair_sign_table(alpha=10.0)
        b, _ = negative_pair_sign_table(alpha=1.0)
        for ra, rb in zip(a, b):
            assert ra.measured == pytest.approx(10 * rb.measured, rel=1e-12)
