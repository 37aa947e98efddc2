import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddtau.conformal import RectangleMap, sn_complex


@given(st.floats(-3, 3), st.floats(-1.2, 1.2), st.floats(0.05, 0.95))
def test_sn_against_mpmath(x, y, m):
    u = complex(x, y)
    ref = complex(mpmath.ellipfun("sn", u, m=m))
    assert abs(complex(sn_complex(u, m)) - ref) <= 1e-10 * max(1.0, abs(ref))


@pytest.mark.parametrize("W,H", [(16.0, 8.0), (5.0, 3.0), (2.0, 7.0)])
def test_rectangle_boundary(W, H):
    f = RectangleMap(W, H)
    k = np.sqrt(f.m)
    assert f(0.0) == pytest.approx(-1.0, abs=1e-12)
    assert f(W) == pytest.approx(1.0, abs=1e-12)
    assert f(complex(W, H)) == pytest.approx(1 / k, rel=1e-8)
    assert f(complex(0, H)) == pytest.approx(-1 / k, rel=1e-8)
    # even count keeps clear of the top midpoint, which goes to infinity
    xs = np.linspace(0.1, W - 0.1, 6)
    assert np.abs(f(xs).imag).max() <= 1e-12
    top = f(xs + 1j * H)
    # tall rectangles push the top side out near 1/k, where cancellation costs digits
    assert np.all(np.abs(top.imag) <= 1e-6 * np.abs(top))
    assert np.all(np.abs(top.real) >= 1 / k - 1e-8)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_interior_to_upper_half_plane(a, b):
    f = RectangleMap(16.0, 8.0)
    assert complex(f(complex(16 * a, 8 * b))).imag > 0


def test_centre_line_symmetry():
    f = RectangleMap(16.0, 8.0)
    z = complex(5.0, 2.5)
    w, wm = complex(f(z)), complex(f(complex(16 - z.real, z.imag)))
    assert wm == pytest.approx(-w.conjugate(), abs=1e-12)


def test_rejects_bad_sides():
    with pytest.raises(ValueError):
        RectangleMap(0.0, 1.0)
