import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nlhelm import NonlocalPMLSolver
from nlhelm.analytic import exact_solution_exponential
from nlhelm.sources import wave_source_1d

K = 2 * math.pi


def test_fit_predict_1d():
    est = NonlocalPMLSolver(h=2**-6).fit()
    x = np.linspace(-0.9, 0.9, 7)[:, None]
    u = est.predict(x)
    ref = exact_solution_exponential(wave_source_1d(K), K, 0.9 / K, x[:, 0])
    assert np.max(np.abs(u - ref)) <= 0.05 * np.max(np.abs(ref))
    assert est.n_unknowns_ == est.system_.n_unknowns
    assert est.score(x, ref) > -0.05


def test_predict_outside_grid_is_zero():
    est = NonlocalPMLSolver(h=2**-4).fit()
    assert est.predict([[50.0]])[0] == 0


def test_params_roundtrip():
    est = NonlocalPMLSolver(c_gamma=0.2, h=0.125)
    assert clone(est).get_params()["c_gamma"] == 0.2
    est.set_params(shape="square")
    assert est.shape == "square"


def test_unfitted_and_bad_input():
    with pytest.raises(NotFittedError):
        NonlocalPMLSolver().predict([[0.0]])
    est = NonlocalPMLSolver(h=2**-4).fit()
    with pytest.raises(ValueError):
        est.predict([[0.0, 1.0]])
    with pytest.raises(ValueError):
        NonlocalPMLSolver(shape="triangle").fit()


def test_fit_2d():
    c = 0.1 / K
    est = NonlocalPMLSolver(kernel="Exponential2D", c_gamma=c, truncation_radius=20 * c, z=20j, shape="square",
                            h=2**-3, source="gaussian_2d_exp")
    est.fit()
    u = est.predict([[0.0, 0.0], [0.25, -0.5]])
    assert u.shape == (2,) and np.all(np.isfinite(u)) and abs(u[0]) > 0
    # the source and geometry are symmetric under x -> -x
    assert est.predict([[0.25, 0.5]])[0] == pytest.approx(est.predict([[-0.25, 0.5]])[0], rel=1e-8)
