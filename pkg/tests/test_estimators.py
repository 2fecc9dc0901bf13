import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from layerquant.estimators import (
    AdmmQuantizer,
    GPTQQuantizer,
    RTNQuantizer,
)
from layerquant.grid import GridSpec, fit_minmax, project
from layerquant.problem import LayerProblem
from layerquant.solvers import AdmmConfig, solve_admmq, solve_gptq, solve_rtn
from helpers import spd_problem


def calibration(seed, n=12, p=3, num_samples=48):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, p)), rng.standard_normal((num_samples, n))


class TestSklearnContract:
    def test_get_params_round_trips_through_clone(self):
        est = AdmmQuantizer(bits=3, iterations=40, seed=7)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_set_params_chains(self):
        est = RTNQuantizer()
        assert est.set_params(bits=2).bits == 2

    def test_transform_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            RTNQuantizer().transform(np.ones((2, 2)))

    def test_fit_returns_self_and_sets_attributes(self):
        w, x = calibration(0)
        est = GPTQQuantizer(bits=3)
        assert est.fit(w, activations=x) is est
        assert est.n_features_in_ == 12
        assert est.quantized_.shape == w.shape
        assert est.codes_.dtype == np.uint8
        assert est.objective_ >= 0.0
        assert est.grid_ is est.solution_.coded.grid

    def test_clone_then_fit_matches_original(self):
        w, x = calibration(1)
        est = AdmmQuantizer(bits=2, iterations=30)
        cloned = clone(est)
        a = est.fit(w, activations=x)
        b = cloned.fit(w, activations=x)
        assert np.array_equal(a.codes_, b.codes_)
        assert a.objective_ == b.objective_


class TestProblemAssembly:
    def test_both_calibration_kinds_rejected(self):
        w, x = calibration(2)
        with pytest.raises(ValueError, match="not both"):
            GPTQQuantizer().fit(w, activations=x, hessian=np.eye(12))

    def test_gptq_requires_calibration(self):
        w, _ = calibration(3)
        with pytest.raises(ValueError, match="calibration"):
            GPTQQuantizer().fit(w)

    def test_admm_requires_calibration(self):
        w, _ = calibration(4)
        with pytest.raises(ValueError, match="calibration"):
            AdmmQuantizer().fit(w)

    def test_rtn_defaults_to_identity_curvature(self):
        w, _ = calibration(5)
        est = RTNQuantizer(bits=3).fit(w)
        assert np.array_equal(est.problem_.hessian, np.eye(12))
        err = est.quantized_ - w
        assert est.objective_ == pytest.approx(
            0.5 * np.linalg.norm(err) ** 2, rel=1e-12
        )

    def test_hessian_used_as_is(self):
        w, _ = calibration(6)
        h = spd_problem(6, 12, 1).hessian
        est = GPTQQuantizer(bits=3).fit(w, hessian=h)
        assert np.array_equal(est.problem_.hessian, h)

    def test_hessian_plus_ridge(self):
        w, _ = calibration(7)
        h = spd_problem(7, 12, 1).hessian
        est = GPTQQuantizer(bits=3, ridge=0.5).fit(w, hessian=h)
        assert np.allclose(est.problem_.hessian, h + 0.5 * np.eye(12))

    def test_activations_build_damped_gram(self):
        w, x = calibration(8)
        est = RTNQuantizer(damp_factor=0.02).fit(w, activations=x)
        damping = 0.02 * np.trace(x.T @ x)
        assert est.problem_.damping == pytest.approx(damping, rel=1e-12)
        assert np.allclose(
            est.problem_.hessian, x.T @ x + damping * np.eye(12)
        )


class TestSolverParity:
    def test_rtn_parity(self):
        w, _ = calibration(9)
        est = RTNQuantizer(bits=3, fitting="minmax").fit(w)
        direct = solve_rtn(est.problem_, GridSpec(bits=3), "minmax")
        assert np.array_equal(est.codes_, direct.coded.codes)
        assert est.objective_ == direct.objective

    def test_gptq_parity(self):
        w, x = calibration(10)
        est = GPTQQuantizer(bits=3).fit(w, activations=x)
        direct = solve_gptq(est.problem_, GridSpec(bits=3))
        assert np.array_equal(est.codes_, direct.coded.codes)
        assert est.objective_ == direct.objective

    def test_admm_parity(self):
        w, x = calibration(11)
        est = AdmmQuantizer(bits=3, iterations=40, seed=3).fit(
            w, activations=x
        )
        config = AdmmConfig(grid=GridSpec(bits=3), iterations=40, seed=3)
        direct = solve_admmq(est.problem_, config)
        assert np.array_equal(est.codes_, direct.coded.codes)
        assert est.objective_ == direct.objective
        assert est.solution_.iterations == direct.iterations

    def test_grid_options_forwarded(self):
        w, _ = calibration(12)
        est = RTNQuantizer(
            bits=2, symmetric=True, granularity="per_tensor"
        ).fit(w)
        spec = est.grid_.spec
        assert spec.bits == 2
        assert spec.symmetric
        assert spec.granularity == "per_tensor"


class TestTransform:
    def test_transform_is_projection_onto_fitted_grid(self):
        w, x = calibration(13)
        est = GPTQQuantizer(bits=3).fit(w, activations=x)
        other = np.random.default_rng(99).standard_normal(w.shape)
        expected, _ = project(other, est.grid_)
        assert np.array_equal(est.transform(other), expected)

    def test_fit_transform_returns_solver_output_not_projection(self):
        w, x = calibration(14)
        est = AdmmQuantizer(bits=2, iterations=30)
        out = est.fit_transform(w, activations=x)
        assert np.array_equal(out, est.quantized_)
        # The compensating solver moved off the nearest-point map for at
        # least one entry, so projecting would change the answer.
        assert not np.array_equal(out, est.transform(w))

    def test_transform_shape_check(self):
        w, _ = calibration(15)
        est = RTNQuantizer().fit(w)
        with pytest.raises(ValueError, match="shape"):
            est.transform(np.ones((3, 3)))

    def test_transform_of_quantized_is_identity(self):
        w, _ = calibration(16)
        est = RTNQuantizer(bits=4).fit(w)
        assert np.array_equal(est.transform(est.quantized_), est.quantized_)


def test_grid_attribute_matches_direct_fit():
    w, _ = calibration(17)
    est = RTNQuantizer(bits=2, fitting="minmax").fit(w)
    want = fit_minmax(w, GridSpec(bits=2))
    assert np.array_equal(est.grid_.scale, want.scale)
    assert np.array_equal(est.grid_.zero, want.zero)


def test_admm_estimator_exposes_trace():
    w, x = calibration(18)
    est = AdmmQuantizer(bits=2, iterations=25).fit(w, activations=x)
    assert est.solution_.trace is not None
    assert est.solution_.iterations == len(est.solution_.trace)
