"""
SDE 核心测试 — Brownian 增量、步进器、随机积分、演算转换
运行: python -m pytest tests/test_sde_core.py -v
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from manifold_sde.errors import CalculusMismatchError, GridError, NonPolynomialError
from manifold_sde.services.fields import (
    CallableMatrixField,
    PolynomialMatrixField,
    PolynomialScalarField,
    PolynomialVectorField,
    SummedField,
)
from manifold_sde.services.sde_core import (
    BrownianPath,
    Calculus,
    SdeSystem,
    convert_calculus,
    drift_correction,
    euler_maruyama_step,
    heun_step,
    integral_convergence_table,
    ito_integral,
    ito_correction_field,
    sample_brownian_path,
    sample_increments,
    simulate,
    simulate_on_path,
    step_count,
    stratonovich_integral,
)
from manifold_sde.services.system_registry import example1_ito, example1_strat, example2


def poly(dim, coefficients):
    return PolynomialScalarField.from_dict(dim, coefficients)


def scalar_system(drift_coeffs, diffusion_coeffs, calculus):
    drift = PolynomialVectorField(1, (poly(1, drift_coeffs),))
    diffusion = PolynomialMatrixField(1, 1, ((poly(1, diffusion_coeffs),),))
    return SdeSystem(drift, diffusion, calculus, "scalar")


def gbm(calculus=Calculus.STRATONOVICH):
    """dX = X dt + X∘dW"""
    return scalar_system({(1,): 1.0}, {(1,): 1.0}, calculus)


class TestBrownianPath:
    """增量采样: 可复现、方差正确、W(0) = 0"""

    def test_same_seed_identical(self):
        a = sample_brownian_path(2, 1.0, 1e-3, seed=17)
        b = sample_brownian_path(2, 1.0, 1e-3, seed=17)
        assert np.array_equal(a.increments, b.increments)

    def test_different_seed_differs(self):
        a = sample_brownian_path(1, 1.0, 1e-3, seed=1)
        b = sample_brownian_path(1, 1.0, 1e-3, seed=2)
        assert not np.array_equal(a.increments, b.increments)

    def test_variance(self):
        path = sample_brownian_path(1, 10.0, 1e-3, seed=0)
        assert path.increments.shape == (10000, 1)
        var = np.var(path.increments)
        assert 0.9e-3 <= var <= 1.1e-3

    def test_values_start_at_zero(self):
        path = sample_brownian_path(3, 0.5, 1e-2, seed=4)
        assert np.array_equal(path.values[0], np.zeros(3))
        assert np.allclose(path.values[-1], path.increments.sum(axis=0))

    def test_non_integer_grid(self):
        with pytest.raises(GridError):
            sample_brownian_path(1, 1.0, 0.3, seed=0)
        with pytest.raises(GridError):
            step_count(1.0, -1e-3)

    def test_ensemble_matches_single_path(self):
        path = sample_brownian_path(2, 1.0, 1e-2, seed=9)
        batch = sample_increments(2, 100, 1e-2, 9, range(3))
        assert np.array_equal(batch[0], path.increments)

    def test_coarsen(self):
        path = sample_brownian_path(1, 1.0, 1e-3, seed=3)
        coarse = path.coarsen(10)
        assert coarse.steps == 100
        assert coarse.step == pytest.approx(1e-2)
        assert np.allclose(coarse.values[-1], path.values[-1], atol=1e-14)
        with pytest.raises(GridError):
            path.coarsen(7)


class TestSteppers:
    """Euler–Maruyama 与 Heun"""

    def test_em_pure_noise(self):
        sys_ = scalar_system({}, {(0,): 1.0}, Calculus.ITO)
        assert np.array_equal(euler_maruyama_step(sys_, [0.0], [0.3], 0.01), [0.3])

    def test_em_deterministic_decay(self):
        sys_ = scalar_system({(1,): -1.0}, {}, Calculus.ITO)
        assert euler_maruyama_step(sys_, [1.0], [0.0], 0.1)[0] == pytest.approx(0.9, abs=1e-15)

    def test_em_example1(self):
        out = euler_maruyama_step(example1_ito(), [1.0, 1.0], [0.0, 0.0], 0.01)
        assert np.allclose(out, [0.99, 0.98], atol=1e-15)

    def test_heun_deterministic_decay(self):
        sys_ = scalar_system({(1,): -1.0}, {}, Calculus.STRATONOVICH)
        assert heun_step(sys_, [1.0], [0.0], 0.1)[0] == pytest.approx(0.905, abs=1e-15)

    def test_heun_equals_em_for_constant_noise(self):
        ito = scalar_system({}, {(0,): 0.7}, Calculus.ITO)
        strat = scalar_system({}, {(0,): 0.7}, Calculus.STRATONOVICH)
        assert np.array_equal(heun_step(strat, [0.2], [0.13], 0.01), euler_maruyama_step(ito, [0.2], [0.13], 0.01))

    def test_heun_linear_hand_computation(self):
        h, dw = 0.01, 0.05
        predictor = 1.0 + h + dw
        expected = 1.0 + 0.5 * (1.0 + predictor) * h + 0.5 * (1.0 + predictor) * dw
        assert heun_step(gbm(), [1.0], [dw], h)[0] == pytest.approx(expected, abs=1e-15)

    def test_calculus_flags_enforced(self):
        with pytest.raises(CalculusMismatchError):
            euler_maruyama_step(example1_strat(), [0.0, 0.0], [0.0, 0.0], 0.01)
        with pytest.raises(CalculusMismatchError):
            heun_step(example1_ito(), [0.0, 0.0], [0.0, 0.0], 0.01)

    def test_batched_step(self):
        sys_ = example1_ito()
        pts = np.array([[0.1, 0.2], [0.3, -0.4]])
        dws = np.array([[0.01, -0.02], [0.0, 0.03]])
        batch = euler_maruyama_step(sys_, pts, dws, 0.01)
        for i in range(2):
            assert np.array_equal(batch[i], euler_maruyama_step(sys_, pts[i], dws[i], 0.01))


class TestSimulate:
    """轨道模拟与强收敛"""

    def test_constant_trajectory(self):
        sys_ = SdeSystem(PolynomialVectorField.zero(2), PolynomialMatrixField.zero(2, 1), Calculus.ITO)
        traj = simulate(sys_, [0.3, -0.2], 1.0, 0.1, seed=0)
        assert traj.states.shape == (11, 2)
        assert np.all(traj.states == np.array([0.3, -0.2]))
        assert traj.lifetime is None

    def test_deterministic_first_order(self):
        sys_ = scalar_system({(1,): -1.0}, {}, Calculus.ITO)
        errors = [abs(simulate(sys_, [1.0], 1.0, h, 0).final_state[0] - np.exp(-1.0)) for h in (1e-2, 5e-3)]
        assert errors[0] / errors[1] == pytest.approx(2.0, abs=0.1)

    def test_heun_strong_convergence(self):
        """dX = X dt + X∘dW 的精确解 x0·exp(T + W_T), 共享细路径"""
        steps = (1e-2, 5e-3, 2.5e-3)
        errors = []
        for h in steps:
            total = 0.0
            for trajectory in range(200):
                fine = BrownianPath(2.5e-3, 400, sample_increments(1, 400, 2.5e-3, 21, [trajectory])[0])
                path = fine.coarsen(int(round(h / 2.5e-3)))
                exact = np.exp(1.0 + fine.values[-1, 0])
                total += abs(simulate_on_path(gbm(), [1.0], path).final_state[0] - exact)
            errors.append(total / 200)
        assert errors[0] > errors[1] > errors[2]
        order = np.polyfit(np.log(steps), np.log(errors), 1)[0]
        assert order >= 0.5

    def test_blow_up_records_lifetime(self):
        sys_ = scalar_system({(3,): 1.0}, {}, Calculus.ITO)
        traj = simulate(sys_, [10.0], 1.0, 0.1, seed=0)
        assert traj.lifetime is not None
        assert np.all(np.isfinite(traj.states))
        assert traj.times[-1] == pytest.approx(traj.lifetime)

    def test_to_frame(self):
        traj = simulate(example1_ito(), [0.1, 0.1], 0.1, 0.01, seed=2)
        frame = traj.to_frame()
        assert list(frame.columns) == ["t", "x1", "x2"]
        assert len(frame) == 11


class TestStochasticIntegrals:
    """左端点 / 中点离散和"""

    def test_integrand_one(self):
        path = sample_brownian_path(1, 1.0, 1e-3, seed=5)
        ones = np.ones(path.steps + 1)
        w_t = path.values[-1, 0]
        assert ito_integral(ones, path) == pytest.approx(w_t, abs=1e-12)
        assert stratonovich_integral(ones, path) == pytest.approx(w_t, abs=1e-12)

    def test_stratonovich_telescopes(self):
        path = sample_brownian_path(1, 1.0, 1e-2, seed=6)
        w = path.values[:, 0]
        assert stratonovich_integral(w, path) == pytest.approx(0.5 * w[-1] ** 2, abs=1e-12)

    def test_deterministic_integrand_mean_zero(self):
        values = []
        for seed in range(1000):
            path = sample_brownian_path(1, 1.0, 1e-2, seed=seed)
            values.append(ito_integral(path.times, path))
        values = np.array(values)
        stderr = values.std(ddof=1) / np.sqrt(len(values))
        assert abs(values.mean()) <= 4 * stderr

    def test_convergence_table(self):
        table = integral_convergence_table(1.0, [4e-3, 1e-3, 2.5e-4], 1000, seed=3)
        assert list(table.columns) == ["h", "paths", "rms_ito_deviation", "mean_gap", "std_gap", "max_trapezoid_error"]
        rms = table["rms_ito_deviation"].to_numpy()
        assert rms[1] <= 0.05
        assert 1.5 <= rms[1] / rms[2] <= 2.5
        assert abs(table["mean_gap"].iloc[1] - 0.5) <= 0.05
        assert table["max_trapezoid_error"].max() <= 1e-10
        # ½ΣΔW² 的标准差为 sqrt(Th/2): h 缩小 4 倍, 标准差减半
        std = table["std_gap"].to_numpy()
        assert 1.5 <= std[0] / std[1] <= 2.5
        assert 1.5 <= std[1] / std[2] <= 2.5


class TestCalculusConversion:
    """Ito / Stratonovich 漂移修正"""

    def test_constant_diffusion_no_correction(self):
        sys_ = scalar_system({(1,): -1.0}, {(0,): 2.0}, Calculus.ITO)
        assert np.array_equal(drift_correction(sys_, [0.7]), [0.0])
        converted = convert_calculus(sys_, Calculus.STRATONOVICH)
        assert converted.drift == sys_.drift

    def test_diagonal_diffusion(self):
        assert np.array_equal(drift_correction(example1_ito(), [0.4, -2.0]), [0.2, -1.0])

    def test_example2_correction(self):
        x, y = 1.5, -0.25
        assert np.allclose(drift_correction(example2(), [x, y]), [x, 2 * x + y], atol=1e-15)

    def test_example1_strat_to_ito_exact(self):
        converted = convert_calculus(example1_strat(), Calculus.ITO)
        assert converted.calculus is Calculus.ITO
        assert converted.drift == example1_ito().drift
        assert converted.diffusion == example1_ito().diffusion

    def test_round_trip_exact(self):
        there = convert_calculus(example1_ito(), Calculus.STRATONOVICH)
        back = convert_calculus(there, Calculus.ITO)
        assert there.drift == example1_strat().drift
        assert back.drift == example1_ito().drift

    def test_same_target_is_identity(self):
        sys_ = example1_ito()
        assert convert_calculus(sys_, Calculus.ITO) is sys_

    def test_non_polynomial_drift_keeps_sum(self):
        sys_ = example1_ito()
        summed = sys_.with_drift(SummedField((sys_.drift,)), Calculus.ITO)
        converted = convert_calculus(summed, Calculus.STRATONOVICH)
        x = np.array([0.3, 0.6])
        expected = convert_calculus(sys_, Calculus.STRATONOVICH).drift.evaluate(x)
        assert np.allclose(converted.drift.evaluate(x), expected, atol=1e-15)

    def test_heun_and_converted_em_agree_as_h_shrinks(self):
        """dX = X∘dW 用 Heun, 其 Ito 形式 dX = ½X dt + X dW 用 EM, 共享 100 条路径"""
        strat = scalar_system({}, {(1,): 1.0}, Calculus.STRATONOVICH)
        ito = convert_calculus(strat, Calculus.ITO)
        assert ito.drift.to_text() == "0.5*x"
        gaps = []
        for h in (1e-2, 5e-3, 2.5e-3):
            total = 0.0
            for trajectory in range(100):
                fine = BrownianPath(2.5e-3, 400, sample_increments(1, 400, 2.5e-3, 33, [trajectory])[0])
                path = fine.coarsen(int(round(h / 2.5e-3)))
                heun = simulate_on_path(strat, [1.0], path).final_state[0]
                em = simulate_on_path(ito, [1.0], path).final_state[0]
                total += abs(heun - em)
            gaps.append(total / 100)
        assert gaps[0] > gaps[1] > gaps[2]

    def test_non_polynomial_diffusion_rejected(self):
        diffusion = CallableMatrixField(1, 1, lambda x: np.sin(x)[..., None])
        sys_ = SdeSystem(PolynomialVectorField.zero(1), diffusion, Calculus.ITO)
        with pytest.raises(NonPolynomialError):
            convert_calculus(sys_, Calculus.STRATONOVICH)

    def test_correction_field_text(self):
        assert ito_correction_field(example1_ito().diffusion).to_text() == "0.5*x, 0.5*y"
        # 两列相同: ½·2·[DB]B = (x, 2x + y)
        assert ito_correction_field(example2().diffusion).to_text() == "x, 2*x + y"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
