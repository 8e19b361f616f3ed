"""
不变流形测试 — 切向残差、流形采样、不变性验证、限制系统、逃逸诊断
运行: python -m pytest tests/test_invariance.py -v
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from manifold_sde.errors import (
    CalculusMismatchError,
    DimensionMismatchError,
    DomainError,
    ManifoldSamplingError,
    RestrictionError,
    SurfaceInversionError,
)
from manifold_sde.services.characteristics import InitialCurve, solve_invariance_pde
from manifold_sde.services.fields import PolynomialMatrixField, PolynomialScalarField, PolynomialVectorField
from manifold_sde.services.invariance import (
    GraphManifold,
    chart_lift,
    escape_diagnostic,
    invariance_residuals,
    restrict_system,
    sample_manifold_points,
    tangency_drift,
    tangency_vectors,
    verify_invariance,
)
from manifold_sde.services.sde_core import Calculus, SdeSystem
from manifold_sde.services.system_registry import example1_ito, example1_strat, example2, get_manifold


def poly(dim, coefficients):
    return PolynomialScalarField.from_dict(dim, coefficients)


def planar(drift_components, calculus=Calculus.ITO, diffusion=None):
    drift = PolynomialVectorField(2, tuple(poly(2, c) for c in drift_components))
    return SdeSystem(drift, diffusion or PolynomialMatrixField.zero(2, 1), calculus, "planar")


ROTATION = [{(0, 1): -1.0}, {(1, 0): 1.0}]
RADIAL = [{(1, 0): 1.0}, {(0, 1): 1.0}]
EXAMPLE2_BOX = [[0.5, 2.0], [-2.0, 2.0]]


class TestTangencyVectors:
    """μ = F − ½Σ[DBʲ]Bʲ"""

    def test_constant_diffusion_mu_is_drift(self):
        column = PolynomialVectorField(2, (PolynomialScalarField.constant(2, 1.0), PolynomialScalarField.constant(2, 0.5)))
        sys_ = planar(ROTATION, diffusion=PolynomialMatrixField.from_columns([column]))
        assert tangency_vectors(sys_)["mu"] == sys_.drift

    def test_example2_mu(self):
        vectors = tangency_vectors(example2())
        assert list(vectors) == ["mu", "B1", "B2"]
        assert vectors["mu"].to_text() == "0, x + y"
        assert vectors["B1"] == vectors["B2"]

    def test_example1_mu_is_stratonovich_drift(self):
        assert tangency_vectors(example1_ito())["mu"] == example1_strat().drift

    def test_requires_ito(self):
        with pytest.raises(CalculusMismatchError):
            tangency_drift(example1_strat(), [0.0, 0.0])


class TestResiduals:
    """切向残差"""

    def test_rotation_tangent_to_circle(self):
        circle = get_manifold("unit-circle")
        theta = np.linspace(0.0, 2 * np.pi, 17)
        pts = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        mu_res, col_res = invariance_residuals(planar(ROTATION), circle, pts)
        assert np.max(np.abs(mu_res)) == 0.0
        assert col_res.shape == (17, 1)

    def test_radial_field_on_circle(self):
        circle = get_manifold("unit-circle")
        theta = np.linspace(0.0, 2 * np.pi, 9)
        pts = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        mu_res, _ = invariance_residuals(planar(RADIAL), circle, pts)
        assert np.allclose(mu_res, 2.0, atol=1e-12)

    def test_example2_at_one_zero(self):
        mu_res, col_res = invariance_residuals(example2(), get_manifold("example2-log"), [1.0, 0.0])
        assert mu_res == pytest.approx(1.0, abs=1e-15)
        assert np.allclose(col_res, [0.0, 0.0], atol=1e-15)

    def test_outside_domain(self):
        with pytest.raises(DomainError):
            invariance_residuals(example2(), get_manifold("example2-log"), [-1.0, 0.0])

    def test_scaled_manifold_scales_residuals(self):
        circle = get_manifold("unit-circle")
        pt = np.array([0.6, 0.8])
        base, _ = invariance_residuals(planar(RADIAL), circle, pt)
        scaled, _ = invariance_residuals(planar(RADIAL), circle.scaled(3.0), pt)
        assert scaled == pytest.approx(3.0 * base, rel=1e-14)


class TestManifoldSampling:
    """随机线段 + Brent 求根"""

    def test_circle_points(self):
        sample = sample_manifold_points(get_manifold("unit-circle"), [[-2, 2], [-2, 2]], 200, seed=1)
        assert len(sample.points) == 200
        assert not sample.exhausted
        assert np.max(np.abs(np.sum(sample.points**2, axis=1) - 1.0)) <= 1e-10

    def test_example2_points(self):
        pts = sample_manifold_points(get_manifold("example2-log"), EXAMPLE2_BOX, 200, seed=2).points
        g = pts[:, 1] / pts[:, 0] - np.log(pts[:, 0])
        assert np.max(np.abs(g)) <= 1e-10
        assert np.all((pts[:, 0] >= 0.5) & (pts[:, 0] <= 2.0))

    def test_deterministic(self):
        a = sample_manifold_points(get_manifold("unit-circle"), [[-2, 2], [-2, 2]], 50, seed=8).points
        b = sample_manifold_points(get_manifold("unit-circle"), [[-2, 2], [-2, 2]], 50, seed=8).points
        assert np.array_equal(a, b)

    def test_empty_zero_set(self):
        positive = GraphManifold.from_polynomial(poly(2, {(2, 0): 1.0, (0, 2): 1.0, (0, 0): 1.0}), [[-2, 2], [-2, 2]])
        with pytest.raises(ManifoldSamplingError):
            sample_manifold_points(positive, [[-2, 2], [-2, 2]], 5, seed=0)

    def test_box_outside_domain(self):
        with pytest.raises(DomainError):
            sample_manifold_points(get_manifold("example2-log"), [[0.0, 2.0], [-2.0, 2.0]], 5, seed=0)

    def test_surface_manifold_over_bounding_box(self):
        """积分曲面的外接盒大于其覆盖范围; 落在范围外的线段记为未命中"""
        gamma = InitialCurve.from_polynomials(
            [poly(1, {(0,): 1.0}), poly(1, {(1,): 1.0})], poly(1, {(1,): 1.0}), [[-1.0, 1.0]]
        )
        manifold, _ = solve_invariance_pde(
            example2(), "B1", gamma, s_count=41, t_span=(-0.5, 1.0), h_char=1e-2, samples=5
        )
        # 左上角 (x 最小, y 最大) 不在曲面上
        corner = [manifold.domain_box[0, 0], manifold.domain_box[1, 1]]
        with pytest.raises(SurfaceInversionError):
            manifold.function.evaluate(corner)
        sample = sample_manifold_points(manifold, manifold.domain_box, 10, seed=3, tol=1e-8)
        x, y = sample.points[:, 0], sample.points[:, 1]
        assert len(sample.points) > 0
        assert np.max(np.abs(y / x - np.log(x))) <= 1e-5


class TestVerifyInvariance:
    """采样点上的最大残差与判定"""

    def test_circle_rotation_invariant(self):
        report = verify_invariance(planar(ROTATION), get_manifold("unit-circle"), [[-2, 2], [-2, 2]], 300, 3, tol=1e-9)
        assert report.verdict == "invariant"
        assert report.max_mu_residual <= 1e-12

    def test_circle_radial_not_invariant(self):
        report = verify_invariance(planar(RADIAL), get_manifold("unit-circle"), [[-2, 2], [-2, 2]], 300, 3, tol=1e-9)
        assert report.verdict == "not invariant"
        assert report.max_mu_residual == pytest.approx(2.0, abs=1e-9)

    def test_example2_diffusion_columns(self):
        report = verify_invariance(example2(), get_manifold("example2-log"), EXAMPLE2_BOX, 1000, 11, components="diffusion")
        assert report.n_samples == 1000
        assert report.invariant
        assert np.all(report.max_column_residuals <= 1e-12)

    def test_example2_mu_residual_reported(self):
        report = verify_invariance(example2(), get_manifold("example2-log"), EXAMPLE2_BOX, 1000, 11)
        assert report.verdict == "not invariant"
        x, y = report.points[:, 0], report.points[:, 1]
        assert np.allclose(report.mu_residuals, (x + y) / x, atol=1e-12, rtol=0)

    def test_report_dict(self):
        report = verify_invariance(planar(ROTATION), get_manifold("unit-circle"), [[-2, 2], [-2, 2]], 10, 0)
        payload = report.to_dict()
        assert payload["n_samples"] == 10
        assert set(payload["points"][0]) == {"x", "g", "mu_res", "col_res"}

    def test_unknown_components(self):
        with pytest.raises(ValueError):
            verify_invariance(planar(ROTATION), get_manifold("unit-circle"), [[-2, 2], [-2, 2]], 10, 0, components="mu")


class TestRestriction:
    """限制到图流形"""

    def test_example2_chart_x(self):
        restricted = restrict_system(example2(), get_manifold("example2-log"), [0])
        assert restricted.dim == 1
        assert restricted.noise_dim == 2
        assert restricted.drift.evaluate([2.0]) == pytest.approx([2.0], abs=1e-12)
        assert np.allclose(restricted.diffusion.evaluate([2.0]), [[2.0, 2.0]], atol=1e-12)

    def test_lift_lands_on_graph(self):
        lift = chart_lift(get_manifold("example2-log"), [0])
        pts = lift(np.array([[0.7], [1.0], [2.5]]))
        assert np.allclose(pts[:, 1], pts[:, 0] * np.log(pts[:, 0]), atol=1e-12)

    def test_decoupled_linear_subspace(self):
        sys_ = planar([{(3, 0): -1.0}, {(0, 1): 1.0}])
        restricted = restrict_system(sys_, get_manifold("x-axis"), [0])
        assert restricted.drift.evaluate([0.5]) == pytest.approx([-0.125], abs=1e-15)
        assert np.array_equal(restricted.diffusion.evaluate([0.5]), [[0.0]])

    def test_unbracketable_point(self):
        lift = chart_lift(get_manifold("unit-circle"), [0])
        with pytest.raises(RestrictionError):
            lift([1.5])

    def test_bad_chart(self):
        with pytest.raises(DimensionMismatchError):
            restrict_system(example2(), get_manifold("example2-log"), [0, 1])


class TestEscapeDiagnostic:
    """离散化导致的离开流形"""

    def test_static_system_stays_exactly(self):
        sys_ = SdeSystem(PolynomialVectorField.zero(2), PolynomialMatrixField.zero(2, 1), Calculus.ITO)
        stats = escape_diagnostic(sys_, get_manifold("unit-circle"), [1.0, 0.0], 0.1, 0.01, 4, seed=0)
        assert stats.terminal_max == 0.0
        assert np.all(stats.quantiles == 0.0)

    def test_euler_drift_off_is_first_order(self):
        circle = get_manifold("unit-circle")
        coarse = escape_diagnostic(planar(ROTATION), circle, [1.0, 0.0], 1.0, 1e-2, 2, seed=0)
        fine = escape_diagnostic(planar(ROTATION), circle, [1.0, 0.0], 1.0, 1e-3, 2, seed=0)
        assert 8.0 <= coarse.terminal_max / fine.terminal_max <= 12.0

    def test_tangent_example2_escape_shrinks(self):
        manifold = get_manifold("example2-log")
        sys_ = example2(tangent=True)
        coarse = escape_diagnostic(sys_, manifold, [1.0, 0.0], 0.5, 1e-2, 500, seed=42)
        fine = escape_diagnostic(sys_, manifold, [1.0, 0.0], 0.5, 1e-3, 500, seed=42)
        assert coarse.terminal_median / fine.terminal_median >= 2.0

    def test_printed_example2_escape_does_not_shrink(self):
        """μ·∇G = (x + y)/x ≠ 0: 离开速率与步长无关"""
        manifold = get_manifold("example2-log")
        coarse = escape_diagnostic(example2(), manifold, [1.0, 0.0], 0.5, 1e-2, 500, seed=42)
        fine = escape_diagnostic(example2(), manifold, [1.0, 0.0], 0.5, 1e-3, 500, seed=42)
        assert fine.terminal_median > 0.2
        assert coarse.terminal_median / fine.terminal_median < 2.0

    def test_start_off_manifold(self):
        with pytest.raises(DomainError):
            escape_diagnostic(example2(), get_manifold("example2-log"), [1.0, 1.0], 0.5, 1e-2, 10, seed=0)

    def test_frame_columns(self):
        sys_ = SdeSystem(PolynomialVectorField.zero(2), PolynomialMatrixField.zero(2, 1), Calculus.ITO)
        stats = escape_diagnostic(sys_, get_manifold("unit-circle"), [0.0, 1.0], 0.1, 0.01, 3, seed=0)
        assert list(stats.to_frame().columns) == ["t", "alive", "mean", "q50", "q90", "q100"]
        assert stats.to_dict()["terminal"]["alive"] == 3


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
