"""
注册表测试 — 例 1 / 例 2 系数、内联描述互转、未知名称
运行: python -m pytest tests/test_registry.py -v
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from manifold_sde.errors import ConfigError, NonPolynomialError
from manifold_sde.services.fields import gradient_fd
from manifold_sde.services.invariance import tangency_vectors
from manifold_sde.services.sde_core import Calculus, convert_calculus
from manifold_sde.services.system_registry import (
    SYSTEM_REGISTRY,
    example1_ito,
    example1_strat,
    example1_truncated,
    example2,
    get_manifold,
    get_system,
    serialize_system,
    system_from_spec,
)


class TestExampleCoefficients:
    """系数字面量"""

    def test_example1_strat_drift(self):
        assert np.array_equal(example1_strat().drift.evaluate([1.0, 1.0]), [-1.5, -2.5])

    def test_example1_forms_agree(self):
        assert convert_calculus(example1_strat(), Calculus.ITO).drift == example1_ito().drift

    def test_example1_diffusion(self):
        assert np.array_equal(example1_ito().diffusion.evaluate([2.0, -3.0]), [[2.0, 0.0], [0.0, -3.0]])

    def test_truncated_equals_ito_near_origin(self):
        x = np.array([0.1, -0.2])
        assert np.allclose(example1_truncated().drift.evaluate(x), example1_ito().drift.evaluate(x), atol=1e-15)

    def test_truncated_linear_outside(self):
        x = np.array([1.0, 1.0])
        assert np.array_equal(example1_truncated(0.5, 0.9).drift.evaluate(x), [-1.0, 0.0])

    def test_example2_columns_identical(self):
        b = example2().diffusion.evaluate([1.5, 0.5])
        assert np.array_equal(b[:, 0], b[:, 1])
        assert np.array_equal(b[:, 0], [1.5, 2.0])

    def test_tangent_variant_mu_is_generator(self):
        vectors = tangency_vectors(example2(tangent=True))
        assert vectors["mu"] == vectors["B1"]


class TestLookup:
    """按名称查找"""

    def test_known_systems(self):
        names = list(SYSTEM_REGISTRY)
        assert all(SYSTEM_REGISTRY[name].name == name for name in names)
        assert {"example1-strat", "example1-ito", "example1-truncated", "example1-reduced", "example2"} <= set(names)

    def test_entry_metadata(self):
        entry = get_system("example2")
        assert entry.manifold == "example2-log"
        assert entry.chart == (0,)
        assert np.array_equal(get_system("example1-ito").system.linear_part, np.diag([-1.0, 0.0]))
        assert get_system("example2").system.linear_part is None

    def test_unknown_system(self):
        with pytest.raises(ConfigError, match="example1-ito"):
            get_system("example3")

    def test_unknown_manifold(self):
        with pytest.raises(ConfigError):
            get_manifold("torus")

    def test_log_graph_manifold(self):
        manifold = get_manifold("example2-log")
        assert manifold.function.evaluate([np.e, np.e]) == pytest.approx(0.0, abs=1e-15)

    def test_log_graph_gradient_matches_fd(self):
        function = get_manifold("example2-log").function
        rng = np.random.default_rng(12)
        pts = np.stack([rng.uniform(0.5, 10.0, 100), rng.uniform(-5.0, 5.0, 100)], axis=-1)
        assert np.allclose(function.gradient(pts), gradient_fd(function, pts, 1e-5), rtol=1e-6, atol=1e-6)

    def test_log_graph_annihilated_by_diffusion_column(self):
        """x·G_x + (x + y)·G_y = 0, 即 B¹·∇G ≡ 0"""
        function = get_manifold("example2-log").function
        rng = np.random.default_rng(13)
        x, y = rng.uniform(0.1, 10.0, 1000), rng.uniform(-10.0, 10.0, 1000)
        grad = function.gradient(np.stack([x, y], axis=-1))
        assert np.max(np.abs(x * grad[:, 0] + (x + y) * grad[:, 1])) <= 1e-11


class TestInlineSpec:
    """serialize_system 与 system_from_spec 互逆"""

    @pytest.mark.parametrize("name", ["example1-strat", "example1-ito", "example1-reduced", "example2"])
    def test_round_trip(self, name):
        system = get_system(name).system
        parsed = system_from_spec(serialize_system(system))
        assert parsed == system
        if system.linear_part is not None:
            assert np.array_equal(parsed.linear_part, system.linear_part)

    def test_spec_fields(self):
        spec = serialize_system(example1_ito())
        assert spec["calculus"] == "ito"
        assert spec["variables"] == ["x", "y"]
        assert spec["linear_part"] == [[-1.0, 0.0], [0.0, 0.0]]
        assert len(spec["diffusion"]) == 2 and len(spec["diffusion"][0]) == 2

    def test_truncated_not_serializable(self):
        with pytest.raises(NonPolynomialError):
            serialize_system(example1_truncated())


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
