import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatfield.core import (
    Codebook,
    Gaussian,
    SceneConfig,
    SparseCoefficients,
    build_covariance,
    compact,
    densify,
    reconstruct_feature,
    top_k_indices,
)
from splatfield.errors import ValidationError


def make_coeffs(indices, values):
    return SparseCoefficients(
        indices=np.asarray(indices, dtype=np.uint16),
        values=np.asarray(values, dtype=np.float32),
    )


class TestBuildCovariance:
    def test_identity(self):
        cov = build_covariance([1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
        np.testing.assert_allclose(cov, np.eye(3), atol=1e-12)

    def test_axis_scales_with_identity_rotation(self):
        cov = build_covariance([1.0, 0.0, 0.0, 0.0], [2.0, 1.0, 1.0])
        np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-12)

    def test_quarter_turn_about_z(self):
        # oracle: multiply out R S S^T R^T with scipy's quaternion convention
        from scipy.spatial.transform import Rotation

        q_wxyz = np.array([0.7071067811865476, 0.0, 0.0, 0.7071067811865476])
        r = Rotation.from_quat(np.roll(q_wxyz, -1)).as_matrix()  # xyzw order
        s = np.diag([2.0, 1.0, 1.0])
        expected = r @ s @ s.T @ r.T
        cov = build_covariance(q_wxyz, [2.0, 1.0, 1.0])
        np.testing.assert_allclose(cov, expected, atol=1e-9)
        np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-6)

    def test_random_quaternions_match_scipy_oracle(self, rng):
        from scipy.spatial.transform import Rotation

        for _ in range(50):
            q = rng.standard_normal(4)
            q /= np.linalg.norm(q)
            scale = rng.uniform(0.1, 3.0, 3)
            r = Rotation.from_quat(np.roll(q, -1)).as_matrix()
            expected = r @ np.diag(scale**2) @ r.T
            np.testing.assert_allclose(build_covariance(q, scale), expected, atol=1e-10)

    def test_symmetric_and_eigenvalues_bounded(self, rng):
        for _ in range(100):
            q = rng.standard_normal(4)
            q /= np.linalg.norm(q)
            scale = rng.uniform(0.05, 2.0, 3)
            cov = build_covariance(q, scale)
            assert np.abs(cov - cov.T).max() == 0.0
            assert np.linalg.eigvalsh(cov).min() >= scale.min() ** 2 - 1e-9

    def test_rejects_bad_input(self):
        with pytest.raises(ValidationError):
            build_covariance([np.nan, 0, 0, 0], [1, 1, 1])
        with pytest.raises(ValidationError):
            build_covariance([1, 0, 0, 0], [1, -1, 1])
        with pytest.raises(ValidationError):
            build_covariance([2, 0, 0, 0], [1, 1, 1])  # unnormalized


class TestSparseCoefficients:
    def test_invariants_enforced(self):
        with pytest.raises(ValidationError):
            make_coeffs([1, 0], [0.5, 0.5])  # not increasing
        with pytest.raises(ValidationError):
            make_coeffs([0, 1], [0.7, 0.7])  # sum != 1
        with pytest.raises(ValidationError):
            make_coeffs([0, 1], [1.5, -0.5])  # negative

    def test_index_bound_checked_against_codebook(self):
        cb = Codebook(np.zeros((4, 3), dtype=np.float32))
        coeffs = make_coeffs([0, 5], [0.5, 0.5])
        with pytest.raises(ValidationError):
            reconstruct_feature(coeffs, cb)


class TestReconstructFeature:
    def test_one_hot_selects_atom(self, rng):
        cb = Codebook(rng.standard_normal((8, 5)).astype(np.float32))
        coeffs = make_coeffs([3], [1.0])
        np.testing.assert_array_equal(reconstruct_feature(coeffs, cb), cb.atoms[3])

    def test_even_pair_is_mean(self, rng):
        cb = Codebook(rng.standard_normal((8, 5)).astype(np.float32))
        coeffs = make_coeffs([0, 1], [0.5, 0.5])
        expected = cb.atoms.astype(np.float64)[:2].mean(axis=0)
        np.testing.assert_allclose(reconstruct_feature(coeffs, cb), expected, atol=1e-9)

    def test_matches_dense_matvec_oracle(self, rng):
        L, D, K = 16, 12, 4
        cb = Codebook(rng.standard_normal((L, D)).astype(np.float32))
        for _ in range(100):
            idx = np.sort(rng.choice(L, K, replace=False))
            raw = rng.random(K) + 1e-3
            coeffs = make_coeffs(idx, (raw / raw.sum()).astype(np.float32))
            dense = densify(coeffs, L)
            oracle = dense @ cb.atoms.astype(np.float64)
            np.testing.assert_allclose(
                reconstruct_feature(coeffs, cb), oracle, atol=1e-7
            )

    def test_output_bounded_by_atom_max(self, rng):
        # convex combination: inf-norm never exceeds the largest atom entry
        cb = Codebook(rng.standard_normal((16, 6)).astype(np.float32))
        for _ in range(50):
            idx = np.sort(rng.choice(16, 4, replace=False))
            raw = rng.random(4) + 1e-3
            coeffs = make_coeffs(idx, (raw / raw.sum()).astype(np.float32))
            f = reconstruct_feature(coeffs, cb)
            assert np.abs(f).max() <= np.abs(cb.atoms).max() + 1e-6


class TestDensifyCompact:
    def test_single_entry(self):
        coeffs = make_coeffs([0], [1.0])
        np.testing.assert_array_equal(densify(coeffs, 4), [1, 0, 0, 0])

    def test_round_trip_on_valid_vectors(self, rng):
        L, K = 16, 4
        for _ in range(100):
            idx = np.sort(rng.choice(L, K, replace=False))
            raw = rng.random(K) + 1e-2
            coeffs = make_coeffs(idx, (raw / raw.sum()).astype(np.float32))
            again = compact(densify(coeffs, L), K)
            assert again == coeffs

    @settings(max_examples=60, deadline=None)
    @given(
        data=st.data(),
        L=st.integers(min_value=2, max_value=32),
    )
    def test_round_trip_property(self, data, L):
        K = data.draw(st.integers(min_value=1, max_value=L))
        idx = data.draw(
            st.lists(
                st.integers(min_value=0, max_value=L - 1),
                min_size=K, max_size=K, unique=True,
            )
        )
        raw = np.array(
            data.draw(
                st.lists(
                    st.floats(min_value=0.01, max_value=1.0),
                    min_size=K, max_size=K,
                )
            )
        )
        coeffs = make_coeffs(np.sort(idx), (raw / raw.sum()).astype(np.float32))
        assert compact(densify(coeffs, L), K) == coeffs

    def test_top_k_tie_break_prefers_lower_index(self):
        values = np.array([0.25, 0.25, 0.25, 0.25])
        np.testing.assert_array_equal(top_k_indices(values, 2), [0, 1])


class TestGaussian:
    def test_validation(self, rng):
        coeffs = (make_coeffs([0, 1], [0.5, 0.5]),)
        good = dict(
            position=[0, 0, 0], rotation=[1, 0, 0, 0], scale=[1, 1, 1],
            opacity=0.5, color=[0.2, 0.3, 0.4], coeffs=coeffs, id=0,
        )
        Gaussian(**good)
        with pytest.raises(ValidationError):
            Gaussian(**{**good, "rotation": [1, 1, 0, 0]})
        with pytest.raises(ValidationError):
            Gaussian(**{**good, "opacity": 1.5})
        with pytest.raises(ValidationError):
            Gaussian(**{**good, "scale": [0, 1, 1]})


class TestSceneConfig:
    def test_defaults_and_bounds(self):
        cfg = SceneConfig()
        assert (cfg.num_levels, cfg.L, cfg.K, cfg.D) == (3, 64, 4, 512)
        with pytest.raises(ValidationError):
            SceneConfig(K=65, L=64)
        with pytest.raises(ValidationError):
            SceneConfig(num_levels=0)
