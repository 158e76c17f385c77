import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doseopt.fp_basis import (K, POWERS, RCOND_THRESHOLD, TRANSFORM_NAMES, DoseDomainError, ModelIndex,
                              basis_matrix, build_design, crossprod_rcond, crossprod_rcond_batch, design_like,
                              transform)

codes = st.integers(min_value=0, max_value=(1 << K) - 1)


class TestTransform:
    def test_powers_table(self):
        assert POWERS == (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0)
        assert all(a < b for a, b in zip(POWERS, POWERS[1:]))
        assert K == 16

    def test_known_values(self):
        assert transform(2.0, 1) == 0.25
        assert transform(1.0, 4) == 0.0
        assert transform(math.e, 12) == pytest.approx(1.0, abs=1e-15)
        for k in range(9, 17):
            assert transform(1.0, k) == 0.0

    def test_identity_and_log_are_exact(self, rng):
        x = rng.uniform(0.01, 100, 500)
        assert np.array_equal(transform(x, 6), x)
        assert np.array_equal(transform(x, 4), np.log(x))

    def test_log_variants(self, rng):
        x = rng.uniform(0.4, 30, 50)
        for j, p in enumerate(POWERS):
            base = np.log(x) if p == 0 else x**p
            np.testing.assert_allclose(transform(x, 9 + j), base * np.log(x), rtol=1e-14)

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
    def test_nonpositive_dose_rejected(self, bad):
        with pytest.raises(DoseDomainError, match="shift"):
            transform(np.array([1.0, bad]), 3)

    def test_index_range(self):
        with pytest.raises(ValueError):
            transform(1.0, 0)
        with pytest.raises(ValueError):
            transform(1.0, 17)

    def test_continuity_probe(self):
        x = np.linspace(0.4, 30, 200)
        for k in range(1, K + 1):
            gaps = [np.max(np.abs(transform(x + h, k) - transform(x, k))) for h in (1e-3, 1e-5, 1e-7)]
            assert gaps[0] > gaps[1] > gaps[2]
            assert gaps[2] < 1e-6 * max(1.0, np.max(np.abs(transform(x, k))))

    def test_basis_matrix_matches_transform(self, rng):
        x = rng.uniform(0.4, 30, 20)
        B = basis_matrix(x)
        for k in range(1, K + 1):
            np.testing.assert_array_equal(B[:, k - 1], transform(x, k))

    def test_names(self):
        assert len(set(TRANSFORM_NAMES)) == K
        assert TRANSFORM_NAMES[3] == "log(x)"
        assert TRANSFORM_NAMES[5] == "x"
        assert TRANSFORM_NAMES[11] == "log(x)^2"
        assert TRANSFORM_NAMES[13] == "x*log(x)"


class TestModelIndex:
    def test_bit_layout(self):
        m = ModelIndex.from_terms([1])
        assert m.code == 1 << 15
        assert str(m) == "1" + "0" * 15
        assert ModelIndex.from_terms([16]).code == 1

    def test_lexicographic_order(self):
        a = ModelIndex.from_bits([0] * 15 + [1])
        b = ModelIndex.from_bits([1] + [0] * 15)
        assert a < b
        assert sorted([b, a]) == [a, b]

    @given(codes)
    def test_roundtrips(self, code):
        m = ModelIndex(code)
        assert ModelIndex.from_bits(m.bits) == m
        assert ModelIndex.from_terms(m.terms) == m
        assert m.size == sum(m.bits) == len(m.terms)
        assert 0 <= m.size <= K

    @given(codes, st.integers(1, K))
    def test_flip_is_involution(self, code, k):
        m = ModelIndex(code)
        assert m.flip(k).flip(k) == m
        assert abs(m.flip(k).size - m.size) == 1

    def test_invalid(self):
        with pytest.raises(ValueError):
            ModelIndex(1 << 16)
        with pytest.raises(ValueError):
            ModelIndex.from_bits([1, 0])
        with pytest.raises(ValueError):
            ModelIndex.from_terms([0])


class TestDesign:
    doses = np.repeat([0.4, 1.0, 2.5, 5.0, 10.0, 20.0, 30.0], 3)

    def test_null_model(self):
        X = build_design(self.doses, ModelIndex(0))
        assert X.p == 0 and X.n == self.doses.size and X.rank_ok

    def test_identity_column(self):
        x = np.array([1.0, 2.0, 4.0, 8.0])
        X = build_design(x, ModelIndex.from_terms([6]))
        ratio = X.columns[:, 0] / x
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-15)
        assert np.sqrt(np.mean(X.columns[:, 0] ** 2)) == pytest.approx(1.0)

    def test_columns_are_scaled_transforms(self):
        m = ModelIndex.from_terms([2, 4, 12])
        X = build_design(self.doses, m)
        for j, k in enumerate(m.terms):
            np.testing.assert_allclose(X.columns[:, j] * X.column_scales[j], transform(self.doses, k), rtol=1e-14)

    def test_more_terms_than_distinct_doses_is_rank_deficient(self):
        x = np.repeat([1.0, 2.0, 5.0], 10)
        m = ModelIndex.from_terms([1, 4, 6])
        X = build_design(x, m)
        # oracle: [1, X] has 4 columns but only 3 distinct rows
        aug = np.column_stack([np.ones(x.size), basis_matrix(x)[:, [0, 3, 5]]])
        s = np.linalg.svd(aug, compute_uv=False)
        assert s[-1] / s[0] < 1e-12
        assert not X.rank_ok

    def test_duplicate_span_detected(self):
        # two distinct doses carry an intercept and one slope, no more
        x = np.repeat([1.0, 4.0], 5)
        assert not build_design(x, ModelIndex.from_terms([4, 12])).rank_ok

    def test_rcond_threshold_semantics(self):
        X = build_design(self.doses, ModelIndex.from_terms([4]))
        assert X.rcond >= RCOND_THRESHOLD
        assert X.rcond == pytest.approx(crossprod_rcond(X.columns))
        tight = build_design(self.doses, ModelIndex.from_terms([4]), rcond_threshold=1.1)
        assert not tight.rank_ok

    def test_batch_rcond_matches(self, rng):
        cols = rng.standard_normal((5, 12, 3))
        single = [crossprod_rcond(c) for c in cols]
        np.testing.assert_allclose(crossprod_rcond_batch(cols), single, rtol=1e-12)

    @given(codes)
    @settings(max_examples=50, deadline=None)
    def test_deterministic_and_ordered(self, code):
        m = ModelIndex(code)
        a = build_design(self.doses, m)
        b = build_design(self.doses, m)
        assert a.terms == tuple(sorted(a.terms)) == m.terms
        assert np.array_equal(a.columns, b.columns) and a.rcond == b.rcond

    def test_design_like_reuses_scales(self):
        X = build_design(self.doses, ModelIndex.from_terms([3, 7]))
        Z = design_like(X, [2.0, 3.0])
        np.testing.assert_array_equal(Z.column_scales, X.column_scales)
        np.testing.assert_allclose(Z.columns[:, 1] * X.column_scales[1], [4.0, 9.0])
