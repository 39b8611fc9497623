import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corap.errors import ContractError
from corap.tensor import (FactorTriple, cpd_reconstruct, dematricize, from_flat, frobenius_norm, khatri_rao,
                          matricize, mode_n_product, read_tensor, unvec, vec, write_tensor)

from conftest import rel_err


def loop_unfoldings(t):
    """Index formula applied entry by entry, 1-based as written, shifted to 0-based storage."""
    I, J, K = t.shape
    T1 = np.zeros((I, J * K))
    T2 = np.zeros((J, I * K))
    T3 = np.zeros((K, I * J))
    for i, j, k in itertools.product(range(1, I + 1), range(1, J + 1), range(1, K + 1)):
        v = t[i - 1, j - 1, k - 1]
        T1[i - 1, (j - 1) * K + k - 1] = v
        T2[j - 1, (i - 1) * K + k - 1] = v
        T3[k - 1, (i - 1) * J + j - 1] = v
    return T1, T2, T3


def loop_mode_product(t, g, mode):
    dims = list(t.shape)
    dims[mode - 1] = g.shape[0]
    out = np.zeros(dims)
    for idx in itertools.product(*(range(d) for d in dims)):
        total = 0.0
        for n in range(t.shape[mode - 1]):
            src = list(idx)
            src[mode - 1] = n
            total += t[tuple(src)] * g[idx[mode - 1], n]
        out[idx] = total
    return out


def loop_cp(f):
    I, J, K = f.dims
    out = np.zeros((I, J, K))
    for i, j, k in itertools.product(range(I), range(J), range(K)):
        out[i, j, k] = sum(f.A[i, r] * f.B[j, r] * f.C[k, r] for r in range(f.rank))
    return out


tensors = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1)).map(
    lambda a: np.random.default_rng(a[3]).standard_normal(a[:3])
)


class TestMatricize:
    def test_zero(self):
        t = np.zeros((2, 2, 2))
        for n, shape in zip((1, 2, 3), ((2, 4), (2, 4), (2, 4))):
            m = matricize(t, n)
            assert m.shape == shape and not m.any()

    def test_single_entry(self):
        t = np.zeros((2, 2, 2))
        t[0, 0, 0] = 1.0
        for n in (1, 2, 3):
            m = matricize(t, n)
            assert m[0, 0] == 1.0 and m.sum() == 1.0

    def test_matches_index_formula(self, rng):
        t = rng.standard_normal((3, 4, 5))
        for n, oracle in zip((1, 2, 3), loop_unfoldings(t)):
            np.testing.assert_array_equal(matricize(t, n), oracle)

    @pytest.mark.parametrize("mode", [0, 4, "1"])
    def test_bad_mode(self, mode):
        with pytest.raises(ContractError):
            matricize(np.zeros((2, 2, 2)), mode)

    def test_not_third_order(self):
        with pytest.raises(ContractError):
            matricize(np.zeros((2, 2)), 1)


class TestDematricize:
    def test_zero_roundtrip(self):
        t = np.zeros((2, 3, 4))
        for n in (1, 2, 3):
            np.testing.assert_array_equal(dematricize(matricize(t, n), n, t.shape), t)

    def test_random_roundtrip_bit_exact(self, rng):
        t = rng.standard_normal((3, 4, 5))
        for n in (1, 2, 3):
            back = dematricize(matricize(t, n), n, t.shape)
            assert back.tobytes() == t.tobytes()

    def test_scalar(self):
        t = np.full((1, 1, 1), 7.0)
        for n in (1, 2, 3):
            m = matricize(t, n)
            assert m.shape == (1, 1) and m[0, 0] == 7.0
            np.testing.assert_array_equal(dematricize(m, n, (1, 1, 1)), t)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            dematricize(np.zeros((3, 4)), 1, (3, 2, 3))

    @pytest.mark.property
    @settings(max_examples=50, deadline=None)
    @given(tensors)
    def test_roundtrip_property(self, t):
        for n in (1, 2, 3):
            assert dematricize(matricize(t, n), n, t.shape).tobytes() == t.tobytes()


class TestModeProduct:
    def test_identity(self, rng):
        t = rng.standard_normal((3, 4, 5))
        np.testing.assert_array_equal(mode_n_product(t, np.eye(3), 1), t)

    def test_zero_matrix(self, rng):
        t = rng.standard_normal((3, 4, 5))
        out = mode_n_product(t, np.zeros((2, 3)), 1)
        assert out.shape == (2, 4, 5) and not out.any()

    @pytest.mark.parametrize("mode", [1, 2, 3])
    def test_matches_summation(self, rng, mode):
        t = rng.standard_normal((3, 4, 5))
        g = rng.standard_normal((2, t.shape[mode - 1]))
        assert rel_err(mode_n_product(t, g, mode), loop_mode_product(t, g, mode)) < 1e-12

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ContractError):
            mode_n_product(rng.standard_normal((3, 4, 5)), np.ones((2, 4)), 1)

    @pytest.mark.property
    @settings(max_examples=40, deadline=None)
    @given(tensors, st.integers(0, 2**32 - 1))
    def test_products_in_distinct_modes_commute(self, t, seed):
        r = np.random.default_rng(seed)
        P = r.standard_normal((3, t.shape[0]))
        Q = r.standard_normal((2, t.shape[1]))
        a = mode_n_product(mode_n_product(t, P, 1), Q, 2)
        b = mode_n_product(mode_n_product(t, Q, 2), P, 1)
        assert rel_err(a, b) < 1e-12 or np.linalg.norm(b) == 0

    @pytest.mark.property
    @settings(max_examples=40, deadline=None)
    @given(tensors, st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_same_mode_products_compose(self, t, mode, seed):
        r = np.random.default_rng(seed)
        P = r.standard_normal((3, t.shape[mode - 1]))
        Q = r.standard_normal((2, 3))
        a = mode_n_product(mode_n_product(t, P, mode), Q, mode)
        b = mode_n_product(t, Q @ P, mode)
        assert rel_err(a, b) < 1e-12 or np.linalg.norm(b) == 0


class TestKhatriRao:
    def test_unit_vectors(self):
        np.testing.assert_array_equal(khatri_rao([[1.0], [0.0]], [[1.0], [0.0]]), [[1], [0], [0], [0]])

    def test_hand_expansion(self):
        np.testing.assert_array_equal(khatri_rao([[1.0], [2.0]], [[3.0], [4.0]]), [[3], [4], [6], [8]])

    def test_per_column_kron(self, rng):
        a, b = rng.standard_normal((3, 2)), rng.standard_normal((4, 2))
        kr = khatri_rao(a, b)
        for r in range(2):
            np.testing.assert_array_equal(kr[:, r], np.kron(a[:, r], b[:, r]))

    def test_column_mismatch(self):
        with pytest.raises(ContractError):
            khatri_rao(np.ones((3, 2)), np.ones((3, 3)))

    @pytest.mark.property
    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_column_property(self, I, J, R, seed):
        r = np.random.default_rng(seed)
        a, b = r.standard_normal((I, R)), r.standard_normal((J, R))
        kr = khatri_rao(a, b)
        for c in range(R):
            np.testing.assert_array_equal(kr[:, c], np.kron(a[:, c], b[:, c]))


class TestReconstruct:
    def test_rank1_ones(self):
        f = FactorTriple(np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1)))
        np.testing.assert_array_equal(cpd_reconstruct(f), np.ones((2, 2, 2)))

    def test_zero_factor(self, rng):
        f = FactorTriple(np.zeros((3, 2)), rng.standard_normal((4, 2)), rng.standard_normal((5, 2)))
        assert not cpd_reconstruct(f).any()

    def test_matches_summation(self, rng):
        f = FactorTriple(rng.standard_normal((4, 3)), rng.standard_normal((5, 3)), rng.standard_normal((6, 3)))
        assert rel_err(cpd_reconstruct(f), loop_cp(f)) < 1e-12

    @pytest.mark.property
    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_unfoldings_match_factor_form(self, I, J, K, R, seed):
        r = np.random.default_rng(seed)
        f = FactorTriple(r.standard_normal((I, R)), r.standard_normal((J, R)), r.standard_normal((K, R)))
        oracle = loop_cp(f)
        t = cpd_reconstruct(f)
        forms = (f.A @ khatri_rao(f.B, f.C).T, f.B @ khatri_rao(f.A, f.C).T, f.C @ khatri_rao(f.A, f.B).T)
        for n, form in zip((1, 2, 3), forms):
            assert rel_err(matricize(t, n), matricize(oracle, n)) < 1e-12
            assert rel_err(form, matricize(oracle, n)) < 1e-12

    def test_rank_mismatch_rejected(self):
        with pytest.raises(ContractError):
            FactorTriple(np.ones((2, 2)), np.ones((2, 1)), np.ones((2, 2)))


class TestVec:
    def test_scalar(self):
        np.testing.assert_array_equal(vec([[5.0]]), [5.0])

    def test_column_stacking(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(vec(m), [1, 3, 2, 4])

    def test_roundtrip(self, rng):
        m = rng.standard_normal((3, 4))
        assert unvec(vec(m), 3, 4).tobytes() == m.tobytes()

    def test_rank1(self, rng):
        a, b = rng.standard_normal(3), rng.standard_normal(4)
        m = np.outer(a, b)
        np.testing.assert_array_equal(unvec(vec(m), 3, 4), m)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            unvec(np.ones(5), 2, 3)


class TestNorm:
    def test_zero(self):
        assert frobenius_norm(np.zeros((2, 3, 4))) == 0.0

    def test_ones(self):
        assert frobenius_norm(np.ones((2, 2, 2))) == pytest.approx(np.sqrt(8), rel=1e-15)

    def test_naive_accumulation(self, rng):
        t = rng.standard_normal((3, 4, 5))
        acc = 0.0
        for v in t.ravel().tolist():
            acc += v * v
        assert abs(frobenius_norm(t) - acc**0.5) / acc**0.5 < 1e-12


class TestFileFormat:
    def test_roundtrip(self, tmp_path, rng):
        t = rng.standard_normal((3, 4, 5))
        path = tmp_path / "t.crt3"
        write_tensor(path, t)
        raw = path.read_bytes()
        assert raw[:4] == b"CRT3"
        assert np.frombuffer(raw[4:28], dtype="<u8").tolist() == [3, 4, 5]
        assert len(raw) == 28 + 8 * 60
        # first index slowest: the second stored value is t[0, 0, 1]
        assert np.frombuffer(raw[28:44], dtype="<f8").tolist() == [t[0, 0, 0], t[0, 0, 1]]
        assert read_tensor(path).tobytes() == t.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x"
        path.write_bytes(b"NOPE" + bytes(24))
        with pytest.raises(ContractError):
            read_tensor(path)

    def test_truncated(self, tmp_path, rng):
        path = tmp_path / "t.crt3"
        write_tensor(path, rng.standard_normal((2, 2, 2)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ContractError):
            read_tensor(path)

    def test_from_flat(self):
        t = from_flat(np.arange(24.0), (2, 3, 4))
        assert t[1, 2, 3] == 23.0 and t[0, 0, 1] == 1.0
        with pytest.raises(ContractError):
            from_flat(np.arange(5.0), (2, 3, 4))
