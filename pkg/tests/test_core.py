import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from robustsdr.core import (NotHermitianError, ProblemInstance, as_hermitian, db_to_linear,
                            evaluate_sinr, herm_eig, linear_to_db, min_eig, real_compress,
                            real_embed)

from conftest import random_psd


def random_hermitian(rng, n):
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return G + G.conj().T


class TestHermEig:
    def test_identity(self):
        d, U = herm_eig(np.eye(3))
        assert_allclose(d, [1, 1, 1])

    def test_diagonal(self):
        d, U = herm_eig(np.diag([2.0, -1.0]))
        assert_allclose(d, [-1, 2])
        assert_allclose(np.abs(U), [[0, 1], [1, 0]], atol=1e-15)

    def test_off_diagonal_imaginary(self):
        d, _ = herm_eig(np.array([[0, 1j], [-1j, 0]]))
        assert_allclose(d, [-1, 1], atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 5, 10])
    def test_reconstruction_and_unitarity(self, n):
        rng = np.random.default_rng(n)
        H = random_hermitian(rng, n)
        d, U = herm_eig(H)
        assert np.all(np.diff(d) >= 0)
        assert np.linalg.norm(H - U @ np.diag(d) @ U.conj().T) <= 1e-9 * (1 + np.linalg.norm(H))
        assert_allclose(U.conj().T @ U, np.eye(n), atol=1e-10)

    def test_rejects_non_hermitian(self):
        with pytest.raises(NotHermitianError):
            herm_eig(np.array([[0, 1], [0, 0]]))
        with pytest.raises(NotHermitianError):
            as_hermitian(np.array([[1j]]))
        with pytest.raises(NotHermitianError):
            as_hermitian(np.ones((2, 3)))


class TestRealEmbed:
    def test_scalar(self):
        assert_allclose(real_embed([[1]]), np.eye(2))

    def test_eigenvalues_doubled(self):
        E = real_embed(np.array([[0, 1j], [-1j, 0]]))
        assert E.shape == (4, 4)
        assert_allclose(E, E.T)
        assert_allclose(np.linalg.eigvalsh(E), [-1, -1, 1, 1], atol=1e-14)

    def test_identity(self):
        assert_allclose(real_embed(np.eye(2)), np.eye(4))

    def test_min_eigenvalue_preserved(self):
        rng = np.random.default_rng(1)
        for n in range(1, 7):
            H = random_hermitian(rng, n)
            assert abs(min_eig(real_embed(H)) - min_eig(H)) <= 1e-9

    def test_compress_inverts_embed(self):
        rng = np.random.default_rng(2)
        H = random_hermitian(rng, 4)
        assert_allclose(real_compress(real_embed(H)), H, atol=1e-14)

    def test_inner_product_identity(self):
        rng = np.random.default_rng(3)
        E = random_hermitian(rng, 3)
        X = real_embed(random_psd(rng, 3)) + 0.3 * np.eye(6)
        lhs = np.sum(real_embed(E) * X)
        assert_allclose(lhs, 2 * np.trace(E @ real_compress(X)).real, rtol=1e-12)


class TestEvaluateSinr:
    def test_single_user(self):
        assert_allclose(evaluate_sinr([[1, 0]], [1, 0], 0, 0.1), 10)

    def test_orthogonal_interferer(self):
        assert_allclose(evaluate_sinr([[1, 0], [0, 1]], [1, 0], 0, 0.1), 10)

    def test_aligned_interferer(self):
        assert_allclose(evaluate_sinr([[1, 0], [1, 0]], [1, 0], 0, 0.1), 1 / 1.1)

    def test_errors(self):
        with pytest.raises(IndexError):
            evaluate_sinr([[1, 0]], [1, 0], 1, 0.1)
        with pytest.raises(ValueError):
            evaluate_sinr([[1, 0]], [1, 0], 0, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), phase=st.floats(0, 2 * np.pi),
           t=st.floats(0.1, 10.0), k=st.integers(1, 4))
    def test_phase_and_scale(self, seed, phase, t, k):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((k, 3)) + 1j * rng.standard_normal((k, 3))
        h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        base = evaluate_sinr(w, h, 0, 0.1)
        rotated = w.copy()
        rotated[k - 1] *= np.exp(1j * phase)
        assert_allclose(evaluate_sinr(rotated, h, 0, 0.1), base, rtol=1e-10)
        assert_allclose(evaluate_sinr(t * w, h, 0, 0.1 * t * t), base, rtol=1e-10)


class TestProblemInstance:
    def test_broadcast_and_shapes(self):
        inst = ProblemInstance(hbar=np.ones((3, 2)), radius=0.1, noise=0.1, sinr_target=2.0)
        assert (inst.nt, inst.k) == (2, 3)
        assert inst.radius.shape == (3,)
        assert_allclose(inst.lift(1), [[1, 0, 1], [0, 1, 1]])

    def test_json_round_trip(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        inst = ProblemInstance(hbar=h, radius=[0.1, 0.2], noise=[0.1, 0.3],
                               sinr_target=db_to_linear([3.0, 4.0]))
        back = ProblemInstance.from_dict(json.loads(json.dumps(inst.to_dict())))
        assert_allclose(back.hbar, inst.hbar)
        assert_allclose(back.sinr_target, inst.sinr_target, rtol=1e-14)
        assert_allclose(back.radius, inst.radius)

    @pytest.mark.parametrize("kw", [
        dict(noise=0.0), dict(sinr_target=-1.0), dict(radius=-0.1), dict(radius=[0.1, 0.1]),
        dict(noise=np.nan),
    ])
    def test_rejects_invalid(self, kw):
        args = dict(hbar=np.ones((1, 2)), radius=0.1, noise=0.1, sinr_target=1.0)
        args.update(kw)
        with pytest.raises(ValueError):
            ProblemInstance(**args)

    def test_from_dict_errors(self):
        good = ProblemInstance(hbar=np.ones((1, 2)), radius=0.1, noise=0.1,
                               sinr_target=1.0).to_dict()
        with pytest.raises(ValueError, match="missing field 'noise'"):
            ProblemInstance.from_dict({k: v for k, v in good.items() if k != "noise"})
        with pytest.raises(ValueError, match="hbar"):
            ProblemInstance.from_dict(dict(good, nt=3))
        with pytest.raises(ValueError, match="radius"):
            ProblemInstance.from_dict(dict(good, radius=[0.1, 0.2]))

    def test_immutable(self):
        inst = ProblemInstance(hbar=np.ones((1, 2)), radius=0.1, noise=0.1, sinr_target=1.0)
        with pytest.raises(ValueError):
            inst.hbar[0, 0] = 2

    def test_db_round_trip(self):
        assert_allclose(linear_to_db(db_to_linear([-3.0, 0.0, 8.0])), [-3, 0, 8])
