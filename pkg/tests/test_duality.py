import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from robustsdr.core import ProblemInstance
from robustsdr.duality import (AMBIGUOUS, FAILED, REPORT_KEYS, UNIQUE, DualityReport,
                               canonical_subproblem_multipliers, check_kkt_15, check_kkt_21,
                               map_certificate_to_maxmin, map_maxmin_to_certificate,
                               probe_condition1, rel_gap, verify_proposition1)
from robustsdr.formulations import DualCertificate, RobustDesign, solve_wsp_sdr
from robustsdr.harness import generate_instance
from robustsdr.sdp_solver import Status

from conftest import scalar_instance

P = 0.1 / 0.81
E_WORST = np.array([-0.1, 1.0])
V_SCALAR = np.outer(E_WORST, E_WORST)


def scalar_kkt_point():
    """Closed-form optimum of the scalar instance.

    The worst error is e = -r, so Psi has null vector [e; 1], giving
    lambda = 9p; the certificate is mu [e; 1][e; 1]^H with sigma^2 mu = p.
    """
    design = RobustDesign([np.array([[P]])], np.array([9 * P]))
    cert = DualCertificate([V_SCALAR / 0.81 + 0j])
    return design, cert


class TestMaps:
    def test_unit_corner(self):
        A = np.array([[0.3, 0.0], [0.0, 1.0]])
        V, mu = map_certificate_to_maxmin(DualCertificate([A]))
        assert_allclose(mu, [1.0])
        assert_allclose(V[0], A)

    @pytest.mark.parametrize("t", [0.01, 3.0, 1e4])
    def test_homogeneous(self, t):
        A = np.array([[0.3, 0.1j], [-0.1j, 2.0]])
        V1, mu1 = map_certificate_to_maxmin(DualCertificate([A]))
        V2, mu2 = map_certificate_to_maxmin(DualCertificate([t * A]))
        assert_allclose(V2[0], V1[0], rtol=1e-15)
        assert_allclose(mu2, t * mu1, rtol=1e-15)

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        A = []
        for _ in range(3):
            G = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
            A.append(G @ G.conj().T)
        V, mu = map_certificate_to_maxmin(DualCertificate(A))
        back = map_maxmin_to_certificate(V, mu)
        for a, b in zip(A, back.A):
            assert np.abs(a - b).max() <= 4 * np.finfo(float).eps * np.abs(a).max()
        V2, mu2 = map_certificate_to_maxmin(back)
        assert_allclose(mu2, mu, rtol=1e-15)

    def test_reverse_round_trip(self):
        V = [np.array([[0.2, 0.1], [0.1, 1.0]])]
        cert = map_maxmin_to_certificate(V, [2.5])
        assert_allclose(cert.A[0], 2.5 * V[0])
        V2, mu2 = map_certificate_to_maxmin(cert)
        assert_allclose(V2[0], V[0])
        assert_allclose(mu2, [2.5])

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate"):
            map_certificate_to_maxmin(DualCertificate([np.zeros((2, 2))]))
        with pytest.raises(ValueError):
            map_maxmin_to_certificate([np.eye(2)], [-1.0])


class TestKkt15:
    def test_scalar_closed_form(self, scalar_inst):
        design, cert = scalar_kkt_point()
        res = check_kkt_15(scalar_inst, design, cert)
        assert res.max <= 1e-8 and res.passed
        assert_allclose(res.objective, P)

    def test_zero_point(self):
        inst = generate_instance(3, 2, 0.1, 0.1, 2.0, 0)
        design = RobustDesign([np.zeros((3, 3))] * 2, np.zeros(2))
        res = check_kkt_15(inst, design, DualCertificate([np.zeros((4, 4))] * 2))
        assert_allclose(res.psi_psd, 0.1)
        assert not res.passed

    def test_solver_output(self):
        inst = generate_instance(4, 4, 0.1, 0.1, 4.0, 2)
        design, cert, _ = solve_wsp_sdr(inst)
        res = check_kkt_15(inst, design, cert)
        assert res.passed, res.as_dict()

    def test_negative_multiplier_flagged(self, scalar_inst):
        design, cert = scalar_kkt_point()
        design.lam[0] = -1.0
        assert check_kkt_15(scalar_inst, design, cert).primal_cone == pytest.approx(1.0)


class TestKkt21:
    def test_scalar_closed_form(self, scalar_inst):
        design, _ = scalar_kkt_point()
        xi, tau = canonical_subproblem_multipliers(scalar_inst, design.lam, 0)
        res = check_kkt_21(scalar_inst, design.W, 0, V_SCALAR, xi, tau)
        assert max(res.values()) <= 1e-12

    def test_negative_xi(self, scalar_inst):
        design, _ = scalar_kkt_point()
        res = check_kkt_21(scalar_inst, design.W, 0, V_SCALAR, -0.5, 0.0)
        assert res["feasibility"] >= 0.5

    def test_corner_violation(self, scalar_inst):
        design, _ = scalar_kkt_point()
        xi, tau = canonical_subproblem_multipliers(scalar_inst, design.lam, 0)
        res = check_kkt_21(scalar_inst, design.W, 0, 2 * V_SCALAR, xi, tau)
        assert res["feasibility"] >= 1.0


class TestVerify:
    def test_scalar(self, scalar_inst):
        rep = verify_proposition1(scalar_inst)
        v = rep.values
        assert rep.status == Status.OPTIMAL.value
        assert v["rel_gap"] <= 1e-8
        assert v["max_rank_ratio"] == 0.0
        assert v["min_margin"] >= -1e-8
        assert_allclose(v["active_values"], [0.1], atol=1e-8)
        assert v["kkt_pass"] and v["fixed_cert_pass"] and v["active_pass"]
        assert v["condition1"] == UNIQUE

    def test_orthogonal_perfect_csi(self):
        h = np.array([[1.0, 0.0], [0.0, 2.0]])
        gamma, sigma2 = 2.0, 0.1
        inst = ProblemInstance(hbar=h, radius=0.0, noise=sigma2, sinr_target=gamma)
        rep = verify_proposition1(inst, probe=False)
        assert rep.values["rel_gap"] <= 1e-8
        for W, hi in zip(rep.design.W, h):
            expected = gamma * sigma2 * np.outer(hi, hi) / np.linalg.norm(hi) ** 4
            assert_allclose(W, expected, atol=1e-7)

    def test_random_default_protocol(self):
        for seed in range(3):
            rep = verify_proposition1(generate_instance(4, 4, 0.1, 0.1, 4.0, seed), probe=False)
            v = rep.values
            assert v["rel_gap"] <= 1e-6 and v["kkt_pass"] and v["fixed_cert_pass"]
            assert v["active_pass"] and v["kkt21_max"] <= 1e-6 * (1 + v["primal_obj"])
            assert v["max_rank_ratio"] <= 1e-6 and not v["fallback"]

    def test_infeasible_instance(self):
        rep = verify_proposition1(generate_instance(4, 4, 0.1, 0.1, 30.0, 0))
        v = rep.values
        assert rep.status == Status.PRIMAL_INFEASIBLE.value
        assert_allclose(v["ray_objective"], 1.0, atol=1e-7)
        assert v["ray_violation"] <= 1e-7
        assert v["dual_status"] == Status.DUAL_INFEASIBLE.value

    def test_report_json(self, scalar_inst):
        rep = verify_proposition1(scalar_inst, probe=False)
        d = json.loads(rep.to_json())
        assert tuple(d) == REPORT_KEYS
        assert d["condition1"] is None and d["ray_objective"] is None
        assert isinstance(d["rank_profile"], list)

    def test_rel_gap(self):
        assert rel_gap(1.0, 1.0) == 0.0
        assert rel_gap(-1.0, 0.0) == pytest.approx(0.5)

    def test_report_nan_becomes_null(self):
        rep = DualityReport("Optimal", {"rel_gap": float("nan")})
        assert rep.to_dict()["rel_gap"] is None
        assert np.isnan(rep.rel_gap)


class TestProbe:
    def test_scalar_unique(self, scalar_inst):
        _, cert = scalar_kkt_point()
        verdict, witness = probe_condition1(scalar_inst, cert)
        assert verdict == UNIQUE and witness <= 1e-5

    def test_isotropic_certificate_ambiguous(self):
        # hbar = 0 and V = diag(1/2, 1/2, 1) give R = I/2: every W with the
        # right trace is optimal, so the perturbations pull the minimizer around
        inst = ProblemInstance(hbar=np.zeros((1, 2)), radius=1.0, noise=0.1, sinr_target=1.0)
        cert = DualCertificate([np.diag([0.5, 0.5, 1.0]) + 0j])
        verdict, witness = probe_condition1(inst, cert)
        assert verdict == AMBIGUOUS and witness > 1e-5

    def test_degenerate_certificate(self, scalar_inst):
        verdict, witness = probe_condition1(scalar_inst, DualCertificate([np.zeros((2, 2))]))
        assert verdict == FAILED and np.isnan(witness)

    def test_duplicated_users_symmetric_minimizer(self):
        # identical users make the problem swap-symmetric (and need gamma < 1
        # to be feasible); the minimizer found is the symmetric rank-one point
        base = generate_instance(4, 4, 0.1, 0.1, -3.0, 3)
        h = np.array(base.hbar)
        h[1] = h[0]
        inst = base.replace(hbar=h)
        design = solve_wsp_sdr(inst)[0]
        assert_allclose(design.W[0], design.W[1], atol=1e-6 * (1 + design.objective))
