"""Robust downlink beamforming by semidefinite relaxation.

Builds the robust SDR and its dual from a :class:`ProblemInstance`, solves both
with a small dense interior-point solver, and checks zero duality gap, KKT
residuals, rank-one solutions and worst-case SINR with an exact
trust-region oracle.
"""
__version__ = "0.1.0"

from .core import ProblemInstance, db_to_linear, evaluate_sinr, herm_eig, linear_to_db, real_embed
from .duality import (DualityReport, KktResidual, check_kkt_15, check_kkt_21,
                      map_certificate_to_maxmin, map_maxmin_to_certificate, probe_condition1,
                      verify_proposition1)
from .formulations import (DualCertificate, MaxMinSolution, RobustDesign, build_dual_sdp,
                           build_error_sdr, build_fixed_certificate_inner, build_inner_sdp,
                           build_psi, build_wsp_sdr, build_y, solve_dual_sdp, solve_wsp_sdr)
from .harness import SweepConfig, SweepRecord, generate_instance, run_sweep
from .oracle import (BeamformerSet, extract_beamformers, slemma_check, trs_min,
                     worst_case_sinr)
from .sdp_solver import ConicProgram, ConicSolution, SolverOptions, Status, presolve, solve

__all__ = [name for name in dir() if not name.startswith("_")]
