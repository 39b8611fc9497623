"""CP decomposition of large third-order tensors via coupled random projections."""
from .bench import ExperimentConfig, RunRecord, generate_instance, mean_relative_error, run_experiment, summarize
from .ccpd import CcpdResult, CoupledFactors, algebraic_ccpd, back_project, corap_cpd, coupled_als, select_m_opt
from .cpd import AlsOptions, CpdResult, als_cpd, direct_cpd, rap_cpd
from .errors import ContractError, DegenerateRank1Error, StageError
from .sketch import CompressedEnsemble, ProjectionTriad, SketchConfig, build_corap_triads, build_ensemble, \
    build_rap_projectors, compress
from .tensor import FactorTriple, cpd_reconstruct, dematricize, khatri_rao, matricize, mode_n_product

__version__ = "0.1.0"
