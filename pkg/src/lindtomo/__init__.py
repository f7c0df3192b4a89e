"""Tomography of Markovian noise generators at one- and two-qubit scale.

The package simulates, ingests, and fits measurement-count data to
estimate the Hamiltonian coefficient vector and the PSD noise coefficient
matrix of weakly dissipative qubit dynamics, with exact maximum-likelihood,
linearized-convex, and compressed-sensing estimators plus the diagnostics
to judge the fits.
"""

from .counts import (
    CountsTable,
    FrequencyTensor,
    exact_frequencies,
    frequencies,
    read_counts,
    read_frequencies,
    sample_counts,
    write_counts,
    write_frequencies,
)
from .diagnostics import (
    ChiSquareReport,
    NoiseSummary,
    frobenius_distance,
    noise_summary,
    pearson_chi2,
    shot_noise_floor,
    sparsifying_basis,
    transform_to_basis,
)
from .errors import (
    CountsFormatError,
    InfeasibleError,
    LindtomoError,
    NotPositiveSemidefiniteError,
    PropagationError,
    QuadratureError,
    SizeLimitError,
    ValidationError,
)
from .estimators import (
    CsOptions,
    CsProblem,
    DescentTrace,
    DiaOptions,
    EstimationResult,
    FullMlOptions,
    PgdmOptions,
    cost_full,
    cost_linear,
    cs_estimate,
    dia_estimate,
    full_ml_estimate,
    gradient_R,
    grow_configuration_subsets,
    pgdm_estimate,
    project_psd,
)
from .lindblad import (
    JumpDecomposition,
    LindbladModel,
    OperatorBasis,
    build_liouvillian,
    haar_unitary,
    jump_decomposition,
    predicted_probabilities,
    propagate,
    read_model,
    sample_hs_random_G,
    sample_projector_G,
    structured_noise_G,
    write_model,
)
from .linearize import (
    LinearizedModel,
    TargetUnitary,
    dissipator_coeffs_B,
    frame_matrix_W,
    linear_probability,
    load_linearized,
    save_linearized,
    sensitivity_phi,
    unitary_baseline,
)
from .pauli import PauliBasis, build_pauli_basis, pauli_product, triple_trace
from .states import (
    Configuration,
    ExperimentDesign,
    MeasurementSetting,
    StateSet,
    enumerate_configurations,
    projector,
    standard_initial_states,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
