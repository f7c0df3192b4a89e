"""Goodness of fit, error metrics, shot-noise floors, noise structure.

The reduced Pearson statistic is computed per (state, time, basis) group
with its d-1 degrees of freedom and then averaged over groups, so a correct
model scores about 1 regardless of how many settings the design contains.
All outcomes enter the sum, including the per-basis dependent one; the
(d-1) reduction accounts for that dependence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .counts import FrequencyTensor, frequencies, sample_counts
from .errors import ValidationError
from .estimators import DiaOptions, dia_estimate
from .lindblad import (
    LindbladModel,
    OperatorBasis,
    jump_decomposition,
    predicted_probabilities,
)
from .linearize import (
    LinearizedModel,
    TargetUnitary,
    linear_probability,
    sensitivity_phi,
    unitary_baseline,
)
from .pauli import build_pauli_basis, pauli_expansion
from .states import ExperimentDesign

CHI2_CAP = 1e12  # sentinel reported when a zero-probability bin has counts
MIN_EXPECTED_COUNT = 5.0


@dataclass(frozen=True)
class ChiSquareReport:
    """Reduced Pearson statistic with its validity indicators."""

    chi2: float
    sigma: float
    n_terms: int
    min_expected_count: float
    capped: bool = False

    @property
    def valid(self) -> bool:
        return not self.capped and self.min_expected_count >= MIN_EXPECTED_COUNT


def _model_probabilities(estimate, design: ExperimentDesign) -> np.ndarray:
    """Resolve the probability tensor behind an estimate argument."""
    if isinstance(estimate, np.ndarray):
        if estimate.shape != design.shape:
            raise ValidationError("probability tensor does not match the design")
        return estimate
    if isinstance(estimate, LindbladModel):
        return predicted_probabilities(estimate, design)
    if isinstance(estimate, tuple) and len(estimate) == 2 \
            and isinstance(estimate[0], LinearizedModel):
        lin, G = estimate
        return linear_probability(lin, G).reshape(design.shape)
    raise ValidationError(
        "estimate must be a probability tensor, a LindbladModel, or a "
        "(LinearizedModel, G) pair")


def pearson_chi2(
    estimate,
    freqs: FrequencyTensor,
    design: ExperimentDesign,
    n_shots: int,
) -> ChiSquareReport:
    """Reduced Pearson chi-square of a model against observed frequencies."""
    if freqs.values.shape != design.shape:
        raise ValidationError("frequencies do not match the design")
    p = np.clip(_model_probabilities(estimate, design), 0.0, None)
    f = freqs.values
    n_groups = design.n_states * design.n_times * design.n_bases
    shots_per_group = n_shots / n_groups
    d = design.dim

    zero_p = p <= 0
    impossible = zero_p & (f > 0)
    terms = np.zeros_like(p)
    ok = ~zero_p
    terms[ok] = (p[ok] - f[ok]) ** 2 / p[ok]
    chi2 = shots_per_group / ((d - 1) * n_groups) * terms.sum()
    capped = bool(impossible.any())
    if capped:
        chi2 = CHI2_CAP
    return ChiSquareReport(
        chi2=float(chi2),
        sigma=float(np.sqrt(2.0 / (d - 1))),
        n_terms=int(p.size),
        min_expected_count=float(shots_per_group * p.min()),
        capped=capped,
    )


def frobenius_distance(A: np.ndarray, B: np.ndarray, normalized: bool = False) -> float:
    """||A - B||_F, divided by ||B||_F when ``normalized``."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise ValidationError("matrices must have equal shapes")
    dist = float(np.linalg.norm(A - B))
    return dist / float(np.linalg.norm(B)) if normalized else dist


def shot_noise_floor(
    target: TargetUnitary,
    design: ExperimentDesign,
    shots_per_setting: Optional[int],
    repeats: int,
    rng: np.random.Generator,
    lin: Optional[LinearizedModel] = None,
    estimator_options: Optional[DiaOptions] = None,
) -> float:
    """Largest spurious decay rate fitted to pure sampling noise.

    Counts are drawn from the ideal-unitary distribution, the linear
    estimator is run, and the maximum eigenvalue of the fitted matrix is
    recorded; the median over ``repeats`` is returned.  The descent stops
    at reduced chi-square 1 (the goodness-of-fit heuristic): descending
    further would only chase the sampling noise all the way to a degenerate
    all-zero fit.  Passing ``shots_per_setting=None`` uses the exact
    distribution (no noise), a consistency check that should give a floor
    at numerical zero.
    """
    if lin is None:
        lin = sensitivity_phi(target, design)
    p_u = unitary_baseline(target, design)
    if estimator_options is None:
        # Fitting any further once the statistic is within one standard
        # deviation of its ideal value means fitting the sampling noise
        # itself; the descent would otherwise continue to the degenerate
        # all-zero optimum.
        chi2_stop = None
        if shots_per_setting is not None:
            chi2_stop = 1.0 + float(np.sqrt(2.0 / (design.dim - 1)))
        # small line-search scale: big descent steps would chord across the
        # goodness-of-fit threshold instead of tracking it
        estimator_options = DiaOptions(chi2_stop=chi2_stop, eta_prime=0.05,
                                       initial_trace=0.25,
                                       stationarity_tol=1e-12, cost_tol=1e-13,
                                       max_iter=4000)
    opts = estimator_options
    maxima = []
    for stream in rng.spawn(max(repeats, 1)):
        if shots_per_setting is None:
            freq = FrequencyTensor(design=design, values=p_u)
        else:
            table = sample_counts(p_u, design, shots_per_setting, stream)
            freq = frequencies(table)
        result = dia_estimate(lin, freq, opts)
        maxima.append(float(np.linalg.eigvalsh(result.G_hat).max()))
    return float(np.median(maxima))


@dataclass(frozen=True)
class NoiseSummary:
    """Rates and jump-operator directions extracted from an estimate.

    ``axes`` holds one unit-norm Pauli coefficient vector per rate (the
    decomposition of the jump operator over traceless Pauli words);
    ``conclusive`` flags rates that exceed the shot-noise floor.
    """

    rates: np.ndarray
    axes: np.ndarray            # (n_rates, d^2 - 1), rows unit norm
    pauli_labels: tuple[str, ...]
    shot_noise_floor: float
    conclusive: np.ndarray

    @property
    def dominant_rate(self) -> float:
        return float(self.rates[0])

    @property
    def dominant_axis(self) -> np.ndarray:
        return self.axes[0]


def noise_summary(
    G_hat: np.ndarray,
    operator_basis: Optional[OperatorBasis] = None,
    floor: float = 0.0,
    n_qubits: Optional[int] = None,
) -> NoiseSummary:
    """Decompose an estimate into rates and unit jump-operator directions."""
    G_hat = np.asarray(G_hat, dtype=complex)
    n = G_hat.shape[0]
    if n_qubits is None:
        n_qubits = int(round(np.log2(np.sqrt(n + 1))))
    basis = build_pauli_basis(n_qubits)
    decomp = jump_decomposition(G_hat, operator_basis=operator_basis, basis=basis)
    axes = np.empty((len(decomp.rates), n), dtype=complex)
    for k, op in enumerate(decomp.jump_ops):
        coeffs = pauli_expansion(op, basis)[1:]
        norm = np.linalg.norm(coeffs)
        axes[k] = coeffs / norm if norm > 0 else coeffs
    labels = tuple(basis.label(alpha) for alpha in range(1, n + 1))
    return NoiseSummary(
        rates=decomp.rates,
        axes=axes,
        pauli_labels=labels,
        shot_noise_floor=float(floor),
        conclusive=decomp.rates >= floor,
    )


def sparsifying_basis(
    G_hat: np.ndarray,
    operator_basis: Optional[OperatorBasis] = None,
) -> OperatorBasis:
    """Eigenbasis of an estimate, as a new operator basis.

    Re-deriving the linear model in this basis makes the true noise matrix
    (near-)diagonal, which is what entrywise-L1 recovery thrives on.
    Rows are ordered by descending eigenvalue.
    """
    G_hat = np.asarray(G_hat, dtype=complex)
    H = (G_hat + G_hat.conj().T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(H)
    order = np.argsort(eigvals)[::-1]
    U = eigvecs[:, order]
    current = operator_basis.coeffs if operator_basis is not None \
        else np.eye(G_hat.shape[0], dtype=complex)
    return OperatorBasis(U.T @ current)


def transform_to_basis(G: np.ndarray, new_basis: OperatorBasis,
                       old_basis: Optional[OperatorBasis] = None) -> np.ndarray:
    """Re-express a noise matrix in another operator basis.

    With rows b of the bases related by coeffs_new = T coeffs_old, the
    matrix transforms as G_new = T^-dag G_old T^-1 ... computed directly
    from the Pauli-basis representative for robustness.
    """
    n = G.shape[0]
    old = old_basis.coeffs if old_basis is not None else np.eye(n, dtype=complex)
    # Pauli-basis representative: G_pauli = old^T G conj(old)
    G_pauli = old.T @ G @ old.conj()
    new = new_basis.coeffs
    inv = np.linalg.inv(new.T)
    return inv @ G_pauli @ inv.conj().T
