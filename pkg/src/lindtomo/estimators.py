"""Inference engines for the noise coefficient matrix.

Four estimators share the same likelihood kernels:

* ``full_ml_estimate``   -- nonlinear conjugate gradient on the exact
  propagated probabilities, parameterized by a Cholesky-style factor so the
  estimate stays PSD; gradients by central finite differences.
* ``dia_estimate``       -- "diluted" conjugate gradient on the factor of
  the linearized convex likelihood, with an analytic gradient and a
  three-point quadratic line search.
* ``pgdm_estimate``      -- projected gradient descent with momentum;
  unconstrained Hermitian steps followed by projection onto the PSD cone.
* ``cs_estimate``        -- compressed sensing: minimize the entrywise L1
  norm of the matrix subject to a least-squares data constraint and the
  PSD cone, solved as a convex cone program.

Costs follow the likelihood conventions used throughout: terms with zero
observed frequency contribute exactly zero, and model probabilities are
clamped at PROB_CLAMP before entering a logarithm or denominator.
"""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .counts import FrequencyTensor
from .errors import InfeasibleError, LindtomoError, ValidationError
from .lindblad import (
    LindbladModel,
    OperatorBasis,
    initial_state_vectors,
    measurement_matrix,
    predicted_probabilities,
    probabilities_for_liouvillian,
)
from .linearize import LinearizedModel, linear_probability
from .pauli import PauliBasis
from .states import ExperimentDesign

PROB_CLAMP = 1e-12
_LINE_SEARCH_HALVINGS = 20


def _single_threaded_blas(fn):
    """Pin BLAS to one thread inside descent loops.

    Every matrix here is at most (d^2)^2 = 256 elements; threaded BLAS adds
    orders-of-magnitude synchronization overhead on shared machines.
    """
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with threadpool_limits(limits=1):
            return fn(*args, **kwargs)
    return wrapper


# -- traces and results -------------------------------------------------------


@dataclass
class DescentTrace:
    """Per-iteration descent record arrays (all the same length)."""

    iterations: np.ndarray
    cost: np.ndarray
    step_size: np.ndarray
    gradient_norm: np.ndarray
    distance_to_reference: np.ndarray
    chi2: np.ndarray
    wall_time: np.ndarray

    def __len__(self) -> int:
        return len(self.iterations)


class _TraceBuilder:
    def __init__(self):
        self.rows = []

    def append(self, cost, step, grad_norm, dist, chi2, wall):
        self.rows.append((len(self.rows) + 1, cost, step, grad_norm,
                          np.nan if dist is None else dist,
                          np.nan if chi2 is None else chi2, wall))

    def build(self) -> DescentTrace:
        if not self.rows:
            empty = np.empty(0)
            return DescentTrace(np.empty(0, dtype=int), empty, empty.copy(),
                                empty.copy(), empty.copy(), empty.copy(), empty.copy())
        cols = list(zip(*self.rows))
        return DescentTrace(
            iterations=np.asarray(cols[0], dtype=int),
            cost=np.asarray(cols[1], dtype=float),
            step_size=np.asarray(cols[2], dtype=float),
            gradient_norm=np.asarray(cols[3], dtype=float),
            distance_to_reference=np.asarray(cols[4], dtype=float),
            chi2=np.asarray(cols[5], dtype=float),
            wall_time=np.asarray(cols[6], dtype=float),
        )


@dataclass
class EstimationResult:
    """Outcome of one estimation run."""

    G_hat: np.ndarray
    method: str
    trace: DescentTrace
    converged: bool
    stop_reason: str
    c_hat: Optional[np.ndarray] = None
    options: dict = field(default_factory=dict)

    @property
    def final_cost(self) -> float:
        return float(self.trace.cost[-1]) if len(self.trace) else np.nan


# -- shared likelihood kernels ------------------------------------------------


def _check_compatible(lin: LinearizedModel, frequencies: FrequencyTensor) -> None:
    if frequencies.values.shape != lin.design.shape:
        raise ValidationError("frequencies do not match the linear model's design")


def _select(lin: LinearizedModel, frequencies: FrequencyTensor, config_indices,
            complete_groups: bool = False):
    """Select configuration rows, optionally closing partial basis groups.

    With ``complete_groups``, every (state, time, basis) group that is only
    partially selected gets one synthetic complement row with
    f = 1 - sum(f_selected), p_u and Phi likewise negated sums.  The row
    adds no information beyond the selected outcomes (frequencies within a
    basis sum to one by construction) but restores normalization to the
    likelihood, which is otherwise unbounded below on under-sampled
    selections.  Fully covered groups are untouched.
    """
    _check_compatible(lin, frequencies)
    f = frequencies.flat
    if config_indices is None:
        return f, lin.p_u_flat, lin.phi
    idx = np.asarray(config_indices, dtype=int)
    f_sel, pu_sel, phi_sel = f[idx], lin.p_u_flat[idx], lin.phi[idx]
    if not complete_groups:
        return f_sel, pu_sel, phi_sel

    d = lin.design.n_outcomes
    groups, positions = np.unique(idx // d, return_inverse=True)
    counts = np.bincount(positions)
    partial = counts < d
    if not partial.any():
        return f_sel, pu_sel, phi_sel
    n = lin.n_traceless
    f_rest = np.ones(groups.size)
    np.subtract.at(f_rest, positions, f_sel)
    pu_rest = np.ones(groups.size)
    np.subtract.at(pu_rest, positions, pu_sel)
    phi_rest = np.zeros((groups.size, n, n), dtype=complex)
    np.subtract.at(phi_rest, positions, phi_sel)
    keep = partial
    return (
        np.concatenate([f_sel, np.clip(f_rest[keep], 0.0, None)]),
        np.concatenate([pu_sel, pu_rest[keep]]),
        np.concatenate([phi_sel, phi_rest[keep]]),
    )


def _neg_log_likelihood(f: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, PROB_CLAMP, None)
    mask = f > 0
    return float(-(f[mask] * np.log(p[mask])).sum())


def cost_linear(
    G: np.ndarray,
    lin: LinearizedModel,
    frequencies: FrequencyTensor,
    config_indices=None,
    complete_groups: bool = False,
) -> float:
    """Negative log-likelihood of the linear probability model at G."""
    f, p_u, phi = _select(lin, frequencies, config_indices, complete_groups)
    p = p_u + np.einsum("kpq,pq->k", phi, G).real
    return _neg_log_likelihood(f, p)


def gradient_R(
    G: np.ndarray,
    lin: LinearizedModel,
    frequencies: FrequencyTensor,
    config_indices=None,
    complete_groups: bool = False,
) -> np.ndarray:
    """Hermitian gradient matrix R with dC = Tr{R dG} for the linear cost."""
    f, p_u, phi = _select(lin, frequencies, config_indices, complete_groups)
    p = p_u + np.einsum("kpq,pq->k", phi, G).real
    return _gradient_R_from(f, p, phi)


def _gradient_R_from(f: np.ndarray, p: np.ndarray, phi: np.ndarray) -> np.ndarray:
    ratio = np.where(f > 0, f / np.clip(p, PROB_CLAMP, None), 0.0)
    # R = - sum_k ratio_k Phi_k^T
    return -np.einsum("k,kqp->pq", ratio, phi)


def project_psd(A: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix: hermitize, then zero out negative eigenvalues."""
    H = (A + A.conj().T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(H)
    if eigvals[0] >= 0:
        return H
    eigvals = np.clip(eigvals, 0.0, None)
    M = (eigvecs * eigvals[np.newaxis, :]) @ eigvecs.conj().T
    return (M + M.conj().T) / 2.0


def _default_initial_G(n: int, trace: float) -> np.ndarray:
    return np.eye(n, dtype=complex) * (trace / n)


def _reduced_chi2(p_flat, f_flat, dim, n_groups, shots_per_setting) -> float:
    """Group-averaged reduced Pearson statistic; see diagnostics for the report."""
    p = np.clip(p_flat, PROB_CLAMP, None)
    terms = (p - f_flat) ** 2 / p
    return float(shots_per_setting / ((dim - 1) * n_groups) * terms.sum())


def _trace_chi2(lin, frequencies, G, enabled) -> Optional[float]:
    if not enabled:
        return None
    design = lin.design
    p = linear_probability(lin, G)
    n_groups = design.n_states * design.n_times * design.n_bases
    return _reduced_chi2(p, frequencies.flat, design.dim,
                         n_groups, frequencies.n_shots / n_groups)


def _resolve_chi2_flag(record_chi2, frequencies) -> bool:
    if record_chi2 is None:
        return frequencies.n_shots is not None
    return bool(record_chi2) and frequencies.n_shots is not None


def _normalized_distance(G, reference) -> Optional[float]:
    if reference is None:
        return None
    return float(np.linalg.norm(G - reference) / np.linalg.norm(reference))


# -- quadratic-interpolation line search ---------------------------------------


def _quadratic_line_search(cost_at, cost0, eta_prime):
    """Three-point quadratic line search with halving safeguards.

    Samples the cost at 0, eta' and 2 eta', fits a parabola, and evaluates
    its minimizer.  Negative curvature or failure to descend halves eta'
    (up to _LINE_SEARCH_HALVINGS times).  Returns (eta, cost) or None.
    """
    for _ in range(_LINE_SEARCH_HALVINGS + 1):
        c1 = cost_at(eta_prime)
        c2 = cost_at(2.0 * eta_prime)
        candidates = [(eta_prime, c1), (2.0 * eta_prime, c2)]
        curvature = cost0 - 2.0 * c1 + c2  # = 2 a eta_prime^2 for the parabola
        if np.isfinite(curvature) and curvature > 0:
            eta_star = eta_prime * (3.0 * cost0 - 4.0 * c1 + c2) / (2.0 * curvature)
            if np.isfinite(eta_star) and eta_star > 0:
                candidates.append((eta_star, cost_at(eta_star)))
        eta_best, cost_best = min(candidates, key=lambda ec: ec[1])
        if np.isfinite(cost_best) and cost_best < cost0:
            return eta_best, cost_best
        eta_prime /= 2.0
    return None


# -- DIA ------------------------------------------------------------------------


@dataclass
class DiaOptions:
    """Options for the conjugate-gradient descent on the PSD factor."""

    eta_prime: float = 0.3
    xi: float = 0.5
    stationarity_tol: float = 1e-10
    cost_tol: float = 1e-10
    max_iter: int = 5000
    initial_G: Optional[np.ndarray] = None
    initial_trace: float = 0.25
    reference_G: Optional[np.ndarray] = None
    config_indices: Optional[np.ndarray] = None
    record_chi2: Optional[bool] = None
    complete_groups: bool = True
    # stop once the reduced Pearson statistic of the fit drops below this
    # value (goodness-of-fit stopping; guards against fitting pure shot
    # noise).  Requires finite-shot data.  None disables.
    chi2_stop: Optional[float] = None


def _psd_factor(G: np.ndarray) -> np.ndarray:
    """A factor L with L L^dag = G for PSD G (eigenvalue square root)."""
    eigvals, eigvecs = np.linalg.eigh((G + G.conj().T) / 2.0)
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))[np.newaxis, :]


def _bisect_chi2_crossing(L_start, step, chi2_of, threshold, iters: int = 40):
    """Largest step fraction whose chi-square still meets the threshold."""
    if chi2_of(L_start) <= threshold:
        return L_start
    lo, hi = 0.0, 1.0  # chi2(lo) > threshold >= chi2(hi)
    for _ in range(iters):
        mid = (lo + hi) / 2.0
        if chi2_of(L_start + mid * step) <= threshold:
            hi = mid
        else:
            lo = mid
    return L_start + hi * step


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.real(np.vdot(a, b)))


@_single_threaded_blas
def dia_estimate(
    lin: LinearizedModel,
    frequencies: FrequencyTensor,
    options: Optional[DiaOptions] = None,
) -> EstimationResult:
    """Polak-Ribiere conjugate gradient on a factor z with G = z z^dag.

    The analytic gradient pair is (R z, z^dag R); a pure gradient step with
    rate eta maps G to (1 - eta R) G (1 - eta R).  Stops on stationarity
    |Tr{R z}| <= stationarity_tol, on a relative cost plateau, or at
    max_iter.
    """
    opts = options or DiaOptions()
    f, p_u, phi = _select(lin, frequencies, opts.config_indices, opts.complete_groups)
    n = lin.n_traceless
    G0 = opts.initial_G if opts.initial_G is not None \
        else _default_initial_G(n, opts.initial_trace)
    record_chi2 = _resolve_chi2_flag(opts.record_chi2, frequencies)
    if opts.chi2_stop is not None:
        if frequencies.n_shots is None:
            raise ValidationError("chi2_stop requires finite-shot data")
        record_chi2 = True

    def cost_of(L):
        G = L @ L.conj().T
        p = p_u + np.einsum("kpq,pq->k", phi, G).real
        return _neg_log_likelihood(f, p)

    L = _psd_factor(np.asarray(G0, dtype=complex))
    cost = cost_of(L)
    G = L @ L.conj().T
    R = _gradient_R_from(f, p_u + np.einsum("kpq,pq->k", phi, G).real, phi)
    g = R @ L
    h = -g
    trace = _TraceBuilder()
    stop_reason = "max_iterations"
    converged = False
    eta_prime = opts.eta_prime

    for _ in range(opts.max_iter):
        t_start = time.perf_counter()
        if _inner(g, h) >= 0:
            h = -g  # conjugacy lost; restart from steepest descent
        found = _quadratic_line_search(lambda eta: cost_of(L + eta * h), cost, eta_prime)
        if found is None:
            stop_reason = "line_search_failed"
            break
        eta, new_cost = found
        step_dir = h
        L = L + eta * h
        G = L @ L.conj().T
        p = p_u + np.einsum("kpq,pq->k", phi, G).real
        R = _gradient_R_from(f, p, phi)
        g_new = R @ L
        denom = _inner(g, g)
        gamma = max(_inner(g_new, g_new - opts.xi * g) / denom, 0.0) if denom > 0 else 0.0
        h = -g_new + gamma * h
        g = g_new

        stationarity = abs(np.trace(R @ L))
        rel_change = abs(new_cost - cost) / max(1.0, abs(cost))
        cost = new_cost
        chi2 = _trace_chi2(lin, frequencies, G, record_chi2)
        trace.append(cost, eta, float(np.linalg.norm(g)),
                     _normalized_distance(G, opts.reference_G),
                     chi2, time.perf_counter() - t_start)
        if opts.chi2_stop is not None and chi2 <= opts.chi2_stop:
            # one descent step can jump far past the threshold; bisect the
            # step fraction so the returned fit sits at the threshold
            # instead of deep inside the overfitting regime
            L = _bisect_chi2_crossing(
                L - eta * step_dir, eta * step_dir,
                lambda M: _trace_chi2(lin, frequencies, M @ M.conj().T, True),
                opts.chi2_stop)
            G = L @ L.conj().T
            stop_reason, converged = "chi2_threshold", True
            break
        if opts.stationarity_tol > 0 and stationarity <= opts.stationarity_tol:
            stop_reason, converged = "stationarity", True
            break
        if opts.cost_tol > 0 and rel_change <= opts.cost_tol:
            stop_reason, converged = "cost_plateau", True
            break

    return EstimationResult(
        G_hat=(G + G.conj().T) / 2.0,
        method="dia",
        trace=trace.build(),
        converged=converged,
        stop_reason=stop_reason,
        options=_options_dict(opts),
    )


# -- pGDM -----------------------------------------------------------------------


@dataclass
class PgdmOptions:
    """Options for projected gradient descent with momentum."""

    gamma: float = 0.99
    eta: float = 3e-4
    cost_tol: float = 1e-10
    max_iter: int = 5000
    initial_G: Optional[np.ndarray] = None
    initial_trace: float = 0.25
    reference_G: Optional[np.ndarray] = None
    config_indices: Optional[np.ndarray] = None
    record_chi2: Optional[bool] = None
    complete_groups: bool = True
    reset_momentum_on_increase: bool = False
    divergence_patience: int = 50


@_single_threaded_blas
def pgdm_estimate(
    lin: LinearizedModel,
    frequencies: FrequencyTensor,
    options: Optional[PgdmOptions] = None,
) -> EstimationResult:
    """Momentum descent with PSD projection after every update.

    The iterate may leave the PSD cone during the momentum step; it is
    projected back by zeroing negative eigenvalues.  Stops on a relative
    cost plateau, on a sustained cost increase (divergence guard), or at
    max_iter.  No Nesterov lookahead and no line search: the step size is
    held fixed.
    """
    opts = options or PgdmOptions()
    f, p_u, phi = _select(lin, frequencies, opts.config_indices, opts.complete_groups)
    n = lin.n_traceless
    G0 = opts.initial_G if opts.initial_G is not None \
        else _default_initial_G(n, opts.initial_trace)
    record_chi2 = _resolve_chi2_flag(opts.record_chi2, frequencies)

    def cost_of(G):
        return _neg_log_likelihood(f, p_u + np.einsum("kpq,pq->k", phi, G).real)

    G = project_psd(np.asarray(G0, dtype=complex))
    momentum = np.zeros_like(G)
    cost = cost_of(G)
    trace = _TraceBuilder()
    stop_reason = "max_iterations"
    converged = False
    increase_streak = 0

    for _ in range(opts.max_iter):
        t_start = time.perf_counter()
        p = p_u + np.einsum("kpq,pq->k", phi, G).real
        R = _gradient_R_from(f, p, phi)
        momentum = opts.gamma * momentum - opts.eta * R
        G = project_psd(G + momentum)
        new_cost = cost_of(G)
        if new_cost > cost:
            increase_streak += 1
            if opts.reset_momentum_on_increase:
                momentum = np.zeros_like(G)
        else:
            increase_streak = 0
        rel_change = abs(new_cost - cost) / max(1.0, abs(cost))
        cost = new_cost
        trace.append(cost, opts.eta, float(np.linalg.norm(R)),
                     _normalized_distance(G, opts.reference_G),
                     _trace_chi2(lin, frequencies, G, record_chi2),
                     time.perf_counter() - t_start)
        if increase_streak >= opts.divergence_patience:
            stop_reason = "diverging_cost"
            break
        if opts.cost_tol > 0 and rel_change <= opts.cost_tol:
            stop_reason, converged = "cost_plateau", True
            break

    return EstimationResult(
        G_hat=project_psd(G),
        method="pgdm",
        trace=trace.build(),
        converged=converged,
        stop_reason=stop_reason,
        options=_options_dict(opts),
    )


# -- full maximum likelihood -----------------------------------------------------


@dataclass
class FullMlOptions:
    """Options for the exact-propagation conjugate-gradient estimator."""

    eta_prime: float = 0.1
    fd_step: float = 1e-6
    cost_tol: float = 1e-10
    max_iter: int = 3000
    initial_G: Optional[np.ndarray] = None
    initial_trace: float = 0.25
    reference_G: Optional[np.ndarray] = None
    estimate_hamiltonian: bool = False
    c_known: Optional[np.ndarray] = None
    initial_c: Optional[np.ndarray] = None
    operator_basis: Optional[OperatorBasis] = None
    record_chi2: Optional[bool] = None


def cost_full(
    c: np.ndarray,
    G: np.ndarray,
    frequencies: FrequencyTensor,
    design: ExperimentDesign,
    basis: PauliBasis,
    operator_basis: Optional[OperatorBasis] = None,
) -> float:
    """Negative log-likelihood of the exactly propagated model."""
    model = LindbladModel(basis=basis, c=np.asarray(c, float), G=np.asarray(G, complex),
                          operator_basis=operator_basis)
    p = predicted_probabilities(model, design).reshape(-1)
    return _neg_log_likelihood(frequencies.flat, p)


class _AffineLiouvillian:
    """Generator assembly as an affine map of (c, G) for descent hot loops.

    The vectorized generator is linear in the Hamiltonian coefficients and
    in the noise matrix entries, so both families of superoperator blocks
    are precomputed once and every evaluation is a flat matrix-vector
    product.
    """

    def __init__(self, basis: PauliBasis, operator_basis: Optional[OperatorBasis]):
        d = basis.dim
        n = d * d - 1
        op_basis = operator_basis or OperatorBasis.pauli(n)
        B = op_basis.dense_operators(basis)
        ident = np.eye(d)
        S = np.empty((n, n, d * d * d * d), dtype=complex)
        for p in range(n):
            for q in range(n):
                A = B[q].conj().T @ B[p]
                block = np.kron(B[q].conj(), B[p]) \
                    - 0.5 * (np.kron(ident, A) + np.kron(A.T, ident))
                S[p, q] = block.reshape(-1)
        self._dissipator_blocks = S.reshape(n * n, -1)
        H_blocks = np.empty((n, d * d * d * d), dtype=complex)
        for a in range(n):
            E = basis.elements[a + 1]
            H_blocks[a] = (-1j * (np.kron(ident, E) - np.kron(E.T, ident))).reshape(-1)
        self._hamiltonian_blocks = H_blocks
        self._dd = d * d

    def build(self, c: np.ndarray, G: np.ndarray) -> np.ndarray:
        flat = c @ self._hamiltonian_blocks + G.reshape(-1) @ self._dissipator_blocks
        return flat.reshape(self._dd, self._dd)


class _FactorParameterization:
    """Real coordinates for a lower-triangular factor (plus optional c)."""

    def __init__(self, n: int, estimate_c: bool):
        self.n = n
        self.estimate_c = estimate_c
        self.rows, self.cols = np.tril_indices(n, k=-1)
        self.n_params = n + 2 * len(self.rows) + (n if estimate_c else 0)

    def init_theta(self, G0: np.ndarray, c0: np.ndarray) -> np.ndarray:
        L = np.linalg.cholesky(
            np.asarray(G0, complex) + 1e-14 * np.eye(self.n))
        theta = np.empty(self.n_params)
        theta[:self.n] = L.diagonal().real
        m = len(self.rows)
        theta[self.n:self.n + m] = L[self.rows, self.cols].real
        theta[self.n + m:self.n + 2 * m] = L[self.rows, self.cols].imag
        if self.estimate_c:
            theta[self.n + 2 * m:] = c0
        return theta

    def factor(self, theta: np.ndarray) -> np.ndarray:
        L = np.zeros((self.n, self.n), dtype=complex)
        np.fill_diagonal(L, theta[:self.n])
        m = len(self.rows)
        L[self.rows, self.cols] = (theta[self.n:self.n + m]
                                   + 1j * theta[self.n + m:self.n + 2 * m])
        return L

    def G(self, theta: np.ndarray) -> np.ndarray:
        L = self.factor(theta)
        return L @ L.conj().T

    def c(self, theta: np.ndarray, c_fixed: np.ndarray) -> np.ndarray:
        if not self.estimate_c:
            return c_fixed
        return theta[self.n_params - self.n:]


@_single_threaded_blas
def full_ml_estimate(
    frequencies: FrequencyTensor,
    design: ExperimentDesign,
    basis: PauliBasis,
    options: Optional[FullMlOptions] = None,
) -> EstimationResult:
    """Nonlinear CG over the factor entries of G (and over c if requested).

    The cost propagates the candidate generator exactly, so each evaluation
    exponentiates the vectorized generator; gradients use central finite
    differences with step ``fd_step`` on every real coordinate.
    """
    opts = options or FullMlOptions()
    n = basis.n_elements - 1
    if frequencies.values.shape != design.shape:
        raise ValidationError("frequencies do not match the design")
    if basis.n_qubits != design.n_qubits:
        raise ValidationError("basis and design qubit counts differ")
    if frequencies.n_shots is None and opts.record_chi2:
        raise ValidationError("chi-square trace requires finite-shot data")

    c_fixed = np.zeros(n) if opts.c_known is None else np.asarray(opts.c_known, float)
    G0 = opts.initial_G if opts.initial_G is not None \
        else _default_initial_G(n, opts.initial_trace)
    c0 = np.asarray(opts.initial_c, float) if opts.initial_c is not None else c_fixed
    param = _FactorParameterization(n, opts.estimate_hamiltonian)
    theta = param.init_theta(G0, c0)

    state_vecs = initial_state_vectors(design.n_qubits)
    meas_matrix = measurement_matrix(design)
    f_flat = frequencies.flat
    record_chi2 = _resolve_chi2_flag(opts.record_chi2, frequencies)
    n_groups = design.n_states * design.n_times * design.n_bases

    assembler = _AffineLiouvillian(basis, opts.operator_basis)

    def probabilities(theta_vec):
        L = assembler.build(param.c(theta_vec, c_fixed), param.G(theta_vec))
        return probabilities_for_liouvillian(
            L, design, state_vecs=state_vecs, meas_matrix=meas_matrix,
            validate=False).reshape(-1)

    def cost_of(theta_vec):
        return _neg_log_likelihood(f_flat, probabilities(theta_vec))

    def gradient(theta_vec):
        grad = np.empty_like(theta_vec)
        step = opts.fd_step
        probe = theta_vec.copy()
        for j in range(theta_vec.size):
            orig = probe[j]
            probe[j] = orig + step
            c_plus = cost_of(probe)
            probe[j] = orig - step
            c_minus = cost_of(probe)
            probe[j] = orig
            grad[j] = (c_plus - c_minus) / (2.0 * step)
        return grad

    cost = cost_of(theta)
    g = gradient(theta)
    h = -g
    trace = _TraceBuilder()
    stop_reason = "max_iterations"
    converged = False
    eta_prime = opts.eta_prime

    for _ in range(opts.max_iter):
        t_start = time.perf_counter()
        if float(g @ h) >= 0:
            h = -g
        found = _quadratic_line_search(lambda eta: cost_of(theta + eta * h), cost,
                                       eta_prime)
        if found is None:
            stop_reason = "line_search_failed"
            break
        eta, new_cost = found
        theta = theta + eta * h
        g_new = gradient(theta)
        denom = float(g @ g)
        gamma = max(float(g_new @ (g_new - g)) / denom, 0.0) if denom > 0 else 0.0
        h = -g_new + gamma * h
        g = g_new
        # reuse the accepted step to scale the next bracket
        eta_prime = min(max(2.0 * eta, 1e-8), 10.0 * opts.eta_prime)

        rel_change = abs(new_cost - cost) / max(1.0, abs(cost))
        cost = new_cost
        G = param.G(theta)
        chi2 = None
        if record_chi2:
            chi2 = _reduced_chi2(probabilities(theta), f_flat, design.dim,
                                 n_groups, frequencies.n_shots / n_groups)
        trace.append(cost, eta, float(np.linalg.norm(g)),
                     _normalized_distance(G, opts.reference_G), chi2,
                     time.perf_counter() - t_start)
        if opts.cost_tol > 0 and rel_change <= opts.cost_tol:
            stop_reason, converged = "cost_plateau", True
            break

    G_final = param.G(theta)
    return EstimationResult(
        G_hat=(G_final + G_final.conj().T) / 2.0,
        method="full",
        trace=trace.build(),
        converged=converged,
        stop_reason=stop_reason,
        c_hat=param.c(theta, c_fixed).copy() if opts.estimate_hamiltonian else None,
        options=_options_dict(opts),
    )


# -- compressed sensing ------------------------------------------------------------


@dataclass
class CsOptions:
    """Options for the compressed-sensing cone program."""

    config_indices: Optional[np.ndarray] = None
    solver: str = "SCS"
    solver_options: dict = field(default_factory=dict)


class CsProblem:
    """Reusable cone program for one linear model.

    Compiling the program once and re-solving with different configuration
    masks and residual bounds makes subset sweeps cheap.  The Hermitian
    unknown G = X + iY is embedded as the real PSD matrix [[X, -Y], [Y, X]].
    """

    def __init__(self, lin: LinearizedModel, solver: str = "SCS",
                 solver_options: Optional[dict] = None):
        import cvxpy as cp

        self._cp = cp
        self.lin = lin
        self.solver = solver
        self.solver_options = dict(solver_options or {})
        n = lin.n_traceless
        K = lin.phi.shape[0]
        A_re = lin.phi.real.reshape(K, n * n)
        A_im = lin.phi.imag.reshape(K, n * n)
        self._X = cp.Variable((n, n), symmetric=True)
        self._Y = cp.Variable((n, n))
        self._mask = cp.Parameter(K, nonneg=True)
        self._masked_target = cp.Parameter(K)
        self._bound = cp.Parameter(nonneg=True)
        pred = A_re @ cp.vec(self._X, order="C") - A_im @ cp.vec(self._Y, order="C")
        embedded = cp.bmat([[self._X, -self._Y], [self._Y, self._X]])
        constraints = [
            cp.norm(self._masked_target - cp.multiply(self._mask, pred), 2)
            <= self._bound,
            embedded >> 0,
            self._Y == -self._Y.T,
        ]
        objective = cp.Minimize(cp.sum(cp.abs(self._X)) + cp.sum(cp.abs(self._Y)))
        self._problem = cp.Problem(objective, constraints)

    def solve(self, frequencies: FrequencyTensor, epsilon: float,
              config_indices=None) -> EstimationResult:
        _check_compatible(self.lin, frequencies)
        if epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        K = self.lin.phi.shape[0]
        mask = np.zeros(K)
        if config_indices is None:
            mask[:] = 1.0
            n_conf = K
        else:
            idx = np.asarray(config_indices, dtype=int)
            mask[idx] = 1.0
            n_conf = idx.size
        residual_target = mask * (frequencies.flat - self.lin.p_u_flat)
        self._mask.value = mask
        self._masked_target.value = residual_target
        self._bound.value = np.sqrt(n_conf) * epsilon

        t_start = time.perf_counter()
        self._problem.solve(solver=self.solver, **self.solver_options)
        wall = time.perf_counter() - t_start
        status = self._problem.status
        if status in ("infeasible", "infeasible_inaccurate"):
            raise InfeasibleError(
                f"no PSD matrix fits the data within sqrt({n_conf})*{epsilon:.3g} "
                f"(residual at G=0 is {np.linalg.norm(residual_target):.3g})")
        if self._X.value is None:
            raise LindtomoError(f"compressed-sensing solver ended with status {status}")
        G = project_psd(self._X.value + 1j * self._Y.value)
        trace = _TraceBuilder()
        trace.append(float(self._problem.value), np.nan, np.nan, None, None, wall)
        return EstimationResult(
            G_hat=G,
            method="cs",
            trace=trace.build(),
            converged=status == "optimal",
            stop_reason=status,
            options={"epsilon": epsilon, "n_conf": int(n_conf), "solver": self.solver},
        )


def cs_estimate(
    lin: LinearizedModel,
    frequencies: FrequencyTensor,
    epsilon: float,
    options: Optional[CsOptions] = None,
    problem: Optional[CsProblem] = None,
) -> EstimationResult:
    """L1-sparsest PSD matrix subject to the least-squares data constraint.

    ``epsilon`` sets the per-configuration residual scale: the Euclidean
    norm of the selected residual vector must stay below
    sqrt(n_conf) * epsilon.  Pass a prebuilt :class:`CsProblem` to amortize
    compilation across many solves.
    """
    opts = options or CsOptions()
    if problem is None:
        problem = CsProblem(lin, solver=opts.solver, solver_options=opts.solver_options)
    return problem.solve(frequencies, epsilon, opts.config_indices)


# -- configuration subset schedules --------------------------------------------------


def grow_configuration_subsets(
    all_configs: np.ndarray,
    start: int = 33,
    step: int = 21,
    repeats: int = 1,
    rng: Optional[np.random.Generator] = None,
) -> list[list[np.ndarray]]:
    """Random nested subset schedules growing from ``start`` by ``step``.

    Returns ``repeats`` schedules; each is a list of index arrays of sizes
    start, start+step, ... up to the full set (the final size is always the
    full set).  Every subset contains its predecessor.
    """
    all_configs = np.asarray(all_configs)
    total = all_configs.size
    if step < 1:
        raise ValidationError("step must be >= 1")
    if not 1 <= start <= total:
        raise ValidationError("start must lie in 1..len(all_configs)")
    rng = rng or np.random.default_rng()
    sizes = list(range(start, total + 1, step))
    if sizes[-1] != total:
        sizes.append(total)
    schedules = []
    for stream in rng.spawn(repeats):
        perm = all_configs[stream.permutation(total)]
        schedules.append([perm[:size].copy() for size in sizes])
    return schedules


def _options_dict(opts) -> dict:
    """JSON-safe echo of an options dataclass for result records."""
    out = {}
    for fld in fields(opts):
        value = getattr(opts, fld.name)
        if value is None or isinstance(value, (bool, int, float, str)):
            out[fld.name] = value
        elif isinstance(value, dict):
            out[fld.name] = {k: v for k, v in value.items()
                             if isinstance(v, (bool, int, float, str))}
        else:
            out[fld.name] = f"<{type(value).__name__}>"
    return out
