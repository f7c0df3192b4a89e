"""Weak-noise linear model: baseline probabilities plus noise sensitivities.

For a known target unitary U(t) = exp(-i t H) and weak Markovian noise, the
outcome probability of every configuration k is, to first order in the
noise strength,

    p_k = p^u_k + sum_pq Phi_k[p, q] G[p, q]

where p^u is the noiseless baseline and the sensitivity matrices Phi are
assembled from the dissipator coefficient tensor of the declared operator
basis, rotated into the frame of the target unitary and integrated over the
evolution interval.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import QuadratureError, ValidationError
from .lindblad import OperatorBasis
from .pauli import (
    SIGMA_X,
    PauliBasis,
    build_pauli_basis,
    pauli_expansion,
    pauli_product,
)
from .states import ExperimentDesign, enumerate_configurations, standard_initial_states

DEFAULT_QUADRATURE_STEPS = 64
QUADRATURE_TOL = 1e-8
_MAX_DOUBLINGS = 8

CACHE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TargetUnitary:
    """Constant-generator target gate U(t) = exp(-i t H)."""

    kind: str
    hamiltonian: np.ndarray
    duration: float = 1.0

    def __post_init__(self):
        H = np.asarray(self.hamiltonian, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValidationError("Hamiltonian must be a square matrix")
        if np.max(np.abs(H - H.conj().T)) > 1e-10:
            raise ValidationError("Hamiltonian must be Hermitian")
        if self.duration <= 0:
            raise ValidationError("duration must be positive")
        eigvals, eigvecs = np.linalg.eigh(H)
        object.__setattr__(self, "hamiltonian", H)
        object.__setattr__(self, "_eigvals", eigvals)
        object.__setattr__(self, "_eigvecs", eigvecs)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def n_qubits(self) -> int:
        return int(round(np.log2(self.dim)))

    def unitary(self, t: float) -> np.ndarray:
        """U(t) for the constant generator, via the cached eigensystem."""
        phases = np.exp(-1j * t * self._eigvals)
        return (self._eigvecs * phases[np.newaxis, :]) @ self._eigvecs.conj().T

    @property
    def full_unitary(self) -> np.ndarray:
        return self.unitary(self.duration)

    @classmethod
    def identity(cls, n_qubits: int, duration: float = 1.0) -> "TargetUnitary":
        return cls("identity", np.zeros((2**n_qubits, 2**n_qubits)), duration)

    @classmethod
    def rx_half_pi(cls, duration: float = 1.0) -> "TargetUnitary":
        """pi/2 rotation around x: U(duration) = (1 - i sigma_x)/sqrt(2)."""
        return cls("rx_half_pi", (np.pi / 4.0 / duration) * SIGMA_X, duration)

    @classmethod
    def ms_half_pi(cls, duration: float = 1.0) -> "TargetUnitary":
        """Two-qubit entangling gate U(duration) = (1 - i sigma_x sigma_x)/sqrt(2)."""
        H = (np.pi / 4.0 / duration) * np.kron(SIGMA_X, SIGMA_X)
        return cls("ms_half_pi", H, duration)

    @classmethod
    def from_hamiltonian(cls, H, duration: float = 1.0) -> "TargetUnitary":
        return cls("custom_constant_H", np.asarray(H, dtype=complex), duration)

    def pauli_coefficients(self, basis: PauliBasis) -> np.ndarray:
        """Real vector c with H = sum_a c_a E_a over traceless elements."""
        return pauli_expansion(self.hamiltonian, basis)[1:].real


@dataclass(frozen=True)
class LinearizedModel:
    """Baseline probabilities and per-configuration sensitivity matrices."""

    design: ExperimentDesign
    target: TargetUnitary
    operator_basis: OperatorBasis
    quadrature_steps: int
    p_u: np.ndarray        # (s, i, b, m) real
    phi: np.ndarray        # (K, n, n) complex, K in canonical flat order

    @property
    def n_traceless(self) -> int:
        return self.phi.shape[1]

    @property
    def p_u_flat(self) -> np.ndarray:
        return self.p_u.reshape(-1)


def unitary_baseline(target: TargetUnitary, design: ExperimentDesign) -> np.ndarray:
    """Noiseless probabilities Tr{M U rho U^dag}, shape (s, i, b, m)."""
    if target.n_qubits != design.n_qubits:
        raise ValidationError("target and design qubit counts differ")
    states = standard_initial_states(design.n_qubits).states
    projs = design.projectors().reshape(-1, design.dim, design.dim)
    p_u = np.empty(design.shape, dtype=float)
    for i, t in enumerate(design.times):
        U = target.unitary(t)
        evolved = np.einsum("ij,sjk,lk->sil", U, states, U.conj())
        p = np.einsum("mij,sji->sm", projs, evolved).real
        p_u[:, i] = p.reshape(design.n_states, design.n_bases, design.n_outcomes)
    return np.clip(p_u, 0.0, None, out=p_u)


def _frame_full(target: TargetUnitary, t: float, basis: PauliBasis) -> np.ndarray:
    """Heisenberg-frame change of basis over all d^2 Pauli indices.

    Normalized by 1/d so the identity gate gives the identity matrix; the
    block for the identity element decouples exactly.
    """
    U = target.unitary(t)
    rotated = np.einsum("ij,bjk,lk->bil", U, basis.elements, U.conj())
    return np.einsum("aij,bji->ab", basis.elements, rotated) / basis.dim


def frame_matrix_W(target: TargetUnitary, t: float, basis: PauliBasis) -> np.ndarray:
    """Traceless block of the frame matrix W(t) = Tr{E U E U^dag}/d."""
    return _frame_full(target, t, basis)[1:, 1:]


def dissipator_coeffs_B(op_basis: OperatorBasis, basis: PauliBasis) -> np.ndarray:
    """Process-matrix blocks of the dissipator, shape (n, n, d^2, d^2).

    Entry [p, q, a, b] multiplies E_a rho E_b in the expansion of
    B_p rho B_q^dag - {B_q^dag B_p, rho}/2 over the full Pauli index range;
    the anticommutator lands on the identity row and column.
    """
    d = basis.dim
    n = basis.n_elements - 1
    if op_basis.coeffs.shape[0] != n:
        raise ValidationError("operator basis size does not match the Pauli basis")
    b = op_basis.coeffs

    # triple[alpha, delta, gamma] = Tr{E_alpha E_delta E_gamma} for traceless
    # delta, gamma; exactly one alpha is nonzero for each (delta, gamma)
    triple = np.zeros((d * d, n, n), dtype=complex)
    for delta in range(1, n + 1):
        for gamma in range(1, n + 1):
            phase, k = pauli_product(delta, gamma, basis)
            triple[k, delta - 1, gamma - 1] = phase * d

    # c[p, q, alpha] = sum_{gamma, delta} b[p, gamma] b*[q, delta] triple
    c = np.einsum("pg,qd,adg->pqa", b, b.conj(), triple)

    B = np.zeros((n, n, d * d, d * d), dtype=complex)
    b_full = np.zeros((n, d * d), dtype=complex)
    b_full[:, 1:] = b
    B += np.einsum("pa,qb->pqab", b_full, b_full.conj())
    B[:, :, :, 0] -= c / (2.0 * d)
    B[:, :, 0, :] -= c / (2.0 * d)
    return B


def _simpson_weights(n_panels: int, length: float) -> np.ndarray:
    """Composite Simpson weights on n_panels (even) uniform subintervals."""
    w = np.ones(n_panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (length / n_panels / 3.0)


def _integrated_frame_sandwich(
    target: TargetUnitary,
    t_end: float,
    basis: PauliBasis,
    B: np.ndarray,
    n_panels: int,
) -> np.ndarray:
    """int_0^t W^dag(t') B^pq W(t') dt' for all (p, q), Simpson rule."""
    n = B.shape[0]
    d2 = B.shape[2]
    if t_end == 0.0:
        return np.zeros_like(B)
    nodes = np.linspace(0.0, t_end, n_panels + 1)
    weights = _simpson_weights(n_panels, t_end)
    B_resh = B.reshape(n * n, d2, d2)
    total = np.zeros_like(B_resh)
    for t, w in zip(nodes, weights):
        W = _frame_full(target, t, basis)
        total += w * (W.conj().T[np.newaxis] @ B_resh @ W[np.newaxis])
    return total.reshape(n, n, d2, d2)


def sensitivity_phi(
    target: TargetUnitary,
    design: ExperimentDesign,
    operator_basis: OperatorBasis | None = None,
    quadrature_steps: int = DEFAULT_QUADRATURE_STEPS,
) -> LinearizedModel:
    """Assemble the linear model for a design under a known target unitary.

    The time integral uses composite Simpson quadrature with
    ``quadrature_steps`` panels, doubled until the result is stable to
    1e-8 in max norm.
    """
    if quadrature_steps < 8:
        raise ValidationError("quadrature_steps must be at least 8")
    if target.n_qubits != design.n_qubits:
        raise ValidationError("target and design qubit counts differ")
    basis = build_pauli_basis(design.n_qubits)
    n = basis.n_elements - 1
    op_basis = operator_basis or OperatorBasis.pauli(n)
    B = dissipator_coeffs_B(op_basis, basis)

    states = standard_initial_states(design.n_qubits).states
    projs = design.projectors().reshape(-1, design.dim, design.dim)
    # A2[s, a, b] = E_a rho_s E_b, shared by all times
    A1 = np.einsum("aij,sjk->saik", basis.elements, states)
    A2 = np.einsum("saik,bkl->sabil", A1, basis.elements)

    p_u = unitary_baseline(target, design)
    K = design.n_configurations
    phi = np.empty((design.n_states, design.n_times, design.n_bases * design.n_outcomes,
                    n, n), dtype=complex)
    max_steps = quadrature_steps
    for i, t in enumerate(design.times):
        integral = _converged_integral(target, t, basis, B, quadrature_steps)
        max_steps = max(max_steps, integral.steps)
        U = target.unitary(t)
        rotated_meas = np.einsum("ji,mjk,kl->mil", U.conj(), projs, U)
        F = np.einsum("mil,sabli->smab", rotated_meas, A2)
        phi[:, i] = np.einsum("smab,pqab->smpq", F, integral.value)

    phi = phi.reshape(K, n, n)
    # enforce the Hermitian pairing exactly; roundoff otherwise leaks a
    # ~1e-17 imaginary part into every probability
    phi = (phi + phi.conj().transpose(0, 2, 1)) / 2.0
    return LinearizedModel(
        design=design,
        target=target,
        operator_basis=op_basis,
        quadrature_steps=max_steps,
        p_u=p_u,
        phi=phi,
    )


class _Integral:
    def __init__(self, value, steps):
        self.value = value
        self.steps = steps


def _converged_integral(target, t, basis, B, n_panels) -> _Integral:
    current = _integrated_frame_sandwich(target, t, basis, B, n_panels)
    for _ in range(_MAX_DOUBLINGS):
        finer = _integrated_frame_sandwich(target, t, basis, B, 2 * n_panels)
        if np.max(np.abs(finer - current)) <= QUADRATURE_TOL:
            return _Integral(finer, 2 * n_panels)
        current = finer
        n_panels *= 2
    raise QuadratureError(
        f"Simpson integral did not stabilize to {QUADRATURE_TOL} by {n_panels} panels")


def linear_probability(
    lin: LinearizedModel,
    G: np.ndarray,
    config_indices: np.ndarray | None = None,
) -> np.ndarray:
    """p = p_u + sum_pq Phi[p, q] G[p, q] over the selected configurations."""
    G = np.asarray(G)
    if G.shape != (lin.n_traceless, lin.n_traceless):
        raise ValidationError("G shape does not match the linear model")
    if config_indices is None:
        p_u = lin.p_u_flat
        phi = lin.phi
    else:
        p_u = lin.p_u_flat[config_indices]
        phi = lin.phi[config_indices]
    return p_u + np.einsum("kpq,pq->k", phi, G).real


# -- linearized-model cache ---------------------------------------------------


def _cache_key(design: ExperimentDesign, target: TargetUnitary,
               op_basis: OperatorBasis, quadrature_steps: int) -> str:
    payload = {
        "n_qubits": design.n_qubits,
        "times": [float(t) for t in design.times],
        "kind": target.kind,
        "duration": target.duration,
        "H": np.asarray(target.hamiltonian).view(float).tolist(),
        "basis": np.asarray(op_basis.coeffs).view(float).tolist(),
        "steps": quadrature_steps,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_linearized(lin: LinearizedModel, path) -> None:
    """Persist a linear model to a versioned .npz cache."""
    header = {
        "cache_format_version": CACHE_FORMAT_VERSION,
        "key": _cache_key(lin.design, lin.target, lin.operator_basis,
                          lin.quadrature_steps),
        "n_qubits": lin.design.n_qubits,
        "times": [float(t) for t in lin.design.times],
        "shots_per_setting": lin.design.shots_per_setting,
        "kind": lin.target.kind,
        "duration": lin.target.duration,
        "quadrature_steps": lin.quadrature_steps,
    }
    np.savez(
        path,
        header=json.dumps(header, sort_keys=True),
        hamiltonian=lin.target.hamiltonian,
        basis_coeffs=lin.operator_basis.coeffs,
        p_u=lin.p_u,
        phi=lin.phi,
    )


def load_linearized(path) -> LinearizedModel:
    """Load a linear model cached by :func:`save_linearized`."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("cache_format_version") != CACHE_FORMAT_VERSION:
            raise ValidationError("unsupported linear-model cache version")
        design = enumerate_configurations(
            header["n_qubits"], header["times"], header["shots_per_setting"])
        target = TargetUnitary(
            kind=header["kind"],
            hamiltonian=data["hamiltonian"],
            duration=header["duration"],
        )
        return LinearizedModel(
            design=design,
            target=target,
            operator_basis=OperatorBasis(data["basis_coeffs"]),
            quadrature_steps=int(header["quadrature_steps"]),
            p_u=data["p_u"],
            phi=data["phi"],
        )
