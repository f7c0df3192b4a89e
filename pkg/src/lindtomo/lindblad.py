"""Lindblad generators: representation, propagation, decomposition, sampling.

The generator acts as

    L(rho) = -i [H, rho] + sum_pq G_pq (B_p rho B_q^dag - {B_q^dag B_p, rho}/2)

with H = sum_a c_a E_a over the traceless Pauli elements and the noise
coefficient matrix G expressed in a declared traceless operator basis
{B_p}, which defaults to the Pauli elements themselves.  G must be
Hermitian and positive semidefinite for the dynamics to be completely
positive.

Vectorization is column-stacking throughout: vec(rho) stacks columns, so
vec(A rho B) = (B^T kron A) vec(rho).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .errors import (
    NotPositiveSemidefiniteError,
    PropagationError,
    ValidationError,
)
from .pauli import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    PauliBasis,
    build_pauli_basis,
    pauli_expansion,
)
from .states import ExperimentDesign, standard_initial_states

PSD_CLIP_TOL = 1e-10      # eigenvalues above this (in magnitude) are real violations
HERMITICITY_TOL = 1e-10
PROPAGATION_EIG_TOL = 1e-6

MODEL_FORMAT_VERSION = 1


def vectorize(rho: np.ndarray) -> np.ndarray:
    """Column-stacking vec: vec(rho)[i + d*j] = rho[i, j]."""
    return rho.reshape(-1, order="F")


def devectorize(vec: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(vec.size)))
    return vec.reshape((d, d), order="F")


@dataclass(frozen=True)
class OperatorBasis:
    """Traceless operator basis B_p = sum_a coeffs[p, a-1] E_a, a >= 1.

    ``coeffs`` has shape (d^2-1, d^2-1); row p holds the expansion of B_p
    over the traceless Pauli elements.  Any full-rank matrix is accepted;
    the Pauli basis itself corresponds to the identity matrix.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
            raise ValidationError("operator basis coeffs must be square")
        if np.linalg.matrix_rank(coeffs) < coeffs.shape[0]:
            raise ValidationError("operator basis coeffs must have full rank")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def pauli(cls, n_traceless: int) -> "OperatorBasis":
        return cls(np.eye(n_traceless, dtype=complex))

    @property
    def is_pauli(self) -> bool:
        return bool(np.array_equal(self.coeffs, np.eye(self.coeffs.shape[0])))

    def dense_operators(self, basis: PauliBasis) -> np.ndarray:
        """Stack of B_p as dense (d^2-1, d, d) matrices."""
        return np.einsum("pa,aij->pij", self.coeffs, basis.elements[1:])


@dataclass(frozen=True)
class LindbladModel:
    """Hamiltonian coefficient vector plus Lindblad matrix in a declared basis."""

    basis: PauliBasis
    c: np.ndarray
    G: np.ndarray
    operator_basis: OperatorBasis = None

    def __post_init__(self):
        n = self.basis.n_elements - 1
        c = np.asarray(self.c, dtype=float)
        G = np.asarray(self.G, dtype=complex)
        if c.shape != (n,):
            raise ValidationError(f"c must have shape ({n},)")
        if G.shape != (n, n):
            raise ValidationError(f"G must have shape ({n}, {n})")
        if np.max(np.abs(G - G.conj().T)) > HERMITICITY_TOL:
            raise ValidationError("G must be Hermitian")
        eigs = np.linalg.eigvalsh((G + G.conj().T) / 2.0)
        if eigs.min() < -PSD_CLIP_TOL:
            raise NotPositiveSemidefiniteError(
                f"G has eigenvalue {eigs.min():.3e} below -{PSD_CLIP_TOL:.0e}")
        op_basis = self.operator_basis or OperatorBasis.pauli(n)
        if op_basis.coeffs.shape != (n, n):
            raise ValidationError("operator basis size does not match G")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "operator_basis", op_basis)

    @property
    def n_qubits(self) -> int:
        return self.basis.n_qubits

    @property
    def dim(self) -> int:
        return self.basis.dim

    def hamiltonian(self) -> np.ndarray:
        return np.einsum("a,aij->ij", self.c, self.basis.elements[1:])


@dataclass(frozen=True)
class JumpDecomposition:
    """Decay rates (descending) with their jump operators.

    ``coefficient_vectors`` holds the orthonormal eigenvectors of G as
    columns, in the declared operator basis; ``jump_ops[n]`` is the dense
    matrix sum_p coefficient_vectors[p, n] B_p.
    """

    rates: np.ndarray
    jump_ops: np.ndarray           # (n, d, d)
    coefficient_vectors: np.ndarray  # (d^2-1, n), column n for rate n


def liouvillian_from_parts(
    c: np.ndarray,
    G: np.ndarray,
    basis: PauliBasis,
    operator_basis: OperatorBasis | None = None,
) -> np.ndarray:
    """Assemble the vectorized generator without model validation.

    Used on hot paths (descent inner loops) where G is PSD by construction.
    """
    d = basis.dim
    n = d * d - 1
    op_basis = operator_basis or OperatorBasis.pauli(n)
    B = op_basis.dense_operators(basis)
    H = np.einsum("a,aij->ij", np.asarray(c, dtype=float), basis.elements[1:])
    ident = np.eye(d)
    L = -1j * (np.kron(ident, H) - np.kron(H.T, ident))
    # sandwich term: sum_pq G_pq conj(B_q) kron B_p
    L += np.einsum("pq,qab,pcd->acbd", G, B.conj(), B).reshape(d * d, d * d)
    # anticommutator term with A = sum_pq G_pq B_q^dag B_p
    A = np.einsum("pq,qka,pkb->ab", G, B.conj(), B)
    L -= 0.5 * (np.kron(ident, A) + np.kron(A.T, ident))
    return L


def build_liouvillian(model: LindbladModel) -> np.ndarray:
    """Vectorized superoperator L with d|rho>>/dt = L |rho>>."""
    return liouvillian_from_parts(model.c, model.G, model.basis, model.operator_basis)


def _check_propagated(rho: np.ndarray) -> np.ndarray:
    if abs(np.trace(rho) - 1.0) > 1e-9:
        raise PropagationError(f"propagated state trace {np.trace(rho):.12f} != 1")
    herm_defect = np.max(np.abs(rho - rho.conj().T))
    if herm_defect > 1e-9:
        raise PropagationError(f"propagated state non-Hermitian by {herm_defect:.3e}")
    eigs = np.linalg.eigvalsh((rho + rho.conj().T) / 2.0)
    if eigs.min() < -PROPAGATION_EIG_TOL:
        raise PropagationError(
            f"propagated state eigenvalue {eigs.min():.3e}; model or convention bug")
    return rho


def propagate(model: LindbladModel, rho0: np.ndarray, t: float) -> np.ndarray:
    """exp(t L) applied to rho0, with physicality checks on the output."""
    if t < 0:
        raise ValidationError("propagation time must be nonnegative")
    L = build_liouvillian(model)
    rho = devectorize(expm(t * L) @ vectorize(np.asarray(rho0, dtype=complex)))
    return _check_propagated(rho)


def jump_decomposition(model_or_G, operator_basis=None, basis=None) -> JumpDecomposition:
    """Eigendecompose G into decay rates and dense jump operators.

    Accepts either a LindbladModel or a raw Hermitian matrix together with
    its operator basis and a PauliBasis.  Eigenvalues in [-PSD_CLIP_TOL, 0)
    are clipped to zero; anything lower raises.
    """
    if isinstance(model_or_G, LindbladModel):
        G = model_or_G.G
        op_basis = model_or_G.operator_basis
        basis = model_or_G.basis
    else:
        G = np.asarray(model_or_G, dtype=complex)
        n = G.shape[0]
        op_basis = operator_basis or OperatorBasis.pauli(n)
        if basis is None:
            n_qubits = int(round(np.log2(np.sqrt(n + 1))))
            basis = build_pauli_basis(n_qubits)
    eigvals, eigvecs = np.linalg.eigh((G + G.conj().T) / 2.0)
    if eigvals.min() < -PSD_CLIP_TOL:
        raise NotPositiveSemidefiniteError(
            f"G has eigenvalue {eigvals.min():.3e} below -{PSD_CLIP_TOL:.0e}")
    eigvals = np.clip(eigvals, 0.0, None)
    order = np.argsort(eigvals)[::-1]
    rates = eigvals[order]
    vectors = eigvecs[:, order]
    B = op_basis.dense_operators(basis)
    jump_ops = np.einsum("pn,pij->nij", vectors, B)
    return JumpDecomposition(rates=rates, jump_ops=jump_ops, coefficient_vectors=vectors)


# -- random and structured model generators --------------------------------


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Ginibre matrix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim)))
    q, r = np.linalg.qr(z)
    phases = np.diag(r).copy()
    phases /= np.abs(phases)
    return q * phases[np.newaxis, :]


def sample_hs_random_G(dim: int, trace_scale: float, rng: np.random.Generator) -> np.ndarray:
    """Hilbert-Schmidt-uniform PSD matrix rescaled to the given trace.

    A Haar unitary on the doubled space C^dim x C^dim is applied to the
    first standard unit vector and the second factor is traced out.
    """
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    psi = haar_unitary(dim * dim, rng)[:, 0]
    m = psi.reshape(dim, dim)
    G = trace_scale * (m @ m.conj().T)
    return (G + G.conj().T) / 2.0


def sample_projector_G(dim: int, rank: int, trace_scale: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Haar-random rank-``rank`` orthogonal projector scaled to trace_scale."""
    if not 1 <= rank <= dim:
        raise ValidationError("rank must satisfy 1 <= rank <= dim")
    v = haar_unitary(dim, rng)[:, :rank]
    G = (trace_scale / rank) * (v @ v.conj().T)
    return (G + G.conj().T) / 2.0


# Two-qubit structured-noise jump operators: dephasing on each qubit,
# amplitude damping on each qubit, and a correlated bit flip.
STRUCTURED_RATE_NAMES = ("deph_1", "deph_2", "damp_1", "damp_2", "bit_flip")


def structured_noise_G(rates, basis: PauliBasis | None = None) -> LindbladModel:
    """Two-qubit model with dephasing, damping, and correlated bit-flip noise.

    ``rates`` maps the names in STRUCTURED_RATE_NAMES to nonnegative decay
    rates (a sequence in the same order is also accepted).  The Lindblad
    matrix is assembled in the Pauli basis; the sigma_minus damping
    operators produce off-diagonal entries there.
    """
    if basis is None:
        basis = build_pauli_basis(2)
    if basis.n_qubits != 2:
        raise ValidationError("structured noise model is defined for two qubits")
    if isinstance(rates, dict):
        unknown = set(rates) - set(STRUCTURED_RATE_NAMES)
        if unknown:
            raise ValidationError(f"unknown rate names {sorted(unknown)}")
        values = np.array([float(rates.get(k, 0.0)) for k in STRUCTURED_RATE_NAMES])
    else:
        values = np.asarray(rates, dtype=float)
        if values.shape != (len(STRUCTURED_RATE_NAMES),):
            raise ValidationError(
                f"expected {len(STRUCTURED_RATE_NAMES)} rates, got shape {values.shape}")
    if np.any(values < 0):
        raise ValidationError("decay rates must be nonnegative")

    ident = np.eye(2, dtype=complex)
    sigma_minus = (SIGMA_X - 1j * SIGMA_Y) / 2.0
    jump_mats = (
        np.kron(SIGMA_Z, ident),
        np.kron(ident, SIGMA_Z),
        np.kron(sigma_minus, ident),
        np.kron(ident, sigma_minus),
        np.kron(SIGMA_X, SIGMA_X),
    )
    n = basis.n_elements - 1
    G = np.zeros((n, n), dtype=complex)
    for rate, mat in zip(values, jump_mats):
        v = pauli_expansion(mat, basis)[1:]
        G += rate * np.outer(v, v.conj())
    G = (G + G.conj().T) / 2.0
    return LindbladModel(basis=basis, c=np.zeros(n), G=G)


# -- probabilities ----------------------------------------------------------


def initial_state_vectors(n_qubits: int) -> np.ndarray:
    """Columns vec(rho_s) of the standard initial states (column stacking)."""
    states = standard_initial_states(n_qubits).states
    return states.transpose(0, 2, 1).reshape(states.shape[0], -1).T


def measurement_matrix(design: ExperimentDesign) -> np.ndarray:
    """Rows m_k with p_k = m_k . vec(rho), over (basis, outcome) pairs.

    With column stacking, vec(rho) is the C-order flattening of rho^T, so
    pairing it with the C-order flattening of M sums M[a, b] rho[b, a],
    which is Tr{M rho}.
    """
    projs = design.projectors().reshape(-1, design.dim, design.dim)
    return projs.reshape(projs.shape[0], -1)


def probabilities_for_liouvillian(
    L: np.ndarray,
    design: ExperimentDesign,
    state_vecs: np.ndarray | None = None,
    meas_matrix: np.ndarray | None = None,
    validate: bool = True,
) -> np.ndarray:
    """Outcome probabilities (s, i, b, m) for a fixed generator matrix."""
    if state_vecs is None:
        state_vecs = initial_state_vectors(design.n_qubits)
    if meas_matrix is None:
        meas_matrix = measurement_matrix(design)
    probs = np.empty(design.shape, dtype=float)
    for i, t in enumerate(design.times):
        propagated = expm(t * L) @ state_vecs     # (d^2, n_states)
        if validate:
            for s in range(design.n_states):
                _check_propagated(devectorize(propagated[:, s]))
        p = (meas_matrix @ propagated).T.real     # (n_states, n_bases*d)
        probs[:, i] = p.reshape(design.n_states, design.n_bases, design.n_outcomes)
    return np.clip(probs, 0.0, None, out=probs)


def predicted_probabilities(model: LindbladModel, design: ExperimentDesign) -> np.ndarray:
    """Exact outcome probabilities for every configuration of the design."""
    if model.n_qubits != design.n_qubits:
        raise ValidationError("model and design qubit counts differ")
    return probabilities_for_liouvillian(build_liouvillian(model), design)


# -- model file I/O ---------------------------------------------------------


def _complex_to_pairs(arr: np.ndarray):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(arr)]


def _pairs_to_complex(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise ValidationError("expected nested [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def write_model(model: LindbladModel, path) -> None:
    """Write a model file (JSON, full float precision)."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "n_qubits": model.n_qubits,
        "basis": "pauli" if model.operator_basis.is_pauli
        else {"coeffs": _complex_to_pairs(model.operator_basis.coeffs)},
        "c": [float(x) for x in model.c],
        "G": _complex_to_pairs(model.G),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def read_model(path) -> LindbladModel:
    """Read and validate a model file written by :func:`write_model`."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported model format_version {doc.get('format_version')!r}")
    basis = build_pauli_basis(int(doc["n_qubits"]))
    n = basis.n_elements - 1
    if doc["basis"] == "pauli":
        op_basis = OperatorBasis.pauli(n)
    else:
        op_basis = OperatorBasis(_pairs_to_complex(doc["basis"]["coeffs"]))
    return LindbladModel(
        basis=basis,
        c=np.asarray(doc["c"], dtype=float),
        G=_pairs_to_complex(doc["G"]),
        operator_basis=op_basis,
    )
