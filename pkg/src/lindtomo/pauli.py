"""N-qubit Pauli operator basis and its multiplicative structure.

Basis elements are ordered by the base-4 expansion of their index with
digit values 0=identity, 1=sigma_x, 2=sigma_y, 3=sigma_z and the
most-significant digit acting on qubit 1.  Index 0 is always the identity,
all other elements are traceless, Hermitian and involutory, and they are
orthogonal in the Hilbert-Schmidt sense, Tr{E_a E_b} = d * delta_ab.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import SizeLimitError

MAX_QUBITS = 4

SIGMA_0 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
SINGLE_QUBIT_PAULIS = (SIGMA_0, SIGMA_X, SIGMA_Y, SIGMA_Z)

# Single-qubit multiplication table: sigma_a sigma_b = i**_PHASE_EXP[a,b] * sigma_c
# with c = _PROD_INDEX[a,b].  Phases are kept as integer powers of i so that
# repeated products never accumulate floating-point phase error.
_PROD_INDEX = np.array(
    [[0, 1, 2, 3],
     [1, 0, 3, 2],
     [2, 3, 0, 1],
     [3, 2, 1, 0]], dtype=np.int64)
_PHASE_EXP = np.array(
    [[0, 0, 0, 0],
     [0, 0, 1, 3],
     [0, 3, 0, 1],
     [0, 1, 3, 0]], dtype=np.int64)
_PHASES = np.array([1.0, 1.0j, -1.0, -1.0j], dtype=complex)


@dataclass(frozen=True)
class PauliBasis:
    """Full tensor-product Pauli basis for ``n_qubits`` qubits."""

    n_qubits: int
    dim: int
    elements: np.ndarray  # (dim**2, dim, dim) complex

    @property
    def n_elements(self) -> int:
        return self.dim * self.dim

    def digits(self, index: int) -> tuple[int, ...]:
        """Base-4 digits of a basis index, most-significant digit first."""
        self._check_index(index)
        digs = []
        for _ in range(self.n_qubits):
            digs.append(index % 4)
            index //= 4
        return tuple(reversed(digs))

    def label(self, index: int) -> str:
        """Word over {1, x, y, z} naming the element, one char per qubit."""
        return "".join("1xyz"[dig] for dig in self.digits(index))

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self.n_elements:
            raise IndexError(f"basis index {index} out of range 0..{self.n_elements - 1}")


def build_pauli_basis(n_qubits: int) -> PauliBasis:
    """Construct the 4**n_qubits tensor-product Pauli operators."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise SizeLimitError(
            f"n_qubits={n_qubits} outside supported range 1..{MAX_QUBITS}")
    dim = 2**n_qubits
    elements = np.empty((dim * dim, dim, dim), dtype=complex)
    for alpha in range(dim * dim):
        digs, a = [], alpha
        for _ in range(n_qubits):
            digs.append(a % 4)
            a //= 4
        mats = [SINGLE_QUBIT_PAULIS[dig] for dig in reversed(digs)]
        elements[alpha] = reduce(np.kron, mats)
    elements.setflags(write=False)
    return PauliBasis(n_qubits=n_qubits, dim=dim, elements=elements)


def pauli_product(a: int, b: int, basis: PauliBasis) -> tuple[complex, int]:
    """Resolve E_a E_b = phase * E_c with phase in {1, i, -1, -i}.

    Returns ``(phase, c)``.  Works digit-by-digit on the base-4 index
    expansion, so no dense matrices are multiplied.
    """
    basis._check_index(a)
    basis._check_index(b)
    phase_exp = 0
    index = 0
    weight = 1
    for _ in range(basis.n_qubits):
        da, db = a % 4, b % 4
        a //= 4
        b //= 4
        phase_exp += _PHASE_EXP[da, db]
        index += weight * _PROD_INDEX[da, db]
        weight *= 4
    return complex(_PHASES[phase_exp % 4]), int(index)


def pauli_expansion(matrix: np.ndarray, basis: PauliBasis) -> np.ndarray:
    """Coefficients v with matrix = sum_a v_a E_a, over all d^2 elements.

    v_a = Tr{E_a^dag matrix} / d; the dagger is immaterial because the
    elements are Hermitian.
    """
    return np.einsum("aij,ji->a", basis.elements, np.asarray(matrix)) / basis.dim


def triple_trace(alpha: int, delta: int, gamma: int, basis: PauliBasis) -> complex:
    """Tr{E_alpha^dag E_delta^dag E_gamma} from two symbolic products.

    All elements are Hermitian so the daggers are immaterial.  The trace is
    nonzero, and equal to d times the accumulated phase, only when the
    three-fold product collapses onto the identity.
    """
    ph1, k1 = pauli_product(alpha, delta, basis)
    ph2, k2 = pauli_product(k1, gamma, basis)
    if k2 != 0:
        return 0.0 + 0.0j
    return ph1 * ph2 * basis.dim
