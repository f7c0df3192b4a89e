"""Initial states, local Pauli measurements, and tomography designs.

A tomography experiment is a list of configurations ``(s, i, b, m)``:
initial state ``s``, evolution-time index ``i``, measurement basis word
``b`` over {x, y, z} and outcome word ``m`` over {+, -}.  Probabilities are
modeled per measurement basis (conditional on ``b``), matching how counts
are collected shot by shot for a chosen basis, so projectors carry no POVM
weight and the d outcome probabilities of a basis sum to one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import SizeLimitError, ValidationError
from .pauli import MAX_QUBITS, SIGMA_X, SIGMA_Y, SIGMA_Z

BASIS_CHARS = "xyz"
OUTCOME_CHARS = "+-"

_SIGMAS = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}

# Single-qubit preparation states |0>, |1>, |+>, |+i>, in this order.
_KETS = (
    np.array([1.0, 0.0], dtype=complex),
    np.array([0.0, 1.0], dtype=complex),
    np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0),
    np.array([1.0, 1.0j], dtype=complex) / np.sqrt(2.0),
)
SINGLE_QUBIT_STATES = tuple(np.outer(k, k.conj()) for k in _KETS)


@dataclass(frozen=True)
class StateSet:
    """Ordered set of d^2 linearly independent initial density matrices."""

    states: np.ndarray  # (d**2, d, d) complex

    @property
    def n_states(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class MeasurementSetting:
    """One local-Pauli measurement: basis word and outcome word."""

    basis: str
    outcome: str

    def __post_init__(self):
        if len(self.basis) != len(self.outcome):
            raise ValidationError("basis and outcome words must have equal length")
        if any(ch not in BASIS_CHARS for ch in self.basis):
            raise ValidationError(f"invalid basis word {self.basis!r}")
        if any(ch not in OUTCOME_CHARS for ch in self.outcome):
            raise ValidationError(f"invalid outcome word {self.outcome!r}")


@dataclass(frozen=True)
class Configuration:
    """A single (state, time, basis, outcome) probability entry."""

    state_id: int
    time_index: int
    basis: str
    outcome: str
    independent: bool


def standard_initial_states(n_qubits: int) -> StateSet:
    """All tensor products of {|0>, |1>, |+>, |+i>} in base-4 order."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise SizeLimitError(
            f"n_qubits={n_qubits} outside supported range 1..{MAX_QUBITS}")
    dim = 2**n_qubits
    states = np.empty((dim * dim, dim, dim), dtype=complex)
    for s, digs in enumerate(itertools.product(range(4), repeat=n_qubits)):
        rho = np.array([[1.0]], dtype=complex)
        for dig in digs:
            rho = np.kron(rho, SINGLE_QUBIT_STATES[dig])
        states[s] = rho
    states.setflags(write=False)
    return StateSet(states=states)


def projector(setting: MeasurementSetting) -> np.ndarray:
    """Tensor product of single-qubit projectors (1 + m*sigma_b)/2."""
    proj = np.array([[1.0]], dtype=complex)
    for b_ch, m_ch in zip(setting.basis, setting.outcome):
        sign = 1.0 if m_ch == "+" else -1.0
        proj = np.kron(proj, (np.eye(2) + sign * _SIGMAS[b_ch]) / 2.0)
    return proj


def basis_words(n_qubits: int) -> list[str]:
    return ["".join(w) for w in itertools.product(BASIS_CHARS, repeat=n_qubits)]


def outcome_words(n_qubits: int) -> list[str]:
    return ["".join(w) for w in itertools.product(OUTCOME_CHARS, repeat=n_qubits)]


@dataclass(frozen=True)
class ExperimentDesign:
    """Enumerated configurations of a tomography run with a shot budget.

    Configurations are ordered lexicographically over (state, time, basis,
    outcome).  Within each (state, time, basis) group the lexicographically
    last outcome word (all '-') is flagged dependent: its frequency is
    one minus the sum of the others, so it carries no extra information.
    """

    n_qubits: int
    times: tuple[float, ...]
    shots_per_setting: int
    configurations: tuple[Configuration, ...] = field(repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ValidationError("times must be a non-empty 1-D sequence")
        if np.any(times < 0) or np.any(np.diff(times) <= 0):
            raise ValidationError("times must be nonnegative and strictly increasing")
        if self.shots_per_setting <= 0:
            raise ValidationError("shots_per_setting must be positive")

    # -- index bookkeeping -------------------------------------------------

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @property
    def n_states(self) -> int:
        return self.dim**2

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def n_bases(self) -> int:
        return 3**self.n_qubits

    @property
    def n_outcomes(self) -> int:
        return self.dim

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.n_states, self.n_times, self.n_bases, self.n_outcomes)

    @property
    def n_configurations(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_independent_per_time(self) -> int:
        return self.n_bases * self.n_states * (self.n_outcomes - 1)

    @property
    def basis_words(self) -> list[str]:
        return basis_words(self.n_qubits)

    @property
    def outcome_words(self) -> list[str]:
        return outcome_words(self.n_qubits)

    def flat_index(self, s: int, i: int, b: int, m: int) -> int:
        return int(np.ravel_multi_index((s, i, b, m), self.shape))

    def independent_mask(self) -> np.ndarray:
        """Boolean (s, i, b, m) mask of independent configurations."""
        mask = np.ones(self.shape, dtype=bool)
        mask[..., -1] = False
        return mask

    def independent_indices(self) -> np.ndarray:
        """Flat indices of independent configurations, canonical order."""
        return np.flatnonzero(self.independent_mask().reshape(-1))

    def projectors(self) -> np.ndarray:
        """All measurement projectors, shape (n_bases, n_outcomes, d, d)."""
        d = self.dim
        projs = np.empty((self.n_bases, self.n_outcomes, d, d), dtype=complex)
        for bi, b in enumerate(self.basis_words):
            for mi, m in enumerate(self.outcome_words):
                projs[bi, mi] = projector(MeasurementSetting(b, m))
        return projs


def enumerate_configurations(
    n_qubits: int,
    times,
    shots_per_setting: int,
) -> ExperimentDesign:
    """Build the full configuration list for a tomography design."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise SizeLimitError(
            f"n_qubits={n_qubits} outside supported range 1..{MAX_QUBITS}")
    times = tuple(float(t) for t in np.atleast_1d(times))
    b_words = basis_words(n_qubits)
    m_words = outcome_words(n_qubits)
    n_states = 4**n_qubits
    configs = []
    for s in range(n_states):
        for i in range(len(times)):
            for b in b_words:
                for mi, m in enumerate(m_words):
                    configs.append(Configuration(
                        state_id=s, time_index=i, basis=b, outcome=m,
                        independent=mi < len(m_words) - 1))
    return ExperimentDesign(
        n_qubits=n_qubits,
        times=times,
        shots_per_setting=int(shots_per_setting),
        configurations=tuple(configs),
    )
