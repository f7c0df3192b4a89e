"""Finite-shot sampling, relative frequencies, and the counts-file format.

Counts files are CSV with header ``state_id,time_index,basis,outcome,count``
(UTF-8, LF line endings), one row per configuration in canonical order,
plus a JSON sidecar ``<name>.meta.json`` holding ``n_qubits``, ``times``
and ``N_sc`` (shots per state/time/basis setting).  An exact-probability
"infinite shot" variant replaces the count column with ``frequency`` and is
written to ``*.freqs.csv``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CountsFormatError, ValidationError
from .states import ExperimentDesign, enumerate_configurations

COUNTS_HEADER = ["state_id", "time_index", "basis", "outcome", "count"]
FREQS_HEADER = ["state_id", "time_index", "basis", "outcome", "frequency"]


@dataclass(frozen=True)
class CountsTable:
    """Observed outcome counts on a design, N_sc shots per (s, i, b)."""

    design: ExperimentDesign
    counts: np.ndarray  # integer, shape design.shape

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != self.design.shape:
            raise ValidationError(
                f"counts shape {counts.shape} does not match design {self.design.shape}")
        if np.any(counts < 0):
            raise ValidationError("counts must be nonnegative")
        sums = counts.sum(axis=-1)
        if np.any(sums != self.design.shots_per_setting):
            bad = np.argwhere(sums != self.design.shots_per_setting)[0]
            raise ValidationError(
                f"counts for (s={bad[0]}, i={bad[1]}, b={bad[2]}) sum to "
                f"{sums[tuple(bad)]}, expected {self.design.shots_per_setting}")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def shots_per_setting(self) -> int:
        return self.design.shots_per_setting

    @property
    def total_shots(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class FrequencyTensor:
    """Relative frequencies f[s, i, b, m]; each basis group sums to one."""

    design: ExperimentDesign
    values: np.ndarray
    n_shots: int | None = None  # None marks exact-probability data

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.design.shape:
            raise ValidationError(
                f"frequency shape {values.shape} does not match design {self.design.shape}")
        if np.any(values < 0) or np.any(values > 1):
            raise ValidationError("frequencies must lie in [0, 1]")
        sums = values.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ValidationError("per-basis frequencies must sum to 1")
        object.__setattr__(self, "values", values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def is_exact(self) -> bool:
        return self.n_shots is None


def frequencies(counts: CountsTable) -> FrequencyTensor:
    """Relative-frequency tensor count / N_sc."""
    if counts.shots_per_setting <= 0:
        raise ValidationError("shots per setting must be positive")
    return FrequencyTensor(
        design=counts.design,
        values=counts.counts / counts.shots_per_setting,
        n_shots=counts.total_shots,
    )


def exact_frequencies(probabilities: np.ndarray, design: ExperimentDesign) -> FrequencyTensor:
    """Infinite-shot mode: feed exact probabilities directly as frequencies."""
    return FrequencyTensor(design=design, values=np.asarray(probabilities, float))


def _multinomial(n: int, p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One multinomial draw by sequential binomial conditioning."""
    out = np.zeros(p.size, dtype=np.int64)
    remaining = n
    mass_left = 1.0
    for m in range(p.size - 1):
        if remaining == 0:
            break
        ratio = 0.0 if mass_left <= 0 else min(max(p[m] / mass_left, 0.0), 1.0)
        out[m] = rng.binomial(remaining, ratio)
        remaining -= out[m]
        mass_left -= p[m]
    out[-1] += remaining
    return out


def sample_counts(
    probabilities: np.ndarray,
    design: ExperimentDesign,
    shots_per_setting: int,
    rng: np.random.Generator,
) -> CountsTable:
    """Draw N_sc shots per (state, time, basis) from the given distribution.

    Each setting consumes its own child RNG stream spawned from ``rng``, so
    the result is reproducible for a fixed seed independently of evaluation
    order.
    """
    probs = np.asarray(probabilities, dtype=float)
    if probs.shape != design.shape:
        raise ValidationError("probability tensor shape does not match design")
    if np.any(probs < -1e-12):
        raise ValidationError("probabilities must be nonnegative")
    group_sums = probs.sum(axis=-1)
    if np.max(np.abs(group_sums - 1.0)) > 1e-9:
        raise ValidationError("per-basis probabilities must sum to 1")
    if shots_per_setting <= 0:
        raise ValidationError("shots_per_setting must be positive")

    flat = np.clip(probs, 0.0, None).reshape(-1, design.n_outcomes)
    streams = rng.spawn(flat.shape[0])
    counts = np.empty_like(flat, dtype=np.int64)
    for g, stream in enumerate(streams):
        counts[g] = _multinomial(shots_per_setting, flat[g] / flat[g].sum(), stream)
    if design.shots_per_setting != shots_per_setting:
        design = enumerate_configurations(design.n_qubits, design.times, shots_per_setting)
    return CountsTable(design=design, counts=counts.reshape(design.shape))


# -- file format -------------------------------------------------------------


def meta_sidecar_path(path) -> Path:
    path = Path(path)
    return path.parent / (path.stem + ".meta.json")


def _write_meta(design: ExperimentDesign, path: Path, shots, extra=None) -> None:
    meta = {
        "n_qubits": design.n_qubits,
        "times": [float(t) for t in design.times],
        "N_sc": shots,
    }
    if extra:
        meta.update(extra)
    meta_sidecar_path(path).write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")


def _iter_rows(design: ExperimentDesign, tensor: np.ndarray):
    b_words = design.basis_words
    m_words = design.outcome_words
    for s in range(design.n_states):
        for i in range(design.n_times):
            for b, b_word in enumerate(b_words):
                for m, m_word in enumerate(m_words):
                    yield s, i, b_word, m_word, tensor[s, i, b, m]


def write_counts(table: CountsTable, path, extra_meta=None) -> None:
    """Write a counts CSV plus its JSON sidecar."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COUNTS_HEADER)
        for s, i, b_word, m_word, count in _iter_rows(table.design, table.counts):
            writer.writerow([s, i, b_word, m_word, int(count)])
    _write_meta(table.design, path, int(table.shots_per_setting), extra_meta)


def write_frequencies(freqs: FrequencyTensor, path, extra_meta=None) -> None:
    """Write an exact-frequency CSV (infinite-shot artifact) plus sidecar."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FREQS_HEADER)
        for s, i, b_word, m_word, value in _iter_rows(freqs.design, freqs.values):
            writer.writerow([s, i, b_word, m_word, repr(float(value))])
    _write_meta(freqs.design, path, None, extra_meta)


def _read_meta(path: Path):
    meta_path = meta_sidecar_path(path)
    if not meta_path.exists():
        raise CountsFormatError(f"missing sidecar {meta_path.name}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CountsFormatError(f"sidecar {meta_path.name} is not valid JSON: {exc}")
    for key in ("n_qubits", "times"):
        if key not in meta:
            raise CountsFormatError(f"sidecar {meta_path.name} lacks key {key!r}")
    return meta


def _parse_table(path: Path, header, value_name):
    """Common row parser; returns (meta, design-sized value array)."""
    meta = _read_meta(path)
    n_qubits = int(meta["n_qubits"])
    times = [float(t) for t in meta["times"]]
    shots = meta.get("N_sc") or 1
    design = enumerate_configurations(n_qubits, times, int(shots))
    values = np.full(design.shape, np.nan)
    seen = np.zeros(design.shape, dtype=bool)
    b_index = {w: k for k, w in enumerate(design.basis_words)}
    m_index = {w: k for k, w in enumerate(design.outcome_words)}

    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise CountsFormatError("empty file", line=1)
        if first != header:
            raise CountsFormatError(f"expected header {','.join(header)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise CountsFormatError(f"expected 5 fields, got {len(row)}", line=lineno)
            s_str, i_str, b_word, m_word, val_str = row
            try:
                s, i = int(s_str), int(i_str)
            except ValueError:
                raise CountsFormatError("state_id and time_index must be integers",
                                        line=lineno)
            if not 0 <= s < design.n_states:
                raise CountsFormatError(f"state_id {s} out of range", line=lineno)
            if not 0 <= i < design.n_times:
                raise CountsFormatError(f"time_index {i} out of range", line=lineno)
            if b_word not in b_index:
                raise CountsFormatError(f"unknown basis word {b_word!r}", line=lineno)
            if m_word not in m_index:
                raise CountsFormatError(f"unknown outcome word {m_word!r}", line=lineno)
            try:
                value = float(val_str) if value_name == "frequency" else int(val_str)
            except ValueError:
                raise CountsFormatError(
                    f"{value_name} {val_str!r} is not a number", line=lineno)
            if value < 0:
                raise CountsFormatError(f"negative {value_name}", line=lineno)
            pos = (s, i, b_index[b_word], m_index[m_word])
            if seen[pos]:
                raise CountsFormatError(
                    f"duplicate row for (s={s}, i={i}, b={b_word}, m={m_word})",
                    line=lineno)
            seen[pos] = True
            values[pos] = value
    if not seen.all():
        missing = np.argwhere(~seen)[0]
        raise CountsFormatError(
            f"missing row for (s={missing[0]}, i={missing[1]}, "
            f"b={design.basis_words[missing[2]]}, m={design.outcome_words[missing[3]]})")
    return meta, design, values


def read_counts(path) -> CountsTable:
    """Parse and validate a counts CSV written by :func:`write_counts`."""
    path = Path(path)
    meta, design, values = _parse_table(path, COUNTS_HEADER, "count")
    if meta.get("N_sc") is None:
        raise CountsFormatError("sidecar lacks N_sc for a counts file")
    sums = values.sum(axis=-1)
    bad = np.argwhere(sums != design.shots_per_setting)
    if bad.size:
        s, i, b = bad[0][:3]
        raise CountsFormatError(
            f"counts for (s={s}, i={i}, b={design.basis_words[b]}) sum to "
            f"{int(sums[s, i, b])}, expected N_sc={design.shots_per_setting}")
    return CountsTable(design=design, counts=values.astype(np.int64))


def read_frequencies(path) -> FrequencyTensor:
    """Parse an exact-frequency CSV written by :func:`write_frequencies`."""
    path = Path(path)
    meta, design, values = _parse_table(path, FREQS_HEADER, "frequency")
    n_shots = meta.get("N_sc")
    if n_shots is not None:
        n_shots = int(n_shots) * design.n_states * design.n_times * design.n_bases
    return FrequencyTensor(design=design, values=values, n_shots=n_shots)
