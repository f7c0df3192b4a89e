"""Reproduction harnesses: method comparisons, subset sweeps, noise floors.

Each harness returns plain dicts of numpy arrays so the CLI can dump CSV
and the test suite can assert on the same numbers.  All stochastic
harnesses take a single seed and derive one child stream per repeat, so
results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .counts import exact_frequencies, frequencies, sample_counts
from .diagnostics import shot_noise_floor, sparsifying_basis, transform_to_basis
from .estimators import (
    CsProblem,
    DiaOptions,
    FullMlOptions,
    PgdmOptions,
    dia_estimate,
    full_ml_estimate,
    grow_configuration_subsets,
    pgdm_estimate,
)
from .lindblad import (
    LindbladModel,
    predicted_probabilities,
    sample_hs_random_G,
    sample_projector_G,
    structured_noise_G,
)
from .linearize import TargetUnitary, linear_probability, sensitivity_phi
from .pauli import SIGMA_X, SIGMA_Y, SIGMA_Z, build_pauli_basis
from .states import enumerate_configurations

# Structured two-qubit noise rates used by the subset benchmarks; the
# Pauli-basis trace of the resulting matrix is exactly 0.04 at unit time
# (the damping coefficient vectors carry squared norm 1/2).  Weak enough
# that the linear model is accurate, strong enough to stand above solver
# tolerances.
DEFAULT_STRUCTURED_RATES = {
    "deph_1": 0.012,
    "deph_2": 0.008,
    "damp_1": 0.010,
    "damp_2": 0.006,
    "bit_flip": 0.012,
}
CS_EPSILON_MARGIN = 1.2  # residual-bound safety factor over the truth residual


def random_rotation_target(n_qubits: int, rng: np.random.Generator,
                           duration: float = 1.0) -> TargetUnitary:
    """pi/2 rotation of qubit 1 around a uniformly random Bloch axis."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    H1 = (np.pi / 4.0 / duration) * (
        axis[0] * SIGMA_X + axis[1] * SIGMA_Y + axis[2] * SIGMA_Z)
    H = H1
    for _ in range(n_qubits - 1):
        H = np.kron(H, np.eye(2))
    return TargetUnitary.from_hamiltonian(H, duration)


def _percentile_curves(rows: list[np.ndarray]) -> dict:
    """Stack per-repeat curves (padding with the final value) and summarize."""
    length = max(len(r) for r in rows)
    mat = np.empty((len(rows), length))
    for i, row in enumerate(rows):
        mat[i, :len(row)] = row
        mat[i, len(row):] = row[-1]
    p20, p50, p80 = np.percentile(mat, [20, 50, 80], axis=0)
    return {"p20": p20, "median": p50, "p80": p80}


def _run_parallel(worker, payloads, jobs):
    if jobs <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, payloads))


# -- full vs linearized maximum likelihood -------------------------------------


def _method_compare_draw(payload):
    (seed_seq, trace_scale, dia_iters, full_max_iter, full_cost_tol) = payload
    rng = np.random.default_rng(seed_seq)
    basis = build_pauli_basis(2)
    design = enumerate_configurations(2, [1.0], 1)
    n = basis.n_elements - 1

    G_true = sample_hs_random_G(n, trace_scale, rng)
    target = random_rotation_target(2, rng)
    c_true = target.pauli_coefficients(basis)
    model = LindbladModel(basis=basis, c=c_true, G=G_true)
    freqs = exact_frequencies(predicted_probabilities(model, design), design)
    lin = sensitivity_phi(target, design)

    dia = dia_estimate(lin, freqs, DiaOptions(
        max_iter=dia_iters, stationarity_tol=0.0, cost_tol=0.0,
        initial_trace=trace_scale, reference_G=G_true))
    full = full_ml_estimate(freqs, design, basis, FullMlOptions(
        max_iter=full_max_iter, cost_tol=full_cost_tol, c_known=c_true,
        initial_trace=trace_scale, reference_G=G_true))
    return (
        dia.trace.distance_to_reference,
        full.trace.distance_to_reference,
        float(np.mean(dia.trace.wall_time)),
        float(np.mean(full.trace.wall_time)),
    )


def full_vs_linear_benchmark(
    repeats: int = 20,
    seed: int = 0,
    trace_scale: float = 0.25,
    dia_iters: int = 400,
    full_max_iter: int = 3000,
    full_cost_tol: float = 1e-9,
    jobs: int = 1,
) -> dict:
    """Error-vs-iteration comparison of the linear and exact estimators.

    Draws Hilbert-Schmidt random truths at the given trace scale, builds
    exact (infinite-shot) data with a known random rotation Hamiltonian,
    and records normalized Frobenius error per descent iteration for both
    methods, plus mean per-iteration wall times.
    """
    children = np.random.SeedSequence(seed).spawn(repeats)
    payloads = [(child, trace_scale, dia_iters, full_max_iter, full_cost_tol)
                for child in children]
    results = _run_parallel(_method_compare_draw, payloads, jobs)
    dia_rows = [r[0] for r in results]
    full_rows = [r[1] for r in results]
    return {
        "dia": _percentile_curves(dia_rows),
        "full": _percentile_curves(full_rows),
        "dia_seconds_per_iteration": float(np.median([r[2] for r in results])),
        "full_seconds_per_iteration": float(np.median([r[3] for r in results])),
    }


# -- DIA vs pGDM on well- and ill-conditioned truths ----------------------------


def _descent_compare_draw(payload):
    (seed_seq, sampler, trace_scale, iters, pgdm_eta) = payload
    rng = np.random.default_rng(seed_seq)
    basis = build_pauli_basis(2)
    design = enumerate_configurations(2, [1.0], 1)
    n = basis.n_elements - 1

    if sampler == "hs":
        G_true = sample_hs_random_G(n, trace_scale, rng)
    elif sampler == "rank1":
        G_true = sample_projector_G(n, 1, trace_scale, rng)
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    target = random_rotation_target(2, rng)
    model = LindbladModel(basis=basis, c=target.pauli_coefficients(basis), G=G_true)
    freqs = exact_frequencies(predicted_probabilities(model, design), design)
    lin = sensitivity_phi(target, design)

    dia = dia_estimate(lin, freqs, DiaOptions(
        max_iter=iters, stationarity_tol=0.0, cost_tol=0.0,
        initial_trace=0.25, reference_G=G_true))
    pgdm = pgdm_estimate(lin, freqs, PgdmOptions(
        max_iter=iters, cost_tol=0.0, eta=pgdm_eta,
        initial_trace=0.25, reference_G=G_true))
    return dia.trace.distance_to_reference, pgdm.trace.distance_to_reference


def dia_vs_pgdm_benchmark(
    repeats: int = 20,
    seed: int = 0,
    trace_scale: float = 0.01,
    iters: int = 600,
    pgdm_eta: float = 3.3e-5,
    jobs: int = 1,
) -> dict:
    """Convergence comparison on Hilbert-Schmidt vs rank-1 projector truths.

    Both methods start from the same diagonal matrix at trace 0.25, the
    standard initial guess; its mismatch with the much weaker truths is
    exactly what separates the two descent styles.  The momentum step size
    default is the published value rescaled by the per-basis probability
    normalization used here (a factor 3^N smaller).
    """
    out = {}
    subs = np.random.SeedSequence(seed).spawn(2)
    for sampler, sub in zip(("hs", "rank1"), subs):
        children = sub.spawn(repeats)
        payloads = [(child, sampler, trace_scale, iters, pgdm_eta)
                    for child in children]
        results = _run_parallel(_descent_compare_draw, payloads, jobs)
        out[sampler] = {
            "dia": _percentile_curves([r[0] for r in results]),
            "pgdm": _percentile_curves([r[1] for r in results]),
        }
    return out


# -- compressed sensing vs linear ML over configuration subsets -----------------


def structured_truth_model(scale: float = 1.0) -> LindbladModel:
    """Five-jump-operator truth; ``scale`` multiplies every default rate."""
    return structured_noise_G({k: scale * v for k, v in DEFAULT_STRUCTURED_RATES.items()})


def calibrated_cs_epsilon(lin, freqs, G_true, indices) -> float:
    """Residual scale of the truth on the data, times a safety margin.

    The constraint bound is sqrt(n) * epsilon, so epsilon is calibrated as
    the root-mean-square per-configuration residual left by the true matrix
    (the linearization floor, plus shot noise when present).
    """
    residual = (freqs.flat[indices] - linear_probability(lin, G_true, indices))
    return CS_EPSILON_MARGIN * float(np.sqrt(np.mean(residual**2)))


def subset_sweep_benchmark(
    repeats: int = 20,
    seed: int = 0,
    start: int = 33,
    step: int = 21,
    sizes: list[int] | None = None,
    dia_iters: int = 1200,
    epsilon: float | None = None,
    reference: str = "truth",
    shots_per_setting: int | None = None,
    include_sparsifying: bool = False,
    truth_scale: float = 1.0,
) -> dict:
    """Error of CS and linear-ML estimates as configurations grow.

    Uses the structured five-jump-operator truth with an identity target.
    Nested random subsets of the independent configurations grow from
    ``start`` by ``step``; errors are normalized Frobenius distances to the
    reference ("truth", or "full_ml" for a data-driven reference as used
    with real measurements).  ``include_sparsifying`` additionally runs CS
    in the eigenbasis of the reference estimate.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    basis = build_pauli_basis(2)
    design = enumerate_configurations(2, [1.0], shots_per_setting or 1)
    model = structured_truth_model(truth_scale)
    G_true = model.G
    target = TargetUnitary.identity(2)
    lin = sensitivity_phi(target, design)
    probs = predicted_probabilities(model, design)
    if shots_per_setting is None:
        freqs = exact_frequencies(probs, design)
    else:
        freqs = frequencies(sample_counts(probs, design, shots_per_setting, rng))

    independent = design.independent_indices()
    if epsilon is None:
        epsilon = calibrated_cs_epsilon(lin, freqs, G_true, independent)

    if reference == "truth":
        G_ref = G_true
    elif reference == "full_ml":
        full = full_ml_estimate(freqs, design, basis, FullMlOptions(
            max_iter=600, cost_tol=1e-11, c_known=np.zeros(basis.n_elements - 1)))
        G_ref = full.G_hat
    else:
        raise ValueError(f"unknown reference {reference!r}")

    schedules = grow_configuration_subsets(
        independent, start=start, step=step, repeats=repeats, rng=rng)
    all_sizes = [len(s) for s in schedules[0]]
    if sizes is not None:
        keep = [k for k, size in enumerate(all_sizes) if size in set(sizes)]
    else:
        keep = list(range(len(all_sizes)))

    cs_problem = CsProblem(lin)
    lin_A = None
    if include_sparsifying:
        basis_A = sparsifying_basis(G_ref)
        lin_A = sensitivity_phi(target, design, operator_basis=basis_A)
        cs_problem_A = CsProblem(lin_A)

    ref_norm = np.linalg.norm(G_ref)
    errors = {"cs": [], "dia": []}
    if include_sparsifying:
        errors["cs_sparse_basis"] = []
    for schedule in schedules:
        row_cs, row_dia, row_cs_a = [], [], []
        for k in keep:
            subset = schedule[k]
            cs = cs_problem.solve(freqs, epsilon, subset)
            row_cs.append(np.linalg.norm(cs.G_hat - G_ref) / ref_norm)
            dia = dia_estimate(lin, freqs, DiaOptions(
                max_iter=dia_iters, stationarity_tol=0.0, cost_tol=1e-13,
                initial_trace=float(np.trace(G_true).real),
                config_indices=subset))
            row_dia.append(np.linalg.norm(dia.G_hat - G_ref) / ref_norm)
            if include_sparsifying:
                cs_a = cs_problem_A.solve(freqs, epsilon, subset)
                G_back = transform_to_basis(
                    cs_a.G_hat, lin.operator_basis, old_basis=lin_A.operator_basis)
                row_cs_a.append(np.linalg.norm(G_back - G_ref) / ref_norm)
        errors["cs"].append(np.asarray(row_cs))
        errors["dia"].append(np.asarray(row_dia))
        if include_sparsifying:
            errors["cs_sparse_basis"].append(np.asarray(row_cs_a))

    out = {
        "sizes": np.asarray([all_sizes[k] for k in keep]),
        "epsilon": float(epsilon),
    }
    for method, rows in errors.items():
        stacked = np.vstack(rows)
        p20, p50, p80 = np.percentile(stacked, [20, 50, 80], axis=0)
        out[method] = {"p20": p20, "median": p50, "p80": p80}
    return out


# -- shot-noise floors -----------------------------------------------------------


def noise_floor_single_qubit(seed: int = 0, shots_per_setting: int = 10_000,
                             repeats: int = 20) -> float:
    """Median spurious rate for the single-qubit pi/2 rotation design."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    design = enumerate_configurations(1, [1.0], shots_per_setting)
    target = TargetUnitary.rx_half_pi()
    return shot_noise_floor(target, design, shots_per_setting, repeats, rng)


def noise_floor_two_qubit(seed: int = 0, shots_per_setting: int = 1000,
                          repeats: int = 20) -> float:
    """Median spurious rate for the two-qubit entangling-gate design."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    design = enumerate_configurations(2, [1.0], shots_per_setting)
    target = TargetUnitary.ms_half_pi()
    return shot_noise_floor(target, design, shots_per_setting, repeats, rng)


# -- single- and two-qubit gate workflows (synthetic stand-ins) -------------------


def planted_single_qubit_model(
    rate: float = 5.6e-3,
    axis=(0.77, 0.36, 0.53),
) -> LindbladModel:
    """Single dominant dephasing-like jump operator along a fixed axis."""
    basis = build_pauli_basis(1)
    v = np.asarray(axis, dtype=complex)
    v /= np.linalg.norm(v)
    G = rate * np.outer(v, v.conj())
    return LindbladModel(basis=basis, c=np.zeros(3), G=G)


def single_qubit_workflow(
    seed: int = 0,
    shots_per_setting: int = 10_000,
    floor_repeats: int = 20,
    dia_iters: int = 3000,
    planted: LindbladModel | None = None,
) -> dict:
    """Floor, estimate, and fit diagnostics for a noisy pi/2 rotation.

    A planted noise model rides on top of the ideal gate; the workflow
    reports the shot-noise floor, the fitted matrix, its chi-square trace,
    and the extracted dominant rate and axis.
    """
    from .diagnostics import noise_summary, pearson_chi2

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    basis = build_pauli_basis(1)
    design = enumerate_configurations(1, [1.0], shots_per_setting)
    target = TargetUnitary.rx_half_pi()
    planted = planted or planted_single_qubit_model()
    truth = LindbladModel(basis=basis, c=target.pauli_coefficients(basis),
                          G=planted.G)
    lin = sensitivity_phi(target, design)

    floor = shot_noise_floor(
        target, design, shots_per_setting, floor_repeats, rng, lin=lin)
    probs = predicted_probabilities(truth, design)
    table = sample_counts(probs, design, shots_per_setting, rng)
    freqs = frequencies(table)
    result = dia_estimate(lin, freqs, DiaOptions(
        max_iter=dia_iters, initial_trace=0.25,
        stationarity_tol=1e-12, cost_tol=1e-13))
    summary = noise_summary(result.G_hat, floor=floor)
    report = pearson_chi2((lin, result.G_hat), freqs, design, freqs.n_shots)
    return {
        "floor": floor,
        "G_hat": result.G_hat,
        "chi2_trace": result.trace.chi2,
        "chi2_final": report.chi2,
        "rates": summary.rates,
        "dominant_axis": summary.axes[0],
        "truth": truth,
    }


def two_qubit_workflow(
    seed: int = 0,
    shots_per_setting: int = 1000,
    n_config: int = 96,
    dia_iters: int = 3000,
    epsilon: float | None = None,
) -> dict:
    """DIA and CS estimates of structured noise on the entangling gate."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    design = enumerate_configurations(2, [1.0], shots_per_setting)
    target = TargetUnitary.ms_half_pi()
    # rates scaled up to the magnitude seen on real entangling gates, well
    # above the shot-noise floor of a 10^3-shot design
    model = structured_truth_model(scale=6.25)
    truth = LindbladModel(basis=model.basis,
                          c=target.pauli_coefficients(model.basis), G=model.G)
    lin = sensitivity_phi(target, design)
    probs = predicted_probabilities(truth, design)
    freqs = frequencies(sample_counts(probs, design, shots_per_setting, rng))

    independent = design.independent_indices()
    subset = grow_configuration_subsets(
        independent, start=n_config, step=1, repeats=1, rng=rng)[0][0]
    if epsilon is None:
        epsilon = calibrated_cs_epsilon(lin, freqs, truth.G, independent)
    dia = dia_estimate(lin, freqs, DiaOptions(
        max_iter=dia_iters, initial_trace=0.25, config_indices=subset,
        stationarity_tol=1e-12, cost_tol=1e-13))
    cs_problem = CsProblem(lin)
    cs = cs_problem.solve(freqs, epsilon, None)
    cs_sub = cs_problem.solve(freqs, epsilon, subset)
    return {
        "G_true": truth.G,
        "G_dia": dia.G_hat,
        "G_cs": cs_sub.G_hat,
        "G_cs_full": cs.G_hat,
        "epsilon": float(epsilon),
    }
