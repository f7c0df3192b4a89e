"""Command-line pipeline: simulate, linearize, estimate, diagnose, bench.

Every stochastic command requires a seed and produces identical outputs for
identical inputs, independent of worker count.  Result and report files are
JSON with a provenance block (tool version, seed, configuration hash);
benchmark tables are CSV with provenance comment lines.  Per-iteration wall
times are volatile and therefore live in a separate ``*.timing.json``
sidecar so the main result file stays byte-reproducible.

Failures print a machine-readable error JSON to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import (
    dia_vs_pgdm_benchmark,
    full_vs_linear_benchmark,
    single_qubit_workflow,
    subset_sweep_benchmark,
    two_qubit_workflow,
)
from .counts import (
    frequencies,
    read_counts,
    read_frequencies,
    sample_counts,
    write_counts,
    write_frequencies,
    exact_frequencies,
)
from .diagnostics import noise_summary, pearson_chi2
from .errors import LindtomoError, ValidationError
from .estimators import (
    CsOptions,
    DiaOptions,
    FullMlOptions,
    PgdmOptions,
    cs_estimate,
    dia_estimate,
    full_ml_estimate,
    pgdm_estimate,
)
from .lindblad import OperatorBasis, predicted_probabilities, read_model
from .linearize import (
    LinearizedModel,
    TargetUnitary,
    linear_probability,
    load_linearized,
    save_linearized,
    sensitivity_phi,
)
from .pauli import build_pauli_basis
from .states import enumerate_configurations


# -- shared helpers -----------------------------------------------------------


def _config_hash(args: argparse.Namespace) -> str:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _provenance(args) -> dict:
    return {
        "tool": "lindtomo",
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config_hash": _config_hash(args),
    }


def _complex_pairs(arr):
    arr = np.asarray(arr, dtype=complex)
    if arr.ndim == 1:
        return [[float(z.real), float(z.imag)] for z in arr]
    return [[[float(z.real), float(z.imag)] for z in row] for row in arr]


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n",
                    encoding="utf-8")


def _write_csv(path: Path, provenance: dict, header: list[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for key, value in provenance.items():
            fh.write(f"# {key}={value}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x)
                              for x in row) + "\n")


def _parse_times(spec: str) -> list[float]:
    return [float(x) for x in spec.split(",") if x.strip()]


def _parse_shots(spec: str):
    if spec == "inf":
        return None
    shots = int(spec)
    if shots <= 0:
        raise ValidationError("--shots-per-setting must be positive or 'inf'")
    return shots


def _load_target(args, n_qubits: int | None) -> TargetUnitary:
    name = args.unitary
    if name == "identity":
        if n_qubits is None:
            raise ValidationError("--n-qubits is required for the identity unitary")
        return TargetUnitary.identity(n_qubits)
    if name in ("rx", "rx_half_pi"):
        return TargetUnitary.rx_half_pi()
    if name in ("ms", "ms_half_pi"):
        return TargetUnitary.ms_half_pi()
    if name.startswith("file:"):
        doc = json.loads(Path(name[5:]).read_text(encoding="utf-8"))
        H = np.asarray(doc["hamiltonian"], dtype=float)
        return TargetUnitary.from_hamiltonian(
            H[..., 0] + 1j * H[..., 1], float(doc.get("duration", 1.0)))
    raise ValidationError(f"unknown unitary {name!r}")


def _load_operator_basis(args, n_traceless: int) -> OperatorBasis | None:
    if args.basis == "pauli":
        return None
    if args.basis.startswith("file:"):
        doc = json.loads(Path(args.basis[5:]).read_text(encoding="utf-8"))
        coeffs = np.asarray(doc["coeffs"], dtype=float)
        return OperatorBasis(coeffs[..., 0] + 1j * coeffs[..., 1])
    raise ValidationError(f"unknown basis {args.basis!r}")


def _read_data(path: Path):
    """Counts or exact-frequency file -> FrequencyTensor."""
    if path.name.endswith(".freqs.csv"):
        return read_frequencies(path)
    return frequencies(read_counts(path))


# -- simulate ------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    model = read_model(args.model)
    times = _parse_times(args.times)
    shots = _parse_shots(args.shots_per_setting)
    design = enumerate_configurations(model.n_qubits, times, shots or 1)
    probs = predicted_probabilities(model, design)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta_extra = {"provenance": _provenance(args)}
    if shots is None:
        freqs = exact_frequencies(probs, design)
        path = out_dir / f"{args.name}.freqs.csv"
        write_frequencies(freqs, path, extra_meta=meta_extra)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(args.seed))
        table = sample_counts(probs, design, shots, rng)
        path = out_dir / f"{args.name}.csv"
        write_counts(table, path, extra_meta=meta_extra)
    print(path)
    return 0


# -- linearize -----------------------------------------------------------------


def _cmd_linearize(args) -> int:
    times = _parse_times(args.times)
    target = _load_target(args, args.n_qubits)
    design = enumerate_configurations(target.n_qubits, times,
                                      _parse_shots(args.shots_per_setting) or 1)
    op_basis = _load_operator_basis(args, design.dim**2 - 1)
    lin = sensitivity_phi(target, design, operator_basis=op_basis,
                          quadrature_steps=args.quadrature_steps)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_linearized(lin, out)
    print(out)
    return 0


# -- estimate ------------------------------------------------------------------


def _build_linear_model(args, design) -> LinearizedModel:
    if args.linear_cache:
        lin = load_linearized(args.linear_cache)
        if lin.design.shape != design.shape or \
                not np.allclose(lin.design.times, design.times):
            raise ValidationError("linear cache does not match the counts design")
        return lin
    target = _load_target(args, design.n_qubits)
    op_basis = _load_operator_basis(args, design.dim**2 - 1)
    return sensitivity_phi(target, design, operator_basis=op_basis)


def _trace_records(trace) -> list[dict]:
    records = []
    for i in range(len(trace)):
        rec = {
            "iteration": int(trace.iterations[i]),
            "cost": float(trace.cost[i]),
        }
        if np.isfinite(trace.step_size[i]):
            rec["step_size"] = float(trace.step_size[i])
        if np.isfinite(trace.gradient_norm[i]):
            rec["gradient_norm"] = float(trace.gradient_norm[i])
        if np.isfinite(trace.distance_to_reference[i]):
            rec["distance_to_reference"] = float(trace.distance_to_reference[i])
        if np.isfinite(trace.chi2[i]):
            rec["chi2"] = float(trace.chi2[i])
        records.append(rec)
    return records


def _cmd_estimate(args) -> int:
    freqs = _read_data(Path(args.counts))
    design = freqs.design
    basis = build_pauli_basis(design.n_qubits)
    method = args.method

    if method == "full":
        target = _load_target(args, design.n_qubits)
        options = FullMlOptions(
            max_iter=args.max_iter, cost_tol=args.tol,
            estimate_hamiltonian=args.estimate_hamiltonian,
            c_known=target.pauli_coefficients(basis),
            operator_basis=_load_operator_basis(args, design.dim**2 - 1),
        )
        if args.eta is not None:
            options.eta_prime = args.eta
        result = full_ml_estimate(freqs, design, basis, options)
    else:
        lin = _build_linear_model(args, design)
        if method == "dia":
            options = DiaOptions(max_iter=args.max_iter, cost_tol=args.tol)
            if args.eta is not None:
                options.eta_prime = args.eta
            result = dia_estimate(lin, freqs, options)
        elif method == "pgdm":
            options = PgdmOptions(max_iter=args.max_iter, cost_tol=args.tol,
                                  gamma=args.gamma)
            if args.eta is not None:
                options.eta = args.eta
            result = pgdm_estimate(lin, freqs, options)
        elif method == "cs":
            if args.epsilon is None:
                raise ValidationError("--epsilon is required for --method cs")
            result = cs_estimate(lin, freqs, args.epsilon, CsOptions())
        else:
            raise ValidationError(f"unknown method {method!r}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result_path = out_dir / f"{args.name}.json"
    timing_path = out_dir / f"{args.name}.timing.json"
    doc = {
        "provenance": _provenance(args),
        "method": result.method,
        "options": result.options,
        "converged": result.converged,
        "stop_reason": result.stop_reason,
        "final_cost": None if not len(result.trace) else float(result.trace.cost[-1]),
        "G_hat": _complex_pairs(result.G_hat),
        "c_hat": None if result.c_hat is None else [float(x) for x in result.c_hat],
        "trace": _trace_records(result.trace),
        "timing_file": timing_path.name,
    }
    _write_json(result_path, doc)
    _write_json(timing_path, {
        "provenance": _provenance(args),
        "wall_time_per_iteration": [float(t) for t in result.trace.wall_time],
        "total_seconds": float(result.trace.wall_time.sum()),
    })
    print(result_path)
    return 0


# -- diagnose ------------------------------------------------------------------


def _cmd_diagnose(args) -> int:
    freqs = _read_data(Path(args.counts))
    design = freqs.design
    doc = json.loads(Path(args.result).read_text(encoding="utf-8"))
    G_raw = np.asarray(doc["G_hat"], dtype=float)
    G_hat = G_raw[..., 0] + 1j * G_raw[..., 1]
    basis = build_pauli_basis(design.n_qubits)
    op_basis = _load_operator_basis(args, design.dim**2 - 1)

    if doc["method"] == "full":
        c_hat = doc.get("c_hat")
        target = _load_target(args, design.n_qubits)
        c = np.asarray(c_hat, float) if c_hat is not None \
            else target.pauli_coefficients(basis)
        from .lindblad import LindbladModel
        model = LindbladModel(basis=basis, c=c, G=G_hat, operator_basis=op_basis)
        probabilities = predicted_probabilities(model, design)
    else:
        lin = _build_linear_model(args, design)
        probabilities = linear_probability(lin, G_hat).reshape(design.shape)

    n_shots = freqs.n_shots
    if n_shots is None:
        raise ValidationError("diagnose requires finite-shot count data")
    report = pearson_chi2(probabilities, freqs, design, n_shots)
    summary = noise_summary(G_hat, operator_basis=op_basis, floor=args.floor,
                            n_qubits=design.n_qubits)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{args.name}.json"
    _write_json(path, {
        "provenance": _provenance(args),
        "chi2": {
            "chi2": report.chi2,
            "sigma": report.sigma,
            "n_terms": report.n_terms,
            "min_expected_count": report.min_expected_count,
            "capped": report.capped,
            "valid": report.valid,
        },
        "noise_summary": {
            "rates": [float(x) for x in summary.rates],
            "axes": _complex_pairs(summary.axes),
            "pauli_labels": list(summary.pauli_labels),
            "shot_noise_floor": summary.shot_noise_floor,
            "conclusive": [bool(x) for x in summary.conclusive],
        },
    })
    print(path)
    return 0


# -- bench ---------------------------------------------------------------------


def _curve_rows(curves: dict, methods: list[str]) -> tuple[list[str], list[tuple]]:
    length = max(len(curves[m]["median"]) for m in methods)
    header = ["iteration"]
    for m in methods:
        header += [f"{m}_p20", f"{m}_median", f"{m}_p80"]
    rows = []
    for i in range(length):
        row = [i + 1]
        for m in methods:
            for key in ("p20", "median", "p80"):
                arr = curves[m][key]
                row.append(float(arr[min(i, len(arr) - 1)]))
        rows.append(tuple(row))
    return header, rows


def _cmd_bench(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    prov = _provenance(args)
    repeats = args.repeats if not args.paper_scale else max(args.repeats, 100)
    settings = {"provenance": prov, "figure": args.figure, "repeats": repeats}
    fig = args.figure

    if fig == 2:
        out = full_vs_linear_benchmark(repeats=repeats, seed=args.seed,
                                       jobs=args.jobs)
        header, rows = _curve_rows(out, ["dia", "full"])
        _write_csv(out_dir / "fig2.csv", prov, header, rows)
        settings["dia_seconds_per_iteration"] = out["dia_seconds_per_iteration"]
        settings["full_seconds_per_iteration"] = out["full_seconds_per_iteration"]
    elif fig == 3:
        out = dia_vs_pgdm_benchmark(repeats=repeats, seed=args.seed, jobs=args.jobs)
        for panel in ("hs", "rank1"):
            header, rows = _curve_rows(out[panel], ["dia", "pgdm"])
            _write_csv(out_dir / f"fig3_{panel}.csv", prov, header, rows)
    elif fig == 4:
        out = subset_sweep_benchmark(
            repeats=repeats, seed=args.seed,
            start=args.subset_start, step=args.subset_step,
            epsilon=args.epsilon)
        header = ["n_conf"]
        for m in ("cs", "dia"):
            header += [f"{m}_p20", f"{m}_median", f"{m}_p80"]
        rows = []
        for i, size in enumerate(out["sizes"]):
            row = [int(size)]
            for m in ("cs", "dia"):
                row += [float(out[m][k][i]) for k in ("p20", "median", "p80")]
            rows.append(tuple(row))
        _write_csv(out_dir / "fig4.csv", prov, header, rows)
        settings["epsilon"] = out["epsilon"]
    elif fig == 5:
        out = single_qubit_workflow(seed=args.seed, floor_repeats=repeats)
        _write_csv(out_dir / "fig5_chi2.csv", prov, ["iteration", "chi2"],
                   [(i + 1, float(c)) for i, c in enumerate(out["chi2_trace"])])
        _write_json(out_dir / "fig5.json", {
            "provenance": prov,
            "shot_noise_floor": out["floor"],
            "chi2_final": out["chi2_final"],
            "rates": [float(x) for x in out["rates"]],
            "dominant_axis": _complex_pairs(out["dominant_axis"]),
            "G_hat": _complex_pairs(out["G_hat"]),
        })
    elif fig == 6:
        out = two_qubit_workflow(seed=args.seed)
        _write_json(out_dir / "fig6.json", {
            "provenance": prov,
            "epsilon": out["epsilon"],
            "G_true": _complex_pairs(out["G_true"]),
            "G_dia": _complex_pairs(out["G_dia"]),
            "G_cs": _complex_pairs(out["G_cs"]),
        })
    elif fig == 7:
        out = subset_sweep_benchmark(
            repeats=repeats, seed=args.seed, reference="full_ml",
            shots_per_setting=1000, include_sparsifying=True, truth_scale=6.25,
            start=args.subset_start, step=args.subset_step,
            epsilon=args.epsilon)
        header = ["n_conf"]
        methods = ("cs", "dia", "cs_sparse_basis")
        for m in methods:
            header += [f"{m}_p20", f"{m}_median", f"{m}_p80"]
        rows = []
        for i, size in enumerate(out["sizes"]):
            row = [int(size)]
            for m in methods:
                row += [float(out[m][k][i]) for k in ("p20", "median", "p80")]
            rows.append(tuple(row))
        _write_csv(out_dir / "fig7.csv", prov, header, rows)
        settings["epsilon"] = out["epsilon"]
    else:
        raise ValidationError(f"unknown figure {fig}")

    _write_json(out_dir / f"fig{fig}_settings.json", settings)
    print(out_dir)
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lindtomo",
        description="Estimate noise generators of weakly dissipative qubit "
                    "dynamics from tomography count data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seed_required):
        p.add_argument("--seed", type=int, required=seed_required,
                       help="RNG seed (required for stochastic commands)")
        p.add_argument("--out", required=True, help="output directory or file")

    p_sim = sub.add_parser("simulate", help="model + design -> counts file")
    p_sim.add_argument("--model", required=True, help="model JSON file")
    p_sim.add_argument("--times", default="1.0", help="comma-separated times")
    p_sim.add_argument("--shots-per-setting", default="1000",
                       help="shots per (state, time, basis); 'inf' for exact")
    p_sim.add_argument("--name", default="counts")
    add_common(p_sim, seed_required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_lin = sub.add_parser("linearize", help="design + unitary -> cached linear model")
    p_lin.add_argument("--unitary", required=True,
                       help="identity | rx_half_pi | ms_half_pi | file:<H.json>")
    p_lin.add_argument("--n-qubits", type=int, default=None)
    p_lin.add_argument("--times", default="1.0")
    p_lin.add_argument("--shots-per-setting", default="1000")
    p_lin.add_argument("--quadrature-steps", type=int, default=64)
    p_lin.add_argument("--basis", default="pauli", help="pauli | file:<basis.json>")
    add_common(p_lin, seed_required=False)
    p_lin.set_defaults(func=_cmd_linearize)

    p_est = sub.add_parser("estimate", help="counts + method -> result JSON")
    p_est.add_argument("--counts", required=True)
    p_est.add_argument("--method", required=True,
                       choices=["full", "dia", "pgdm", "cs"])
    p_est.add_argument("--unitary", default="identity")
    p_est.add_argument("--basis", default="pauli")
    p_est.add_argument("--linear-cache", default=None,
                       help="reuse a cache produced by `linearize`")
    p_est.add_argument("--epsilon", type=float, default=None,
                       help="residual scale for --method cs")
    p_est.add_argument("--eta", type=float, default=None,
                       help="line-search scale (full/dia) or step size (pgdm)")
    p_est.add_argument("--gamma", type=float, default=0.99,
                       help="momentum friction (pgdm)")
    p_est.add_argument("--max-iter", type=int, default=5000)
    p_est.add_argument("--tol", type=float, default=1e-10)
    p_est.add_argument("--estimate-hamiltonian", action="store_true")
    p_est.add_argument("--n-qubits", type=int, default=None)
    p_est.add_argument("--name", default="result")
    p_est.add_argument("--seed", type=int, default=None)
    p_est.add_argument("--out", required=True)
    p_est.set_defaults(func=_cmd_estimate)

    p_diag = sub.add_parser("diagnose", help="result + counts -> fit reports")
    p_diag.add_argument("--result", required=True)
    p_diag.add_argument("--counts", required=True)
    p_diag.add_argument("--unitary", default="identity")
    p_diag.add_argument("--basis", default="pauli")
    p_diag.add_argument("--linear-cache", default=None)
    p_diag.add_argument("--floor", type=float, default=0.0,
                        help="shot-noise floor for flagging inconclusive rates")
    p_diag.add_argument("--n-qubits", type=int, default=None)
    p_diag.add_argument("--name", default="diagnostics")
    p_diag.add_argument("--seed", type=int, default=None)
    p_diag.add_argument("--out", required=True)
    p_diag.set_defaults(func=_cmd_diagnose)

    p_bench = sub.add_parser("bench", help="reproduction benchmarks -> CSV/JSON")
    p_bench.add_argument("--figure", type=int, required=True,
                         choices=[2, 3, 4, 5, 6, 7])
    p_bench.add_argument("--repeats", type=int, default=20)
    p_bench.add_argument("--paper-scale", action="store_true",
                         help="raise repeats to the published scale")
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.add_argument("--subset-start", type=int, default=33)
    p_bench.add_argument("--subset-step", type=int, default=21)
    p_bench.add_argument("--epsilon", type=float, default=None)
    add_common(p_bench, seed_required=True)
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LindtomoError, OSError, json.JSONDecodeError) as exc:
        error_doc = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(error_doc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
