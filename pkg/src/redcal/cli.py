"""Command-line interface.

Subcommands: redcal (disagreement reconciliation), decal (single-predictor
decision calibration), reconcile (scalar value-band baseline), replay,
audit, gen (benchmark instances), and bound (closed-form calculators).

Run commands read the dataset CSV from --data ('-' for stdin), print a
one-line JSON summary to stdout, and optionally write a step-by-step
metrics JSONL and a replayable transcript.  Identical inputs and flags
produce byte-identical outputs.  Exit codes: 0 success, 2 bad input or
configuration, 3 run truncated by --max-steps, 4 audit failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from .bounds import (
    BoundInputs,
    deviation_bounds,
    exact_iteration_bound,
    grid_iteration_bound,
    transcript_space_log,
)
from .calibration import (
    StepReport,
    TruncatedRunError,
    decision_calibrate,
    max_disagreement_mass,
    max_residual_norm,
    reconcile_baseline,
    redcal,
    resolve_config,
)
from .core import (
    EmpiricalDataset,
    InputError,
    LossFamily,
    PredictorPair,
    RedcalError,
    RunConfig,
    brier_score,
    decision_loss,
    loss_gap,
)
from .dataio import load_dataset, load_loss_family, save_dataset, save_loss_family
from .events import BandEvent, band_members, event_mass
from .instances import (
    GENERATOR_NAME,
    audit,
    gen_decal_counterexample,
    gen_random_instance,
    gen_reconcile_counterexample,
    threshold_loss,
)
from .transcript import (
    build_transcript,
    encode_event,
    fraction_literal,
    load_transcript,
    replay,
    save_transcript,
    transcript_digest,
)

from dataclasses import replace


def _open_data(spec: str) -> EmpiricalDataset:
    return load_dataset(sys.stdin if spec == "-" else spec)


def _resolve_family(losses_path: str | None, data: EmpiricalDataset) -> LossFamily:
    if losses_path:
        family = load_loss_family(losses_path)
    elif data.d == 1:
        family = LossFamily((threshold_loss(),))
    else:
        raise InputError("--losses is required for multi-dimensional data")
    family.validate_for(data)
    return family


def _json_line(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _by_predictor(values: dict[int, object]) -> dict:
    return {str(i): (list(v) if isinstance(v, tuple) else v) for i, v in values.items()}


def _state_metrics(state: PredictorPair, data: EmpiricalDataset, family: LossFamily | None,
                   alpha: float, eps: float | None = None) -> dict:
    out = {
        "brier": _by_predictor({i: brier_score(i, data, state.predictions[i]) for i in (1, 2)}),
    }
    if family is not None:
        out["decision_loss"] = _by_predictor({
            i: tuple(decision_loss(i, loss, data, state.predictions[i]) for loss in family)
            for i in (1, 2)
        })
        out["loss_gap"] = _by_predictor({
            i: tuple(loss_gap(i, loss, data, state.predictions[i]) for loss in family)
            for i in (1, 2)
        })
        out["max_disagreement_mass"] = max_disagreement_mass(state, data, family, alpha)
        out["max_residual_norm"] = _by_predictor({
            i: max_residual_norm(i, family, state, data) for i in (1, 2)
        })
    if eps is not None:
        mass = sum(
            event_mass(band_members(BandEvent(side=side, eps=eps), state), data)
            for side in (">", "<")
        )
        out["band_mass"] = mass
    return out


def _step_record(report: StepReport, m: int) -> dict:
    return {
        "record": "step",
        "seq": report.seq,
        "stage": report.stage,
        "target": report.target,
        "event": encode_event(report.event, m),
        "phi": [fraction_literal(float(v), m) for v in report.phi],
        "mass": report.mass,
        "brier_before": _by_predictor(report.brier_before),
        "brier_after": _by_predictor(report.brier_after),
        "decision_loss": _by_predictor(report.decision_loss),
        "loss_gap": _by_predictor(report.loss_gap),
        "beta_used": report.beta_used,
        "delta": report.delta,
    }


def _write_metrics(path: str, reports, summary: dict, m: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(_json_line(_step_record(report, m)) + "\n")
        fh.write(_json_line(summary) + "\n")


def _count(reports, stage_filter) -> dict:
    counts = {1: 0, 2: 0}
    for r in reports:
        if stage_filter(r.stage):
            counts[r.target] += 1
    return counts


def _run_command(args: argparse.Namespace, mode: str) -> int:
    data = _open_data(args.data)
    family = _resolve_family(args.losses, data)
    alpha = args.eps if mode == "baseline" else args.alpha
    config = RunConfig(
        alpha=alpha,
        eta=args.eta,
        beta=getattr(args, "beta", None),
        m=args.grid_m,
        max_steps=args.max_steps,
        seed=args.seed,
        adaptive_beta=getattr(args, "adaptive_beta", False),
    )
    resolved = resolve_config(config, data, family,
                              mode={"baseline": "baseline", "decal": "decal"}.get(mode, "redcal"))
    state = PredictorPair.from_dataset(data)
    scan_alpha = resolved.alpha
    eps = resolved.alpha if mode == "baseline" else None
    initial = _state_metrics(state, data, family, scan_alpha, eps)
    truncated = False
    try:
        if mode == "redcal":
            state, transcript, reports = redcal(family, config, state, data)
        elif mode == "baseline":
            state, transcript, reports = reconcile_baseline(config, state, data, family)
        else:
            reports = []
            pinned = replace(config, beta=resolved.beta, m=resolved.m,
                             max_steps=resolved.max_steps)
            for target in ((1, 2) if args.predictor == "both" else (int(args.predictor),)):
                state, pass_reports = decision_calibrate(
                    target, family, resolved.beta, state, data, config=pinned)
                reports.extend(
                    replace(r, seq=len(reports) + k) for k, r in enumerate(pass_reports))
            transcript = build_transcript(reports, data, family, resolved.echo())
    except TruncatedRunError as err:
        truncated = True
        state = err.state
        reports = err.reports
        transcript = build_transcript(reports, data, family, err.config)

    final = _state_metrics(state, data, family, scan_alpha, eps)
    audit_dict = None
    audit_failed = False
    if mode in ("redcal", "decal"):
        report = audit(state, data, family, replace(config, beta=resolved.beta))
        audit_dict = report.to_dict()
        if mode == "redcal":
            audit_failed = not report.masses_ok
        else:
            checked = (1, 2) if args.predictor == "both" else (int(args.predictor),)
            audit_failed = not all(report.residuals_ok[i] for i in checked)

    summary = {
        "record": "summary",
        "mode": transcript.config.get("mode", mode),
        "config": transcript.config,
        "truncated": truncated,
        "steps_total": len(reports),
        "reconcile_steps": _by_predictor(_count(reports, lambda s: s != "decision_cal")),
        "calibration_steps": _by_predictor(_count(reports, lambda s: s == "decision_cal")),
        "initial": initial,
        "final": final,
        "audit": audit_dict,
        "transcript_digest": transcript_digest(transcript),
        "test": None,
    }
    if args.test_data:
        test_data = load_dataset(args.test_data)
        test_state = replay(transcript, test_data, family)
        summary["test"] = _state_metrics(test_state, test_data, family, scan_alpha, eps)
    if args.out_transcript:
        save_transcript(transcript, args.out_transcript)
    if args.out_metrics:
        _write_metrics(args.out_metrics, reports, summary, resolved.m)
    print(_json_line(summary))
    if truncated:
        return 3
    if audit_failed:
        return 4
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    transcript = load_transcript(args.transcript)
    data = _open_data(args.data)
    family = _resolve_family(args.losses, data) if (args.losses or data.d == 1) else None
    state = replay(transcript, data, family)
    alpha = float(transcript.config.get("alpha", 0.0)) or 1e-9
    summary = {
        "record": "replay_summary",
        "steps_applied": len(transcript),
        "transcript_digest": transcript_digest(transcript),
        "final": _state_metrics(state, data, family, alpha),
        "reconcile_steps": _by_predictor(state.reconcile_counts),
        "calibration_steps": _by_predictor(state.calibration_counts),
    }
    if args.out_data:
        save_dataset(data, args.out_data, state=state)
    if args.out_metrics:
        with open(args.out_metrics, "w", encoding="utf-8") as fh:
            fh.write(_json_line(summary) + "\n")
    print(_json_line(summary))
    return 0


def _cmd_audit(args: argparse.Namespace) -> int:
    data = _open_data(args.data)
    family = _resolve_family(args.losses, data)
    config = RunConfig(alpha=args.alpha, eta=args.eta, beta=args.beta)
    report = audit(PredictorPair.from_dataset(data), data, family, config)
    print(_json_line({"record": "audit", **report.to_dict()}))
    return 0 if report.passed else 4


def _cmd_gen(args: argparse.Namespace) -> int:
    comment = None
    if args.kind == "reconcile-cx":
        data, family = gen_reconcile_counterexample(phi=args.phi)
    elif args.kind == "decal-cx":
        data, family = gen_decal_counterexample(eta=args.eta, beta=args.beta)
    else:
        data, family = gen_random_instance(
            n=args.n, d=args.d, k=args.k, loss_count=args.loss_count,
            noise=args.noise, seed=args.seed)
        comment = f"generator={GENERATOR_NAME} seed={args.seed}"
        if not args.out_losses:
            raise InputError("gen random requires --out-losses")
    dest = sys.stdout if args.out_data == "-" else args.out_data
    save_dataset(data, dest, comment=comment)
    if args.out_losses:
        save_loss_family(family, args.out_losses)
    return 0


def _cmd_bound(args: argparse.Namespace) -> int:
    inputs = BoundInputs(
        d=args.d, alpha=args.alpha, eta=args.eta, k=args.k, loss_count=args.loss_count,
        beta=args.beta, m=args.grid_m, brier_1=args.b1, brier_2=args.b2,
        n=args.n, delta=args.delta)
    results: dict[str, object] = {}
    if args.b1 is not None and args.b2 is not None:
        results["exact_iteration_bound"] = exact_iteration_bound(inputs)
    if args.beta is not None:
        grid = grid_iteration_bound(inputs)
        results["grid_iteration_bound"] = grid.t_max
        results["min_grid_m"] = grid.m_min
        if args.k is not None and args.loss_count is not None:
            results["transcript_space_log"] = transcript_space_log(inputs)
            if args.n is not None and args.delta is not None:
                dev = deviation_bounds(inputs)
                results["brier_dev"] = dev.brier_dev
                results["calib_dev"] = dev.calib_dev
                results["mass_dev"] = dev.mass_dev
    if not results:
        raise InputError("bound needs --b1/--b2 (exact cap) or --beta (grid cap)")
    if len(results) == 1:
        print(next(iter(results.values())))
    else:
        print(_json_line(results))
    return 0


def _add_run_flags(sub: argparse.ArgumentParser, beta_required: bool = False,
                   with_alpha: bool = True, eta_required: bool = True) -> None:
    sub.add_argument("--data", default="-", help="dataset CSV path, '-' for stdin")
    sub.add_argument("--losses", default=None,
                     help="loss-family JSON; defaults to the binary threshold loss when d=1")
    if with_alpha:
        sub.add_argument("--alpha", type=float, required=True,
                         help="disagreement margin")
    if eta_required:
        sub.add_argument("--eta", type=float, required=True, help="mass threshold in (0,1)")
    else:
        sub.add_argument("--eta", type=float, default=0.5,
                         help="only sizes the default grid; no mass semantics here")
    if beta_required:
        sub.add_argument("--beta", type=float, required=True, help="calibration tolerance")
    else:
        sub.add_argument("--beta", type=float, default=None,
                         help="calibration tolerance (default keeps cumulative loss drift under alpha)")
    sub.add_argument("--grid-m", type=int, default=None, dest="grid_m",
                     help="patch grid resolution; 0 = exact arithmetic; default = smallest safe m")
    sub.add_argument("--max-steps", type=int, default=None, dest="max_steps",
                     help="hard cap on accepted patches (default 10x the closed-form cap)")
    sub.add_argument("--seed", type=int, default=0, help="seed recorded in the transcript")
    sub.add_argument("--out-transcript", default=None, dest="out_transcript",
                     help="write the replayable transcript JSON here")
    sub.add_argument("--out-metrics", default=None, dest="out_metrics",
                     help="write step-by-step metrics JSONL here")
    sub.add_argument("--test-data", default=None, dest="test_data",
                     help="held-out dataset CSV to replay the transcript on")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redcal",
        description="Reconcile two equally accurate predictors for downstream decisions.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("redcal", help="patch away alpha-margin disagreement events")
    _add_run_flags(p)
    p.add_argument("--adaptive-beta", action="store_true", dest="adaptive_beta",
                   help="per-round tolerance delta/sqrt(d) that cannot raise decision loss")
    p.set_defaults(func=lambda a: _run_command(a, "redcal"))

    p = subs.add_parser("decal", help="decision-calibrate one or both predictors")
    p.add_argument("--predictor", choices=("1", "2", "both"), default="both")
    p.add_argument("--alpha", type=float, default=1.0,
                   help="only sizes the default grid; no margin semantics here")
    _add_run_flags(p, beta_required=True, with_alpha=False, eta_required=False)
    p.set_defaults(func=lambda a: _run_command(a, "decal"))

    p = subs.add_parser("reconcile", help="scalar value-band baseline (d = 1 only)")
    p.add_argument("--eps", type=float, required=True, help="prediction-gap threshold")
    _add_run_flags(p, with_alpha=False)
    p.set_defaults(func=lambda a: _run_command(a, "baseline"))

    p = subs.add_parser("replay", help="apply a transcript to a dataset")
    p.add_argument("--transcript", required=True)
    p.add_argument("--data", default="-")
    p.add_argument("--losses", default=None)
    p.add_argument("--out-data", default=None, dest="out_data",
                   help="write the patched dataset CSV here")
    p.add_argument("--out-metrics", default=None, dest="out_metrics")
    p.set_defaults(func=_cmd_replay)

    p = subs.add_parser("audit", help="independently recheck masses and residuals")
    p.add_argument("--data", default="-")
    p.add_argument("--losses", default=None)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--beta", type=float, default=None)
    p.set_defaults(func=_cmd_audit)

    p = subs.add_parser("gen", help="generate benchmark instances")
    gen_subs = p.add_subparsers(dest="kind", required=True)
    g = gen_subs.add_parser("reconcile-cx",
                            help="two-unit instance where the value baseline backfires")
    g.add_argument("--phi", type=float, default=0.2)
    g = gen_subs.add_parser("decal-cx",
                            help="calibrated-but-disagreeing four-unit instance")
    g.add_argument("--eta", type=float, default=0.1)
    g.add_argument("--beta", type=float, default=0.4)
    g = gen_subs.add_parser("random", help="seeded random instance")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--loss-count", type=int, default=1, dest="loss_count")
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    for g_sub in gen_subs.choices.values():
        g_sub.add_argument("--out-data", default="-", dest="out_data")
        g_sub.add_argument("--out-losses", default=None, dest="out_losses")
    p.set_defaults(func=_cmd_gen)

    p = subs.add_parser("bound", help="closed-form run-length and deviation bounds")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--b1", type=float, default=None)
    p.add_argument("--b2", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--loss-count", type=int, default=None, dest="loss_count")
    p.add_argument("--grid-m", type=int, default=None, dest="grid_m")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.set_defaults(func=_cmd_bound)

    return parser


def run_subcommand(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_err:
        return int(exit_err.code or 0)
    try:
        return args.func(args)
    except TruncatedRunError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except RedcalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_subcommand(sys.argv[1:]))
