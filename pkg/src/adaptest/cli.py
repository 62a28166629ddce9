"""Unified command line: analyze, calibrate, learn-bn, train-nn, simulate,
serve, and an interactive terminal test runner (take).

Config precedence: built-in defaults < --config JSON file < explicit flags.
Every randomized command records its seed in the output. Exit codes: 0
success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import bayesnet as bn
from . import irt
from . import neuralnet as nn
from . import simulate as sim
from .adapters import model_factory_from_envelope
from .data import DatasetError, load_bank, load_dataset
from .engine import (
    StoppingRule,
    TestSession,
    next_question,
    submit_answer,
    transcript_of,
)
from .persistence import (
    PersistenceError,
    load_model,
    make_envelope,
    save_json_atomic,
    save_model,
)
from .psychometrics import (
    BUILTIN_SCALES,
    UndefinedStatError,
    cronbach_alpha,
    normality_summary,
    reliability_tier,
    standard_score_table,
    validity_report,
)


class CliError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with flag defaults")
    p.add_argument("--json", action="store_true", default=None, help="print machine-readable JSON")
    p.add_argument("--seed", type=int, help="random seed (default 0), recorded in outputs")


def build_parser() -> _Parser:
    parser = _Parser(prog="adaptest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="psychometric report for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--mode", choices=["numeric", "boolean"])
    p.add_argument("--factors", help="comma-separated info factor names")
    p.add_argument("--subset", action="append", help="NAME=item1,item2 scored subset")
    p.add_argument("--out", help="write the JSON report here")
    _add_common(p)

    p = sub.add_parser("calibrate", help="fit IRT item parameters by MML-EM")
    p.add_argument("--data", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=["2pl", "3pl"])
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--log", help="write the convergence trace here")
    _add_common(p)

    p = sub.add_parser("learn-bn", help="EM-learn Bayesian network CPTs")
    p.add_argument("--model", required=True, help="initial model (envelope or raw payload JSON)")
    p.add_argument("--data", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["numeric", "boolean"])
    p.add_argument("--pseudocount", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--trace", help="write the likelihood trace here")
    _add_common(p)

    p = sub.add_parser("train-nn", help="train the neural score predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["numeric", "boolean"])
    p.add_argument("--hidden", help="comma-separated hidden layer widths")
    p.add_argument("--scheme", choices=["zero_one", "neg_one", "points"])
    p.add_argument("--missing-policy", choices=["zero_fill", "item_mean"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    _add_common(p)

    p = sub.add_parser("simulate", help="adaptive-vs-baseline evaluation")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", help="write the report JSON here")
    p.add_argument("--csv", help="write plot-ready per-examinee series here")
    _add_common(p)

    p = sub.add_parser("serve", help="run the session HTTP service")
    p.add_argument("--bind", help="host:port (default 127.0.0.1:8000)")
    p.add_argument("--models-dir", required=True)
    p.add_argument("--transcript-access", choices=["always", "finished", "never"])
    p.add_argument("--stopping", action="append", help="default rule kind=value, repeatable")
    p.add_argument("--allow-stopping", help="comma-separated client-settable rule kinds")
    p.add_argument("--ui", help="static directory to mount at /app")
    _add_common(p)

    p = sub.add_parser("take", help="take a test interactively in the terminal")
    p.add_argument("--model", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--max-questions", type=int)
    p.add_argument("--se-threshold", type=float)
    p.add_argument("--entropy-threshold", type=float)
    p.add_argument("--show-estimate", action="store_true", default=None)
    p.add_argument("--out", help="write the transcript JSON here")
    _add_common(p)

    return parser


_DEFAULTS = {
    "analyze": {"mode": "numeric", "factors": "", "subset": [], "json": False},
    "calibrate": {"model": "2pl", "tol": 1e-4, "max_iters": 100, "json": False},
    "learn-bn": {
        "mode": "numeric",
        "pseudocount": 0.1,
        "tol": 1e-4,
        "max_iters": 200,
        "json": False,
    },
    "train-nn": {
        "mode": "numeric",
        "hidden": "",
        "scheme": "zero_one",
        "missing_policy": "zero_fill",
        "epochs": 500,
        "lr": 0.5,
        "batch": None,
        "json": False,
    },
    "simulate": {"json": False},
    "serve": {
        "bind": "127.0.0.1:8000",
        "transcript_access": "finished",
        "stopping": [],
        "allow_stopping": "max_questions,se_threshold,entropy_threshold",
    },
    "take": {"show_estimate": False, "json": False},
}


def _merge_config(args: argparse.Namespace) -> dict:
    merged = dict(_DEFAULTS.get(args.command, {}))
    merged.setdefault("seed", 0)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_conf = json.load(fh)
        for key, value in file_conf.items():
            merged[key.replace("-", "_")] = value
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is not None:
            merged[key] = value
    return merged


def _emit(report: dict, conf: dict, human_lines: Sequence[str], report_path=None) -> None:
    if report_path:
        save_json_atomic(report, report_path)
    if conf.get("json"):
        print(json.dumps(report, indent=2))
    else:
        for line in human_lines:
            print(line)
        if report_path:
            print(f"report written to {report_path}")


def _load_inputs(conf: dict):
    bank = load_bank(conf["bank"])
    dataset = load_dataset(conf["data"], bank, mode=conf.get("mode", "numeric"))
    return bank, dataset


def _dataset_digest(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_analyze(conf: dict) -> int:
    bank, dataset = _load_inputs(conf)
    report: dict = {"seed": conf["seed"], "n_students": dataset.n_students}
    lines = [f"students: {dataset.n_students}, items: {dataset.n_items}"]

    alpha = cronbach_alpha(dataset)
    tier = reliability_tier(alpha)
    report["cronbach_alpha"] = alpha
    report["reliability_tier"] = tier.value
    lines.append(f"Cronbach's alpha: {alpha:.4f} ({tier.value})")

    scores = dataset.raw_scores()
    norm = normality_summary(scores)
    report["normality"] = {
        "skewness": norm.skewness,
        "excess_kurtosis": norm.excess_kurtosis,
        "looks_gaussian": norm.looks_gaussian,
    }
    lines.append(
        f"score skewness {norm.skewness:+.3f}, excess kurtosis {norm.excess_kurtosis:+.3f}"
        f" ({'roughly gaussian' if norm.looks_gaussian else 'not gaussian'})"
    )

    table = standard_score_table(scores, BUILTIN_SCALES)
    report["standard_scores"] = table
    lines.append("raw -> z / IQ (McCall area standardization):")
    for row in table[:: max(1, len(table) // 8)]:
        lines.append(f"  {row['raw']:6.1f}  z {row['z']:+6.2f}  IQ {row['IQ']:6.1f}")

    factors = [f for f in str(conf.get("factors", "")).split(",") if f]
    subsets = {}
    for spec_str in conf.get("subset") or []:
        name, _, ids = spec_str.partition("=")
        subsets[name] = [i for i in ids.split(",") if i]
    if factors:
        validity = validity_report(dataset, factors, subsets or None)
        report["validity"] = validity.to_payload()
        for score_name, rows in validity.tables.items():
            lines.append(f"correlations with {score_name}:")
            for row in rows:
                lines.append(
                    f"  {row.factor:>12}  r {row.r:+.3f}  p {row.p_value:.3g}  (n={row.n})"
                )
    _emit(report, conf, lines, report_path=conf.get("out"))
    return 0


def cmd_calibrate(conf: dict) -> int:
    conf.setdefault("mode", "boolean")
    bank, dataset = _load_inputs(conf)
    config = irt.CalibrationConfig(
        model=conf["model"], tol=conf["tol"], max_iters=conf["max_iters"]
    )
    result = irt.calibrate_mml(dataset, config=config)
    from .psychometrics import ScoreStats

    stats = ScoreStats.from_scores(dataset.raw_scores())
    payload = irt.params_to_payload(result.params)
    payload["score_stats"] = {"mean": stats.mean, "sd": stats.sd}
    envelope = make_envelope(
        "irt",
        payload,
        seed=conf["seed"],
        dataset_digest=_dataset_digest(conf["data"]),
        config={"model": conf["model"], "tol": conf["tol"], "max_iters": conf["max_iters"]},
    )
    save_model(envelope, conf["out"])
    if conf.get("log"):
        save_json_atomic(
            {
                "loglik_trace": result.loglik_trace,
                "converged": result.converged,
                "excluded": result.excluded,
                "warnings": result.warnings,
            },
            conf["log"],
        )
    report = {
        "seed": conf["seed"],
        "out": conf["out"],
        "items": len(result.params),
        "excluded": result.excluded,
        "converged": result.converged,
        "final_loglik": result.loglik_trace[-1],
    }
    _emit(
        report,
        conf,
        [
            f"calibrated {len(result.params)} items "
            f"({len(result.excluded)} excluded), converged={result.converged}",
            f"model written to {conf['out']}",
        ],
    )
    return 0


def _load_bn_initial(path) -> tuple[bn.BayesNet, Optional[bn.SkillWeights]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "format_version" in doc:
        envelope = load_model(path)
        if envelope.model_kind != "bn":
            raise CliError(f"{path} holds a {envelope.model_kind!r} model, need bn")
        return bn.net_from_payload(envelope.payload)
    return bn.net_from_payload(doc)


def cmd_learn_bn(conf: dict) -> int:
    bank, dataset = _load_inputs(conf)
    net, weights = _load_bn_initial(conf["model"])
    config = bn.LearnConfig(
        pseudocount=conf["pseudocount"], tol=conf["tol"], max_iters=conf["max_iters"]
    )
    result = bn.learn_em(net, dataset, config)
    violations = bn.enforce_ordinality_check(result.net)
    payload = bn.net_to_payload(result.net, weights)
    envelope = make_envelope(
        "bn",
        payload,
        seed=conf["seed"],
        dataset_digest=_dataset_digest(conf["data"]),
        config={
            "pseudocount": conf["pseudocount"],
            "tol": conf["tol"],
            "max_iters": conf["max_iters"],
        },
    )
    save_model(envelope, conf["out"])
    if conf.get("trace"):
        save_json_atomic(
            {"loglik_trace": result.loglik_trace, "converged": result.converged},
            conf["trace"],
        )
    report = {
        "seed": conf["seed"],
        "out": conf["out"],
        "iterations": result.iterations,
        "converged": result.converged,
        "final_loglik": result.loglik_trace[-1],
        "ordinality_violations": len(violations),
    }
    _emit(
        report,
        conf,
        [
            f"EM finished after {result.iterations} iterations, "
            f"loglik {result.loglik_trace[-1]:.3f}, converged={result.converged}",
            f"ordinality violations: {len(violations)}",
            f"model written to {conf['out']}",
        ],
    )
    return 0


def cmd_train_nn(conf: dict) -> int:
    bank, dataset = _load_inputs(conf)
    rows, targets = nn.training_rows_from_dataset(dataset)
    hidden = tuple(int(h) for h in str(conf["hidden"]).split(",") if h)
    spec = (
        nn.NetworkSpec(input_size=dataset.n_items, hidden_layers=hidden)
        if hidden
        else nn.NetworkSpec.default_for(dataset.n_items)
    )
    encoding = nn.AnswerEncoding(scheme=conf["scheme"], missing_policy=conf["missing_policy"])
    config = nn.TrainConfig(
        epochs=conf["epochs"],
        learning_rate=conf["lr"],
        batch_size=conf["batch"],
        seed=conf["seed"],
    )
    result = nn.train_backprop(spec, encoding, rows, targets, config)
    from .psychometrics import ScoreStats

    stats = ScoreStats.from_scores(targets)
    payload = nn.model_to_payload(
        spec,
        result.weights,
        result.encoding,
        dataset.item_ids,
        answer_probs=nn.empirical_answer_probs(dataset),
        training_meta={
            "seed": conf["seed"],
            "epochs": conf["epochs"],
            "best_epoch": result.best_epoch,
            "final_train_mse": result.train_loss[-1],
            "final_val_mse": result.val_loss[-1],
        },
    )
    payload["score_stats"] = {"mean": stats.mean, "sd": stats.sd}
    envelope = make_envelope(
        "nn",
        payload,
        seed=conf["seed"],
        dataset_digest=_dataset_digest(conf["data"]),
        config={"hidden": list(hidden), "epochs": conf["epochs"], "lr": conf["lr"]},
    )
    save_model(envelope, conf["out"])
    report = {
        "seed": conf["seed"],
        "out": conf["out"],
        "layers": list(spec.layer_sizes),
        "best_epoch": result.best_epoch,
        "final_train_mse": result.train_loss[-1],
    }
    _emit(
        report,
        conf,
        [
            f"trained {spec.layer_sizes} net, best epoch {result.best_epoch}, "
            f"train MSE {result.train_loss[-1]:.5f}",
            f"model written to {conf['out']}",
        ],
    )
    return 0


def _scenario_cohort(scenario: dict, seed: int):
    kind = scenario.get("kind", "irt")
    n = int(scenario.get("n_examinees", 100))
    if "model_path" in scenario:
        envelope = load_model(scenario["model_path"])
        if envelope.model_kind == "irt":
            params = irt.params_from_payload(envelope.payload)
            cohort = sim.sample_irt_cohort(params, n, seed)
            factory, bank = model_factory_from_envelope(envelope, cohort.bank)
            return factory, bank, cohort
        if envelope.model_kind == "bn":
            net, weights = bn.net_from_payload(envelope.payload)
            cohort = sim.sample_bn_cohort(net, n, seed)
            factory, bank = model_factory_from_envelope(envelope, cohort.bank)
            return factory, bank, cohort
        raise CliError(f"cannot build a generative cohort from a {envelope.model_kind!r} model")
    if kind != "irt":
        raise CliError("inline bank_spec scenarios support kind 'irt' only")
    spec = scenario.get("bank_spec", {})
    n_items = int(spec.get("n_items", 50))
    a_lo, a_hi = spec.get("a_range", [0.8, 2.0])
    b_sigma = float(spec.get("b_sigma", 1.0))
    c = float(spec.get("c", 0.0))
    import numpy as np

    rng = np.random.default_rng(sim.child_seed(seed, 10**6))
    params = {
        f"q{i + 1:03d}": irt.IrtItemParams(
            a=float(rng.uniform(a_lo, a_hi)), b=float(rng.standard_normal() * b_sigma), c=c
        )
        for i in range(n_items)
    }
    cohort = sim.sample_irt_cohort(params, n, seed)
    bank = cohort.bank

    def factory():
        from .adapters import IrtStudentModel

        return IrtStudentModel(params, bank)

    return factory, bank, cohort


def cmd_simulate(conf: dict) -> int:
    with open(conf["scenario"], "r", encoding="utf-8") as fh:
        scenario = json.load(fh)
    seed = conf["seed"] if conf.get("seed") is not None else int(scenario.get("seed", 0))
    factory, bank, cohort = _scenario_cohort(scenario, seed)
    stopping = tuple(StoppingRule.from_payload(r) for r in scenario.get("stopping", []))
    policies = tuple(scenario.get("policies", sim.POLICIES))
    report = sim.compare_policies(
        factory,
        bank,
        cohort,
        stopping,
        policies=policies,
        seed=seed,
        collect_predictions=bool(scenario.get("collect_predictions", False)),
    )
    payload = report.to_payload()
    if conf.get("csv"):
        rows = report.csv_rows()
        with open(conf["csv"], "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["policy", "examinee", "questions_to_stop"])
            writer.writeheader()
            writer.writerows(rows)
    lines = [f"seed {seed}, {len(cohort.members)} examinees"]
    for name, rep in report.policies.items():
        q1, med, q3 = rep.quartiles
        lines.append(
            f"  {name:>9}: questions-to-stop quartiles {q1:.1f}/{med:.1f}/{q3:.1f}"
            + (f", r(truth) {rep.pearson_r:+.3f}" if rep.pearson_r is not None else "")
            + (f", rank rho {rep.spearman_rho:+.3f}" if rep.spearman_rho is not None else "")
        )
    _emit(payload, conf, lines, report_path=conf.get("out"))
    return 0


def _parse_stopping_flags(specs: Sequence[str]) -> tuple[StoppingRule, ...]:
    rules = []
    for spec_str in specs:
        kind, _, value = spec_str.partition("=")
        rules.append(StoppingRule(kind=kind, value=float(value) if value else None))
    return tuple(rules)


def cmd_serve(conf: dict) -> int:
    from .service import ModelStore, ServiceSettings, serve

    host, _, port = str(conf["bind"]).partition(":")
    store = ModelStore.from_directory(conf["models_dir"])
    settings = ServiceSettings(
        transcript_access=conf["transcript_access"],
        allowed_client_stopping=tuple(
            k for k in str(conf["allow_stopping"]).split(",") if k
        ),
        default_stopping=_parse_stopping_flags(conf.get("stopping") or []),
    )
    print(f"serving models from {conf['models_dir']} on {host}:{port or 8000}")
    serve(store, settings, host=host or "127.0.0.1", port=int(port or 8000), ui_dir=conf.get("ui"))
    return 0


def _session_stopping(conf: dict) -> tuple[StoppingRule, ...]:
    rules = []
    if conf.get("max_questions") is not None:
        rules.append(StoppingRule("max_questions", conf["max_questions"]))
    if conf.get("se_threshold") is not None:
        rules.append(StoppingRule("se_threshold", conf["se_threshold"]))
    if conf.get("entropy_threshold") is not None:
        rules.append(StoppingRule("entropy_threshold", conf["entropy_threshold"]))
    return tuple(rules)


def cmd_take(conf: dict) -> int:
    envelope = load_model(conf["model"])
    bank = load_bank(conf["bank"])
    factory, effective_bank = model_factory_from_envelope(envelope, bank)
    session = TestSession(factory(), effective_bank, _session_stopping(conf))
    total = len(effective_bank.items)
    aborted = False
    try:
        while True:
            step = next_question(session)
            if step.finished:
                session.mark_finished(step.stop_reason)
                break
            item = effective_bank.item(step.question_id)
            print(f"\n[{len(session.asked) + 1}/{total}] {item.text or item.id}")
            for i, state in enumerate(item.answer_space):
                print(f"  {i}) {state}")
            while True:
                raw = input("answer> ").strip()
                try:
                    outcome = int(raw) if raw.isdigit() or raw.lstrip("-").isdigit() else raw
                    estimate = submit_answer(session, step.question_id, outcome)
                    break
                except Exception as exc:
                    print(f"  invalid answer: {exc}")
            if conf.get("show_estimate"):
                unc = f" +- {estimate.uncertainty:.3f}" if estimate.uncertainty is not None else ""
                score = (
                    f", expected score {estimate.expected_score:.1f}"
                    if estimate.expected_score is not None
                    else ""
                )
                print(f"  estimate [{estimate.kind}]{unc}{score}")
    except (KeyboardInterrupt, EOFError):
        aborted = True
        session.mark_finished("aborted")
        print("\ninterrupted; finalizing partial transcript")

    transcript = transcript_of(session, aborted=aborted)
    doc = transcript.to_payload()
    if conf.get("out"):
        save_json_atomic(doc, conf["out"])
        print(f"\ntranscript written to {conf['out']} ({len(transcript.records)} answers)")
    else:
        print(json.dumps(doc, indent=2))
    return 0


_COMMANDS = {
    "analyze": cmd_analyze,
    "calibrate": cmd_calibrate,
    "learn-bn": cmd_learn_bn,
    "train-nn": cmd_train_nn,
    "simulate": cmd_simulate,
    "serve": cmd_serve,
    "take": cmd_take,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        conf = _merge_config(args)
        return _COMMANDS[args.command](conf)
    except (CliError, DatasetError, UndefinedStatError, PersistenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # pragma: no cover - genuine runtime failures
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
