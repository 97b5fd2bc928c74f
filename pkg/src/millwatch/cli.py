"""Command-line entry point: generation, training, evaluation, simulation.

Every command is reproducible: outputs are a pure function of (config, seed),
and each artifact embeds the resolved config snapshot that produced it.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training
divergence, 4 acceptance-threshold failure.
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .coordinator import export_incidents, load_fsm, milling_fsm
from .errors import ConfigError, DataError, MillwatchError, TrainingDivergedError
from .evalsim import (
    ConfusionMatrix,
    EvalConfig,
    check_delay_budget,
    delay_table,
    metrics_table,
    precision_recall_f1,
    run_baseline,
    simulate_deployment,
)
from .labels import CLASS_NAMES, STATE_NAMES
from .model import (
    EncoderClassifier,
    SEQUENCE_LEN,
    WINDOW_LEN,
    pretrain_upstream,
    train_end_to_end,
    training_config_from_dict,
    write_training_report,
)
from .nn import Network, load_layers, save_layers
from .stream import FilterSpec
from .synthgen import GenParams, TrialRecording, extract_sequence_samples, extract_steady_samples

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3
EXIT_THRESHOLD = 4

TRANSITION_KINDS = [
    (STATE_NAMES[i], STATE_NAMES[i + 1]) for i in range(len(STATE_NAMES) - 1)
]


def _gen_params(cfg, seed):
    g = cfg["gen"]
    return GenParams(
        mu0=g["mu0"], mu1=g["mu1"], sigma=g["sigma"],
        ripple_amp=g["ripple_amp"], ripple_hz=g["ripple_hz"],
        ripple_onset=g["ripple_onset"],
        fs=g["fs"], length=g["length"],
        base_durations=tuple(g["base_durations"]),
        duration_jitter=g["duration_jitter"],
        entry_ramp=g["entry_ramp"], exit_ramp=g["exit_ramp"],
        seed=seed,
    )


def trial_seeds(master_seed, count):
    """Stable per-trial integer seeds derived from the master seed."""
    state = np.random.SeedSequence(master_seed).generate_state(count, dtype=np.uint64)
    return [int(v) for v in state]


def generate_dataset(cfg, out_dir):
    """Write trial CSVs plus a manifest; idempotent given (config, seed)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = cfg["gen"]
    n_trials, heldout = int(g["trials"]), int(g["heldout"])
    if heldout > n_trials:
        raise ConfigError("gen.heldout cannot exceed gen.trials")
    seeds = trial_seeds(cfg["seed"], n_trials)
    entries = []
    from .synthgen import generate_trial

    for i, seed in enumerate(seeds):
        trial = generate_trial(_gen_params(cfg, seed))
        name = f"trial_{i:03d}.csv"
        trial.to_csv(out_dir / name)
        split = "heldout" if i >= n_trials - heldout else "train"
        entries.append({"file": name, "seed": seed, "split": split})
    manifest = {
        "seed": cfg["seed"],
        "fs": g["fs"],
        "config": cfgmod.snapshot(cfg),
        "trials": entries,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    manifest["_dir"] = path.parent
    return manifest


def load_trials(manifest, split=None):
    trials = []
    for entry in manifest["trials"]:
        if split is not None and entry["split"] != split:
            continue
        trials.append(TrialRecording.from_csv(manifest["_dir"] / entry["file"]))
    if split is not None and not trials:
        raise DataError(f"manifest has no trials with split={split!r}")
    return trials


def _extract_steady(cfg, trials):
    e = cfg["extract"]
    return extract_steady_samples(
        trials, window=cfg["windowing"]["window"], margin=e["margin"],
        stride=e["steady_stride"], max_per_class=e["steady_max_per_class"],
        seed=cfg["seed"],
    )


def _extract_sequences(cfg, trials, balance=True):
    e = cfg["extract"]
    w = cfg["windowing"]
    return extract_sequence_samples(
        trials, span=w["sequence_len"] * w["window"], stride=e["sequence_stride"],
        window=w["window"], max_per_class=e["sequence_max_per_class"],
        balance=balance, seed=cfg["seed"],
    )


def _eval_config(cfg):
    f = cfg["filter"]
    s = cfg["simulate"]
    return EvalConfig(
        epsilon=s["epsilon"], stride=s["stride"], match_horizon=s["match_horizon"],
        filter_spec=FilterSpec(kind=f["kind"], width=f["width"]),
    )


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen(args, cfg):
    manifest = generate_dataset(cfg, args.out)
    print(f"wrote {len(manifest['trials'])} trials + manifest to {args.out}")
    return EXIT_OK


def cmd_pretrain(args, cfg):
    manifest = load_manifest(args.data)
    trials = load_trials(manifest, split="train")
    windows, labels = _extract_steady(cfg, trials)
    tc = training_config_from_dict({**cfg["train"], "seed": cfg["seed"],
                                    "verbose": args.verbose})
    net, report = pretrain_upstream(windows, labels, tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_layers(out / "upstream.swnn", net.layers)
    write_training_report(out / "pretrain_report.csv", report, cfgmod.snapshot(cfg))
    _write_json(out / "upstream.config.json", cfgmod.snapshot(cfg))
    val = [r for r in report if r["split"] == "val"]
    print(
        f"pretrained upstream on {len(windows)} windows; "
        f"final val acc {val[-1]['accuracy']:.3f}; saved to {out / 'upstream.swnn'}"
    )
    return EXIT_OK


def cmd_train(args, cfg):
    manifest = load_manifest(args.data)
    trials = load_trials(manifest, split="train")
    upstream_path = Path(args.upstream)
    if not upstream_path.exists():
        raise DataError(f"upstream model not found: {upstream_path}")
    upstream = Network(load_layers(upstream_path))
    signals, labels = _extract_sequences(cfg, trials)
    tc = training_config_from_dict({**cfg["train"], "seed": cfg["seed"],
                                    "verbose": args.verbose})
    model, report = train_end_to_end(signals, labels, upstream, tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.swnn")
    write_training_report(out / "train_report.csv", report, cfgmod.snapshot(cfg))
    _write_json(out / "model.config.json",
                {"config": cfgmod.snapshot(cfg), "model_hash": model.hash()})
    val = [r for r in report if r["split"] == "val"]
    print(
        f"trained end-to-end on {len(signals)} sequences; "
        f"final val acc {val[-1]['accuracy']:.3f}; model hash {model.hash()[:16]}..."
    )
    return EXIT_OK


def _predict_classes(model, signals, batch=256):
    x = signals.reshape(len(signals), SEQUENCE_LEN, 1, WINDOW_LEN)
    preds = []
    for start in range(0, len(x), batch):
        scores = model.forward(x[start:start + batch], train=False)
        preds.append(scores.argmax(axis=1))
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


def cmd_eval(args, cfg):
    model = EncoderClassifier.load(args.model)
    manifest = load_manifest(args.data)
    trials = load_trials(manifest, split=args.split)
    signals, labels = _extract_sequences(cfg, trials, balance=False)
    if len(signals) == 0:
        raise DataError("evaluation produced an empty test set")
    preds = _predict_classes(model, signals)
    cm = ConfusionMatrix.from_predictions(labels, preds, CLASS_NAMES)
    per_class, macro = precision_recall_f1(cm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = metrics_table(per_class, macro)
    (out / "metrics.txt").write_text(table + "\n")
    cm.to_csv(out / "confusion.csv")
    _write_json(
        out / "metrics.json",
        {
            "config": cfgmod.snapshot(cfg),
            "model_hash": model.hash(),
            "split": args.split,
            "samples": int(len(signals)),
            "per_class": [
                {
                    "class": m.name, "precision": m.precision, "recall": m.recall,
                    "f1": m.f1, "support": m.support, "degenerate": m.degenerate,
                }
                for m in per_class
            ],
            "macro": macro,
        },
    )
    print(table)
    if args.min_macro_f1 is not None and macro["f1"] < args.min_macro_f1:
        print(f"macro F1 {macro['f1']:.3f} below threshold {args.min_macro_f1}")
        return EXIT_THRESHOLD
    return EXIT_OK


def _simulate_one(model_path, fsm_path, trial_path, eval_cfg, trial_id=None):
    model = EncoderClassifier.load(model_path)
    fsm = load_fsm(fsm_path) if fsm_path else milling_fsm()
    trial = TrialRecording.from_csv(trial_path)
    return simulate_deployment(model, fsm, trial, eval_cfg, trial_id=trial_id)


def _simulate_worker(payload):
    model_path, fsm_path, trial_path, sim_cfg, filt = payload
    eval_cfg = EvalConfig(
        epsilon=sim_cfg["epsilon"], stride=sim_cfg["stride"],
        match_horizon=sim_cfg["match_horizon"],
        filter_spec=FilterSpec(kind=filt["kind"], width=filt["width"]),
    )
    stem = Path(trial_path).stem
    report = _simulate_one(model_path, fsm_path, trial_path, eval_cfg, trial_id=stem)
    return stem, report


def _run_simulations(args, cfg, trial_paths):
    payloads = [
        (args.model, args.fsm, str(p), cfg["simulate"], cfg["filter"])
        for p in trial_paths
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_simulate_worker, payloads))
    else:
        results = [_simulate_worker(p) for p in payloads]
    return sorted(results, key=lambda item: item[0])


def cmd_simulate(args, cfg):
    manifest = load_manifest(args.data)
    paths = [
        manifest["_dir"] / e["file"]
        for e in manifest["trials"]
        if e["split"] == args.split
    ]
    if not paths:
        raise DataError(f"manifest has no trials with split={args.split!r}")
    results = _run_simulations(args, cfg, paths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eval_cfg = _eval_config(cfg)
    reports = []
    budget_ok = True
    for stem, report in results:
        reports.append(report)
        payload = report.to_dict()
        payload["config"]["run"] = cfgmod.snapshot(cfg)
        budget = check_delay_budget(report, eval_cfg)
        payload["delay_budget"] = {
            "epsilon": eval_cfg.epsilon,
            "passed": budget["passed"],
        }
        budget_ok = budget_ok and budget["passed"]
        _write_json(out / f"report_{stem}.json", payload)
    table = delay_table(reports, TRANSITION_KINDS)
    (out / "delays.txt").write_text(table + "\n")
    delays = [d for r in reports for d in r.delays]
    summary = {
        "config": cfgmod.snapshot(cfg),
        "trials": [r.trial_id for r in reports],
        "mean_abs_delay": float(np.mean([abs(d) for d in delays])) if delays else None,
        "all_within_epsilon": budget_ok,
        "committed_paths": {r.trial_id: r.committed_path for r in reports},
    }
    _write_json(out / "summary.json", summary)
    print(table)
    print(f"mean |delay| = {summary['mean_abs_delay']}")
    if args.enforce_epsilon and not budget_ok:
        print("delay budget exceeded")
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_compare(args, cfg):
    manifest = load_manifest(args.data)
    paths = [
        manifest["_dir"] / e["file"]
        for e in manifest["trials"]
        if e["split"] == args.split
    ]
    if not paths:
        raise DataError(f"manifest has no trials with split={args.split!r}")
    eval_cfg = _eval_config(cfg)
    upstream_path = Path(args.baseline)
    if not upstream_path.exists():
        raise DataError(f"baseline model not found: {upstream_path}")
    baseline_net = Network(load_layers(upstream_path))

    proposed = [r for _, r in _run_simulations(args, cfg, paths)]
    baseline = []
    for p in paths:
        trial = TrialRecording.from_csv(p)
        baseline.append(run_baseline(baseline_net, trial, eval_cfg, STATE_NAMES, trial_id=p.stem))

    def mean_abs(reports):
        delays = [abs(d) for r in reports for d in r.delays]
        return float(np.mean(delays)) if delays else float("nan")

    proposed_mean = mean_abs(proposed)
    baseline_mean = mean_abs(baseline)
    winner = "proposed" if proposed_mean <= baseline_mean else "baseline"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = (
        "proposed system delays (s)\n" + delay_table(proposed, TRANSITION_KINDS)
        + "\n\nbaseline CNN delays (s)\n" + delay_table(baseline, TRANSITION_KINDS)
        + f"\n\nmean |delay|: proposed {proposed_mean:.3f} s, "
        f"baseline {baseline_mean:.3f} s -> {winner} is lower\n"
    )
    (out / "comparison.txt").write_text(text)
    _write_json(
        out / "comparison.json",
        {
            "config": cfgmod.snapshot(cfg),
            "proposed_mean_abs_delay": proposed_mean,
            "baseline_mean_abs_delay": baseline_mean,
            "lower_mean_abs_delay": winner,
            "proposed": [r.to_dict()["summary"] for r in proposed],
            "baseline": [r.to_dict()["summary"] for r in baseline],
        },
    )
    print(text)
    return EXIT_OK


def cmd_fsm_check(args, cfg):
    fsm = load_fsm(args.path)
    print(
        f"{args.path}: OK ({len(fsm.states)} states, {len(fsm.events)} events, "
        f"{len(fsm.transitions)} transitions, {fsm.num_classes} classes)"
    )
    return EXIT_OK


def cmd_export_incidents(args, cfg):
    eval_cfg = _eval_config(cfg)
    fsm = load_fsm(args.fsm) if args.fsm else milling_fsm()
    model = EncoderClassifier.load(args.model)
    trial = TrialRecording.from_csv(args.trial)
    report = simulate_deployment(model, fsm, trial, eval_cfg, keep_windows=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_incidents(report._coordinator, out)
    print(f"exported {len(report.incidents)} incidents to {out}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    parser = _Parser(prog="millwatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--set", action="append", dest="overrides", metavar="KEY=VALUE",
                       help="dotted config override, e.g. train.epochs=5")
        p.add_argument("--jobs", type=int, default=1, help="worker cap for parallel stages")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("gen", help="generate synthetic trials + manifest")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("pretrain", help="pretrain the upstream encoder")
    common(p)
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="end-to-end training of both stages")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--upstream", required=True, help="pretrained upstream .swnn")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="per-class metrics on a trial split")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="heldout")
    p.add_argument("--out", required=True)
    p.add_argument("--min-macro-f1", type=float, default=None,
                   help="exit 4 when macro F1 falls below this")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("simulate", help="deployment simulation with the FSM guard")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="heldout")
    p.add_argument("--fsm", default=None, help="FSM definition JSON (default: shipped milling FSM)")
    p.add_argument("--out", required=True)
    p.add_argument("--enforce-epsilon", action="store_true",
                   help="exit 4 when any delay exceeds epsilon or a transition is missed")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("compare", help="proposed system vs single-stage baseline CNN")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--baseline", required=True, help="4-class upstream .swnn")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="heldout")
    p.add_argument("--fsm", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("fsm-check", help="validate an FSM definition file")
    common(p)
    p.add_argument("path")
    p.set_defaults(fn=cmd_fsm_check)

    p = sub.add_parser("export-incidents", help="simulate a trial and export incidents")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--trial", required=True, help="trial CSV")
    p.add_argument("--fsm", default=None)
    p.add_argument("--out", required=True, help="incident archive path")
    p.set_defaults(fn=cmd_export_incidents)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        cfg = cfgmod.load_config(args.config)
        cfg = cfgmod.apply_overrides(cfg, args.overrides)
        if args.seed is not None:
            cfg["seed"] = args.seed
        return args.fn(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MillwatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
