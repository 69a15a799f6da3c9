"""Command-line entry point: ``rffi <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from rffi.harness.experiments import EXPERIMENTS, ExperimentSpec, run_experiment
from rffi.harness.report import FORMATS, emit_report, load_report
from rffi.impairment import PopulationSpec, default_ranges
from rffi.models import ARCHITECTURES, ModelSpec, build_model, load_model
from rffi.pipeline.dataset import augment_offline, generate_dataset, load_dataset, save_dataset
from rffi.pipeline.inference import InferenceHistory, config_for_length, fuse_multi_packet, packet_probs
from rffi.pipeline.training import TrainConfig, TrainingDivergence, train
from rffi.waveform import LoRaConfig, samples_per_preamble

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rffi", description="LoRa radio-frequency fingerprint identification toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a simulated preamble dataset")
    s.add_argument("--devices", type=int, default=10)
    s.add_argument("--sfs", type=_int_list, default=[7, 8, 9])
    s.add_argument("--per-sf", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", choices=("train", "test", "val"), default="train")
    s.add_argument("--population-seed", type=int, default=None,
                   help="device population seed (defaults to --seed)")
    s.add_argument("--no-transient", action="store_true")
    s.add_argument("--out", required=True)

    a = sub.add_parser("augment", help="offline AWGN augmentation of a stored dataset")
    a.add_argument("--dataset", required=True)
    a.add_argument("--copies", type=int, default=1)
    a.add_argument("--snr-min", type=float, default=0.0)
    a.add_argument("--snr-max", type=float, default=40.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a classifier")
    t.add_argument("--arch", choices=ARCHITECTURES, required=True)
    t.add_argument("--aug", choices=("none", "offline", "online"), default="online")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--copies", type=int, default=1)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--scale", choices=("desk", "paper"), default="desk")
    t.add_argument("--history", help="CSV path for the training curve")

    i = sub.add_parser("infer", help="classify preambles, optionally fusing packets per stream")
    i.add_argument("--model", required=True)
    i.add_argument("--iq-file", required=True,
                   help="little-endian float32 interleaved I/Q; one or more whole preambles of one SF")
    i.add_argument("--sf", type=int, help="spreading factor; without it the file is read as a single preamble")
    i.add_argument("--stream-key", default="default")
    i.add_argument("--n-pkt", type=int, default=1)
    i.add_argument("--state", help="JSON file holding the fusion history across calls")

    e = sub.add_parser("experiment", help="run one experiment of the evaluation matrix")
    e.add_argument("--kind", choices=EXPERIMENTS, required=True)
    e.add_argument("--config", help="JSON file mirroring ExperimentSpec")
    e.add_argument("--out", help="output directory (overrides the config)")
    e.add_argument("--formats", default="csv,json,svg")
    e.add_argument("--realistic-sync", action="store_true",
                   help="resynchronise noisy captures and count detection failures as errors")

    r = sub.add_parser("report", help="re-render a report JSON")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--formats", default="csv,json,svg")
    r.add_argument("--out", help="output directory (defaults to the input's directory)")
    return p


def _formats(text: str) -> tuple[str, ...]:
    fmts = tuple(f.strip() for f in text.split(",") if f.strip())
    bad = set(fmts) - set(FORMATS)
    if not fmts or bad:
        raise UsageError(f"formats must be drawn from {','.join(FORMATS)}")
    return fmts


def cmd_synth(args) -> int:
    if args.devices < 2 or args.per_sf < 1 or not args.sfs:
        raise UsageError("need --devices >= 2, --per-sf >= 1 and at least one SF")
    pop_seed = args.seed if args.population_seed is None else args.population_seed
    pop = PopulationSpec(k_devices=args.devices, ranges=default_ranges(), seed=pop_seed)
    ds = generate_dataset(pop, tuple(args.sfs), args.per_sf, args.seed, args.split, not args.no_transient)
    save_dataset(ds, args.out)
    print(json.dumps({"records": len(ds), "out": str(args.out)}))
    return EXIT_OK


def cmd_augment(args) -> int:
    if args.copies < 1 or args.snr_min > args.snr_max:
        raise UsageError("need --copies >= 1 and --snr-min <= --snr-max")
    ds = load_dataset(args.dataset)
    out = augment_offline(ds, (args.snr_min, args.snr_max), args.copies, args.seed)
    save_dataset(out, args.out)
    print(json.dumps({"records": len(out), "out": str(args.out)}))
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    model = build_model(ModelSpec(args.arch, ds.k_devices, args.scale, seed=args.seed))
    cfg = TrainConfig(augmentation=args.aug, copies=args.copies, max_epochs=args.epochs, seed=args.seed)
    model, history = train(model, ds, cfg)
    model.save(args.out)
    if args.history:
        history.write_csv(args.history)
    print(json.dumps({"epochs": len(history.rows), "best_val_loss": model.metadata["final_val_loss"]}))
    return EXIT_OK


def _read_iq(path) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if raw.size == 0 or raw.size % 2:
        raise ValueError(f"{path} does not hold interleaved I/Q pairs")
    return (raw[0::2] + 1j * raw[1::2]).astype(np.complex128)


def cmd_infer(args) -> int:
    if args.n_pkt < 1:
        raise UsageError("--n-pkt must be >= 1")
    model = load_model(args.model)
    iq = _read_iq(args.iq_file)
    if args.sf is not None:
        config = LoRaConfig(args.sf)
    else:
        # SF7 lengths divide SF8/SF9 lengths, so only a single preamble is unambiguous
        try:
            config = config_for_length(iq.size)
        except ValueError:
            raise UsageError("file holds several preambles or an unknown length; pass --sf")
    length = samples_per_preamble(config)
    if iq.size % length:
        raise ValueError(f"{iq.size} samples is not a multiple of the SF{config.sf} preamble ({length})")
    packets = iq.reshape(-1, length)

    history = InferenceHistory(args.n_pkt)
    if args.state and Path(args.state).exists():
        history = InferenceHistory.from_dict(json.loads(Path(args.state).read_text()))
        if history.n_pkt != args.n_pkt:
            history = InferenceHistory(args.n_pkt)
    probs = packet_probs(model, packets, config)
    for p in probs:
        label, fused = fuse_multi_packet(history, p, args.stream_key)
        print(json.dumps({
            "stream": args.stream_key,
            "label": int(np.argmax(p)),
            "probs": [round(float(v), 6) for v in p],
            "fused_label": label,
            "fused_probs": [round(float(v), 6) for v in fused],
        }))
    if args.state:
        Path(args.state).parent.mkdir(parents=True, exist_ok=True)
        Path(args.state).write_text(json.dumps(history.to_dict()))
    return EXIT_OK


def cmd_experiment(args) -> int:
    fmts = _formats(args.formats)
    d = {}
    if args.config:
        d = json.loads(Path(args.config).read_text())
        if not isinstance(d, dict):
            raise UsageError("config must be a JSON object")
    d["experiment"] = args.kind
    if args.out:
        d["output_dir"] = args.out
    if args.realistic_sync:
        d["realistic_sync"] = True
    try:
        spec = ExperimentSpec.from_dict(d)
    except TypeError as exc:
        raise UsageError(f"bad experiment config: {exc}")
    report = run_experiment(spec)
    for path in emit_report(report, spec.output_dir, fmts):
        print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    fmts = _formats(args.formats)
    report = load_report(args.inp)
    out = args.out or str(Path(args.inp).parent)
    for path in emit_report(report, out, fmts):
        print(path)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "augment": cmd_augment,
    "train": cmd_train,
    "infer": cmd_infer,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rffi: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"rffi: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"rffi: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
