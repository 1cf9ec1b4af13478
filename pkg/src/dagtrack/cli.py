"""Command-line interface: synth / train / track / eval / gradcheck / demo.

Every run writes a run.json (command, seed, config hash, versions,
backend) into the output directory so results can be reproduced from
the recorded inputs. Exit codes: 0 success, 1 usage error, 2 runtime
failure, 3 gradient-check failure.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__, checkpoint, evaluation, gradcheck, model, seqio, tracker
from .backend import backend_name
from .errors import ConfigError, DagtrackError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    p = _Parser(prog="dagtrack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command")

    def common(sp, out_required=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("synth", help="write a synthetic sequence to disk")
    common(sp)

    sp = sub.add_parser("train", help="multi-domain training; writes checkpoint + log")
    common(sp)
    sp.add_argument("--ablate-rnn", action="store_true",
                    help="disable recurrent fusion (CNN-only ablation)")

    sp = sub.add_parser("track", help="run the tracker over a sequence")
    sp.add_argument("sequence", help="sequence directory")
    sp.add_argument("--checkpoint", required=True)
    common(sp)

    sp = sub.add_parser("eval", help="score a trajectory against ground truth")
    sp.add_argument("sequence", help="sequence directory with full ground truth")
    sp.add_argument("--trajectory", required=True, help="trajectory CSV from `track`")
    common(sp)

    sp = sub.add_parser("gradcheck", help="run the finite-difference suite")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--full", action="store_true",
                    help="check every coordinate in the end-to-end suite")
    sp.add_argument("--out", help="optional output directory for the report")

    sp = sub.add_parser("demo", help="synth -> train -> track -> eval at tiny scale")
    common(sp)
    sp.add_argument("--ablate-rnn", action="store_true")
    return p


def _load_config(path, default=None):
    if path is None:
        return dict(default or {})
    return checkpoint.load_json_config(path)


def _write_run_json(out_dir, command, seed, cfg_dict):
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "command": command,
        "seed": seed,
        "config_hash": checkpoint.config_hash(cfg_dict),
        "package_version": __version__,
        "checkpoint_format_version": checkpoint.VERSION,
        "backend": backend_name(),
    }
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def _dataclass_from(cls, d, context):
    known = {f.name for f in dataclasses.fields(cls)}
    checkpoint.take_keys(d, known, context)
    fixed = {}
    for f in dataclasses.fields(cls):
        if f.name in d:
            v = d[f.name]
            fixed[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**fixed)


# ---- subcommands -------------------------------------------------------


def _cmd_synth(args):
    cfg = _load_config(args.config)
    spec = _dataclass_from(seqio.SynthConfig, cfg, "synth config").validate()
    seq = seqio.synth_sequence(spec, seed=args.seed)
    seqio.save_sequence(seq, args.out)
    _write_run_json(args.out, "synth", args.seed, cfg)
    print(f"wrote {len(seq)} frames to {args.out}")
    return 0


_TRAIN_KEYS = ("net", "tiny", "domains", "sequences", "iterations",
               "pos_per_domain", "neg_per_domain", "frame_step")


def _train_net_config(cfg, ablate):
    net_overrides = dict(cfg.get("net", {}))
    if cfg.get("tiny", True):
        known = {f.name for f in dataclasses.fields(model.NetConfig)}
        checkpoint.take_keys(net_overrides, known, "train config: net")
        net_cfg = model.tiny_config(**{
            k: tuple(v) if isinstance(v, list) else v for k, v in net_overrides.items()
        })
    else:
        net_cfg = model.NetConfig.from_dict(net_overrides)
    if ablate:
        net_cfg = dataclasses.replace(net_cfg, fuse=(False,) * len(net_cfg.fuse))
    return net_cfg


def _train_domains(cfg, net_cfg, seed):
    rng = np.random.default_rng(seed + 1)
    n_pos = cfg.get("pos_per_domain", 48)
    n_neg = cfg.get("neg_per_domain", 120)
    step = cfg.get("frame_step", 1)
    seqs = []
    if "sequences" in cfg:
        for path in cfg["sequences"]:
            seqs.append((seqio.load_sequence(path), None))
    else:
        specs = cfg.get("domains", [{"seed_offset": i} for i in range(3)])
        for i, spec in enumerate(specs):
            spec = dict(spec)
            off = spec.pop("seed_offset", i)
            synth_cfg = _dataclass_from(
                seqio.SynthConfig,
                {"num_frames": 6, "num_distractors": 1, "object_size": 15,
                 "width": 96, "height": 72, **spec},
                f"train config: domains[{i}]",
            ).validate()
            seqs.append(seqio.synth_sequence(synth_cfg, seed=seed + 100 + off,
                                             return_layout=True))
    return [
        tracker.domain_from_sequence(s, net_cfg.input_size, n_pos, n_neg, rng,
                                     frame_step=step, layout=layout)
        for s, layout in seqs
    ]


def _cmd_train(args):
    cfg = _load_config(args.config)
    checkpoint.take_keys(cfg, _TRAIN_KEYS, "train config")
    net_cfg = _train_net_config(cfg, args.ablate_rnn)
    domains = _train_domains(cfg, net_cfg, args.seed)
    net_cfg = dataclasses.replace(net_cfg, num_domains=len(domains))
    net = model.build_network(net_cfg, seed=args.seed)
    model.set_input_mean(net, domains)
    iterations = cfg.get("iterations", 200)
    rows = model.train_multidomain(net, domains, iterations, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "train_log.csv"), "w") as f:
        f.write("iteration,domain,loss,accuracy\n")
        for r in rows:
            f.write(f"{r.iteration},{r.domain},{r.loss:.6f},{r.accuracy:.4f}\n")
    ckpt = os.path.join(args.out, "net.ckpt")
    checkpoint.save_checkpoint(net, ckpt, meta={"iterations": len(rows), "seed": args.seed})
    _write_run_json(args.out, "train", args.seed, cfg)
    accs = [model.domain_accuracy(net, d, k) for k, d in enumerate(domains)]
    print(f"trained {len(rows)} iterations; per-domain accuracy "
          + ", ".join(f"{a:.3f}" for a in accs))
    print(f"checkpoint: {ckpt}")
    return 0


def _tracking_configs(cfg):
    pc = _dataclass_from(tracker.ParticleConfig, dict(cfg.get("particle", {})),
                         "track config: particle").validate()
    uc = _dataclass_from(tracker.UpdateConfig, dict(cfg.get("update", {})),
                         "track config: update").validate()
    return pc, uc


def _cmd_track(args):
    cfg = _load_config(args.config)
    checkpoint.take_keys(cfg, ("particle", "update"), "track config")
    pc, uc = _tracking_configs(cfg)
    net, _meta = checkpoint.load_checkpoint(args.checkpoint)
    if net.config.num_domains > 1:
        net = model.specialize_for_tracking(net, seed=args.seed)
    seq = seqio.load_sequence(args.sequence)
    result = tracker.run_tracker(net, seq, pc, uc, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "trajectory.csv")
    tracker.trajectory_to_csv(result, csv_path)
    tracker.trajectory_to_json(
        result, os.path.join(args.out, "trajectory.json"),
        seed=args.seed, config_hash=checkpoint.config_hash(cfg), name=seq.name,
    )
    _write_run_json(args.out, "track", args.seed, cfg)
    print(f"tracked {len(seq)} frames; trajectory: {csv_path}")
    return 0


def _cmd_eval(args):
    cfg = _load_config(args.config)
    checkpoint.take_keys(cfg, (), "eval config")
    seq = seqio.load_sequence(args.sequence)
    if len(seq.boxes) != len(seq):
        raise ConfigError("eval needs full ground truth, one box per frame")
    boxes, scores = tracker.load_trajectory_csv(args.trajectory)
    traj = evaluation.Trajectory.from_boxes(boxes, scores)
    gt = evaluation.Trajectory.from_boxes(seq.boxes)
    report = evaluation.compute_metrics(traj, gt)
    path = evaluation.save_metric_report(report, args.out)
    _write_run_json(args.out, "eval", args.seed, cfg)
    print(f"precision@20 {report.precision_at_20:.4f}  "
          f"success AUC {report.success_auc:.4f}  report: {path}")
    return 0


def _cmd_gradcheck(args):
    results = gradcheck.run_gradcheck(seed=args.seed, full=args.full)
    failed = False
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed = failed or not r.passed
        line = f"{r.name:24s} max rel err {r.max_err:.3e}  tol {r.tol:g}  {status}"
        lines.append(line)
        print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.txt"), "w") as f:
            f.write("\n".join(lines) + "\n")
        _write_run_json(args.out, "gradcheck", args.seed, {"full": args.full})
    return 3 if failed else 0


def _cmd_demo(args):
    out = args.out
    os.makedirs(out, exist_ok=True)
    seed = args.seed
    spec = seqio.SynthConfig(num_frames=20, num_distractors=1, object_size=15,
                             width=96, height=72, max_speed=2.0)
    seq = seqio.synth_sequence(spec, seed=seed)
    seq_dir = os.path.join(out, "sequence")
    seqio.save_sequence(seq, seq_dir)

    net_cfg = model.tiny_config(num_domains=2)
    if args.ablate_rnn:
        net_cfg = dataclasses.replace(net_cfg, fuse=(False,) * len(net_cfg.fuse))
    net = model.build_network(net_cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    domains = []
    for i in range(2):
        train_seq, layout = seqio.synth_sequence(
            seqio.SynthConfig(num_frames=6, num_distractors=1, object_size=15,
                              width=96, height=72),
            seed=seed + 100 + i, return_layout=True,
        )
        domains.append(tracker.domain_from_sequence(train_seq, net_cfg.input_size,
                                                    48, 120, rng, layout=layout))
    model.set_input_mean(net, domains)
    model.train_multidomain(net, domains, 120, seed=seed)
    ckpt = os.path.join(out, "net.ckpt")
    checkpoint.save_checkpoint(net, ckpt, meta={"seed": seed})

    tnet = model.specialize_for_tracking(net, seed=seed)
    pc = tracker.ParticleConfig(num_candidates=64)
    uc = tracker.UpdateConfig(first_iters=10)
    result = tracker.run_tracker(tnet, seq, pc, uc, seed=seed)
    tracker.trajectory_to_csv(result, os.path.join(out, "trajectory.csv"))
    tracker.trajectory_to_json(result, os.path.join(out, "trajectory.json"),
                               seed=seed, config_hash=checkpoint.config_hash({}),
                               name=seq.name)

    traj = evaluation.Trajectory.from_boxes(result.boxes, result.scores)
    gt = evaluation.Trajectory.from_boxes(seq.boxes)
    report = evaluation.compute_metrics(traj, gt)
    evaluation.save_metric_report(report, out)
    _write_run_json(out, "demo", seed, {"ablate_rnn": args.ablate_rnn})
    print(f"demo: precision@20 {report.precision_at_20:.4f}  "
          f"success AUC {report.success_auc:.4f}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "demo": _cmd_demo,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as e:  # --help and friends
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except DagtrackError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
