"""Command-line entry point: ``xreg <subcommand> ...``.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import Config, load_config, seed_all
from .errors import XRegError
from .metrics import report_csv, report_json, rmse, sweep_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; missing keys keep their defaults")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key by dotted path (repeatable)")
    p.add_argument("--seed", type=int, help="global seed (XREG_SEED also works; this flag wins)")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap (1 gives bitwise reproducibility)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xreg", description="Detection-free 2D-3D registration on synthetic desk scenes.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("config", help="show the effective configuration")
    _common(p)
    p.add_argument("--dump", action="store_true", help="print the full configuration as JSON")

    p = sub.add_parser("synth", help="render synthetic trajectories and write a pair dataset")
    _common(p)
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--no-labels", action="store_true", help="skip the per-pair coarse label files")

    p = sub.add_parser("train", help="train the matching network on the train split")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--log", help="JSON-lines training log (default: next to the checkpoint)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("match", help="dense correspondences for one pair")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--pair", required=True, help="pair id from pairs.json")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="trained network")
    src.add_argument("--oracle", action="store_true", help="use ground-truth oracle features")
    p.add_argument("--out", required=True, help="correspondence file (JSON lines)")

    p = sub.add_parser("register", help="camera pose from a correspondence file")
    _common(p)
    p.add_argument("correspondences", help="JSON-lines file with u, v, x, y, z[, score]")
    p.add_argument("--intrinsics", required=True, help="intrinsics JSON")
    p.add_argument("--out", help="pose JSON (4x4 cloud-to-camera); default stdout")
    p.add_argument("--gt", help="ground-truth cloud-to-camera pose for an RMSE report")
    p.add_argument("--cloud", help="cloud used for the RMSE report (default: the correspondence points)")

    for name, helptext in (("eval", "evaluate a checkpoint on a dataset split"),
                           ("oracle-eval", "evaluate oracle features on a dataset split")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--data", required=True, help="dataset directory")
        if name == "eval":
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", default="test" if name == "eval" else None,
                       help="split to evaluate (default: %(default)s; all pairs when unset)")
        p.add_argument("--out", required=True, help="report directory")
        p.add_argument("--no-plots", action="store_true")
        p.add_argument("--quiet", action="store_true")
    return parser


def _config(args) -> Config:
    try:
        cfg = load_config(args.config, args.set)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e)) from e
    if args.seed is not None:
        seed_all(cfg, args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg.threads = args.threads
    return cfg


def _thread_limit(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr, flush=True)


def load_model(path, cfg: Config | None = None):
    """Rebuild a :class:`MatchingNetwork` from a checkpoint written by ``train``."""
    from .neural.checkpoint import load_checkpoint
    from .neural.model import MatchingNetwork
    header, state = load_checkpoint(path)
    model_cfg = Config.from_dict(header["config"]) if header.get("config") else (cfg or Config())
    model = MatchingNetwork(model_cfg, int(header.get("seed") or 0))
    model.load_state_dict(state)
    return model, model_cfg


# subcommands -----------------------------------------------------------------

def cmd_config(args, cfg: Config) -> int:
    print(cfg.dumps())
    return 0


def cmd_synth(args, cfg: Config) -> int:
    from .dataset import synthesize, write_dataset
    pairs = synthesize(cfg)
    out = Path(args.out)
    write_dataset(out, pairs, cfg, labels=not args.no_labels)
    stats = {}
    for p in pairs:
        key = f"{p.split}/{p.meta.get('regime', 'all')}"
        s = stats.setdefault(key, {"pairs": 0, "depth": []})
        s["pairs"] += 1
        s["depth"].append(float(np.nanmean(p.depth.values)))
    summary = {k: {"pairs": v["pairs"], "mean_depth": float(np.mean(v["depth"]))} for k, v in sorted(stats.items())}
    io.write_json(out / "summary.json", {"pairs": len(pairs), "groups": summary})
    print(json.dumps({"pairs": len(pairs), "groups": summary}, sort_keys=True))
    return 0


def cmd_train(args, cfg: Config) -> int:
    from .dataset import read_dataset
    from .neural.checkpoint import save_checkpoint
    from .training import JsonlLog, train
    pairs = read_dataset(args.data, "train")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    echo = None if args.quiet else (lambda r, t: print(
        f"step {r['step']:5d}  coarse {r['coarse']:.4f}  fine {r['fine']:.4f}  total {r['total']:.4f}",
        file=sys.stderr, flush=True) if r["step"] % 50 == 0 else None)
    log = JsonlLog(log_path, echo)
    try:
        model = train(pairs, cfg, seed=cfg.train.seed, epochs=args.epochs, lr=args.lr, log=log, steps=args.steps)
    finally:
        log.close()
    save_checkpoint(out, model, cfg.train.seed, cfg.to_dict())
    records = [json.loads(line) for line in log_path.read_text().splitlines() if line.strip()]
    if records:
        from .plotting import plot_training
        plot_training(records, out.with_suffix(".loss.png"))
    _say(args, f"wrote {out} after {len(records)} steps")
    return 0


def _find_pair(root, pair_id: str):
    from .dataset import read_dataset
    for p in read_dataset(root):
        if p.pair_id == pair_id:
            return p
    raise XRegError(f"no pair {pair_id!r} in {root}")


def cmd_match(args, cfg: Config) -> int:
    from .dataset import prepare_pair
    from .oracle import oracle_features
    from .pipeline import match_features, network_features
    pair = _find_pair(args.data, args.pair)
    prep = prepare_pair(pair, cfg, with_overlap=args.oracle)
    if args.oracle:
        feats = oracle_features(prep, cfg.match.coarse_k, cfg.metrics.pir_tau, cfg.synth.oracle_fourier,
                                cfg.synth.oracle_scale)
    else:
        model, _ = load_model(args.checkpoint, cfg)
        feats = network_features(model, prep)
    _, dense = match_features(feats, prep, cfg)
    Path(args.out).write_text(dense.to_jsonl())
    print(json.dumps({"pair": pair.pair_id, "correspondences": len(dense)}, sort_keys=True))
    return 0


def cmd_register(args, cfg: Config) -> int:
    from .pipeline import ransac_config
    from .registration import pnp_ransac
    uv, xyz, _ = io.read_correspondences(args.correspondences)
    k = io.read_intrinsics(args.intrinsics)
    res = pnp_ransac(xyz, uv, k, ransac_config(cfg))
    text = io.pose_to_json(res.transform)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    info = {"inliers": int(res.num_inliers), "correspondences": len(uv), "mean_error": float(res.mean_error),
            "inlier_mask": [int(b) for b in res.inliers]}
    if args.gt:
        cloud = io.read_cloud(args.cloud).points if args.cloud else xyz
        info["rmse"] = rmse(cloud, res.transform, io.read_pose(args.gt))
    print(json.dumps(info, sort_keys=True), file=sys.stderr if not args.out else sys.stdout)
    return 0


def _write_report(out: Path, results, summary, sweep, plots: bool, levels: int, extra: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    recs = [r.record() for r in results]
    text = json.loads(report_json(recs, summary))
    for row, r in zip(text["per_pair"], recs):
        row["n_coarse"], row["n_dense"] = r["n_coarse"], r["n_dense"]
    text.update(extra)
    io.write_json(out / "report.json", text)
    (out / "pairs.csv").write_text(report_csv(recs))
    (out / "sweep.csv").write_text(sweep_csv(sweep))
    if plots:
        from .plotting import plot_levels, plot_pairs, plot_sweep
        plot_sweep(sweep, out / "sweep.png")
        plot_pairs(recs, out / "pairs.png")
        counts = {}
        for r in results:
            regime = r.meta.get("regime", "all")
            c = counts.setdefault(regime, np.zeros(levels))
            counts[regime] = c + np.bincount(r.coarse.level, minlength=levels)[:levels]
        plot_levels(counts, out / "levels.png")


def _evaluate(args, cfg: Config, model) -> int:
    from .dataset import read_dataset
    from .pipeline import evaluate_dataset
    pairs = read_dataset(args.data, args.split)

    def progress(r):
        _say(args, f"{r.pair_id}: IR {r.ir:.3f}  RMSE {r.rmse:.4f}  PIR {r.pir:.3f}  dense {len(r.dense)}")

    results, summary, sweep = evaluate_dataset(pairs, cfg, model, progress)
    _write_report(Path(args.out), results, summary, sweep, not args.no_plots, cfg.patch.pyramid_levels,
                  {"split": args.split or "all", "features": "oracle" if model is None else "network"})
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args, cfg: Config) -> int:
    model, model_cfg = load_model(args.checkpoint, cfg)
    # architecture comes from the checkpoint; matching and metric knobs from the command line
    cfg.model = model_cfg.model
    cfg.patch = model_cfg.patch
    cfg.camera = model_cfg.camera
    return _evaluate(args, cfg, model)


def cmd_oracle_eval(args, cfg: Config) -> int:
    return _evaluate(args, cfg, None)


COMMANDS = {"config": cmd_config, "synth": cmd_synth, "train": cmd_train, "match": cmd_match,
            "register": cmd_register, "eval": cmd_eval, "oracle-eval": cmd_oracle_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
        cfg = _config(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        with _thread_limit(cfg.threads):
            return COMMANDS[args.command](args, cfg)
    except (XRegError, OSError, ValueError, KeyError) as e:
        print(f"xreg {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
