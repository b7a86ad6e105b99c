"""``slslr`` command line: synthetic data, pretraining, boundary search, evaluation."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config, resolve

log = logging.getLogger("slslr")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _hash_tree(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): _sha256(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "run.json"
    }


def _input_digest(path: Path) -> str:
    for name in ("manifest.json", "checkpoint.json"):
        if (path / name).is_file():
            return _sha256(path / name)
    return _sha256(path) if path.is_file() else ""


def write_run_json(out: Path, command: str, cfg: RunConfig | None, inputs: dict, extra: dict | None = None):
    doc = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict() if cfg is not None else None,
        "inputs": {k: {"path": str(v), "sha256": _input_digest(Path(v))} for k, v in inputs.items() if v},
        "artifacts": _hash_tree(out),
    }
    if extra:
        doc.update(extra)
    (out / "run.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n")


# ----------------------------------------------------------------- commands


def _config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config, args.profile)
    else:
        cfg = resolve({}, args.profile)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for name in ("train", "test", "checkpoint"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg.data, name, v)
    if getattr(args, "out", None) is not None:
        cfg.output_dir = args.out
    if getattr(args, "epochs", None) is not None:
        cfg.pretrain.epochs = args.epochs
    if getattr(args, "mode", None) is not None:
        cfg.augmentation.mode = args.mode
    return cfg


def _require(cfg: RunConfig, *names):
    for name in names:
        p = getattr(cfg.data, name)
        if p is None:
            raise UsageError(f"missing --{name} (or data.{name} in the config)")
        if not Path(p).exists():
            raise UsageError(f"{name} path does not exist: {p}")


def _load_data(path):
    from .data import load_dataset

    return load_dataset(path)


def _fit_encoder(cfg: RunConfig, ds):
    cfg.encoder.input_dim = ds.landmark_count * ds.coord_dim
    if cfg.encoder.max_len < ds.max_len:
        log.warning("sequences longer than encoder max_len %d are truncated", cfg.encoder.max_len)


def cmd_synth_data(args) -> None:
    from .data import SyntheticConfig, generate_synthetic, save_dataset

    scfg = SyntheticConfig(
        class_count=args.classes,
        samples_per_class=args.per_class,
        n_frames=args.n,
        landmark_count=args.landmarks,
        coord_dim=args.dims,
        signal_start_fraction=args.signal_start,
        signal_end_fraction=args.signal_end,
        noise_scale=args.noise,
        seed=args.seed,
        split_tag=args.split,
        family=args.family,
    )
    try:
        scfg.check()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    save_dataset(generate_synthetic(scfg), out)
    write_run_json(out, "synth-data", None, {}, {"synthetic": dataclasses.asdict(scfg)})
    print(out)


def cmd_pretrain(args) -> None:
    from .model import save_checkpoint, load_checkpoint
    from .plotting import plot_loss_trace, plot_std_traces
    from .trainer import pretrain

    cfg = _config(args)
    _require(cfg, "train")
    init = None
    if cfg.data.checkpoint:
        _require(cfg, "checkpoint")
        init = load_checkpoint(cfg.data.checkpoint)
    ds = _load_data(cfg.data.train)
    _fit_encoder(cfg, ds)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, trainlog = pretrain(ds, cfg.pretrain_config(), init=init)
    save_checkpoint(ckpt, out / "checkpoint")
    trainlog.write_csv(out / "train_log.csv")
    plot_loss_trace(trainlog, out / "loss.png")
    plot_std_traces({"run": trainlog}, out / "embedding_std.png")
    write_run_json(out, "pretrain", cfg, {"train": cfg.data.train, "init": cfg.data.checkpoint})
    print(out / "checkpoint")


def cmd_boundary_search(args) -> None:
    from .boundary import BoundaryResult, search_boundary, segment_evaluator, sweep_k, walk_k
    from .data import stratified_split
    from .plotting import plot_boundary_traces

    cfg = _config(args)
    if args.stop_rule:
        cfg.boundary.stop_rule = args.stop_rule
    if args.sweep:
        cfg.boundary.sweep = True
    _require(cfg, "train")
    ds = _load_data(cfg.data.train)
    test = None
    if cfg.data.test:
        _require(cfg, "test")
        test = _load_data(cfg.data.test)
    else:
        ds, test = stratified_split(ds, cfg.boundary.test_fraction, cfg.seed)
    _fit_encoder(cfg, ds)
    cfg.encoder.max_len = ds.max_len
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tcfg, ecfg = cfg.pretrain_config(), cfg.eval_config()
    if cfg.boundary.sweep:
        n = ds.max_len
        tf = sweep_k(segment_evaluator(ds, "first", tcfg, ecfg, test), n)
        tl = sweep_k(segment_evaluator(ds, "last", tcfg, ecfg, test), n)
        ks = walk_k(dict(tf).__getitem__, n, cfg.boundary.stop_rule)[0]
        ke = walk_k(dict(tl).__getitem__, n, cfg.boundary.stop_rule)[0]
        result = BoundaryResult(ks, ke, tf, tl, cfg.boundary.stop_rule)
    else:
        result = search_boundary(ds, tcfg, ecfg, cfg.boundary.stop_rule, test)
    (out / "boundary.json").write_text(result.to_json())
    BoundaryResult.write_trace(result.trace_first, out / "trace_first.csv")
    BoundaryResult.write_trace(result.trace_last, out / "trace_last.csv")
    plot_boundary_traces(result, out / "boundary.png", ds.max_len)
    write_run_json(out, "boundary-search", cfg, {"train": cfg.data.train, "test": cfg.data.test})
    print(result.to_json(), end="")


def _eval_common(args):
    from .model import load_checkpoint

    cfg = _config(args)
    _require(cfg, "checkpoint", "train", "test")
    ckpt = load_checkpoint(cfg.data.checkpoint)
    train, test = _load_data(cfg.data.train), _load_data(cfg.data.test)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, ckpt, train, test, out


def _finish_eval(cfg, out, report, command):
    _write_json(out / "report.json", report.to_dict())
    write_run_json(
        out,
        command,
        cfg,
        {"checkpoint": cfg.data.checkpoint, "train": cfg.data.train, "test": cfg.data.test},
    )
    print(json.dumps(report.to_dict(), indent=1))


def cmd_linear_eval(args) -> None:
    from .evaluation import linear_eval

    cfg, ckpt, train, test, out = _eval_common(args)
    if args.probe_on:
        cfg.eval.probe_on = args.probe_on
    _finish_eval(cfg, out, linear_eval(ckpt, train, test, cfg.eval_config()), "linear-eval")


def cmd_finetune(args) -> None:
    from .evaluation import finetune

    cfg, ckpt, train, test, out = _eval_common(args)
    if args.label_fraction is not None:
        cfg.eval.label_fraction = args.label_fraction
    _finish_eval(cfg, out, finetune(ckpt, train, test, cfg.eval_config()), "finetune")


def cmd_transfer(args) -> None:
    from .evaluation import transfer_eval

    cfg, ckpt, train, test, out = _eval_common(args)
    report = transfer_eval(ckpt, train, test, cfg.eval_config(), source=args.source, target=args.target)
    _finish_eval(cfg, out, report, "transfer")


def cmd_ablate(args) -> None:
    from .evaluation import linear_eval
    from .model import save_checkpoint
    from .plotting import plot_std_traces
    from .trainer import run_ablation_suite

    cfg = _config(args)
    _require(cfg, "train")
    ds = _load_data(cfg.data.train)
    test = None
    if cfg.data.test:
        _require(cfg, "test")
        test = _load_data(cfg.data.test)
    _fit_encoder(cfg, ds)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_ablation_suite(ds, cfg.pretrain_config())
    summary, logs, acc = {}, {}, {}
    for name, (ckpt, trainlog) in results.items():
        vdir = out / name
        save_checkpoint(ckpt, vdir / "checkpoint")
        trainlog.write_csv(vdir / "train_log.csv")
        logs[name] = trainlog
        summary[name] = {"final_embedding_std": trainlog.records[-1]["embedding_std"]}
        if test is not None:
            acc[name] = linear_eval(ckpt, ds, test, cfg.eval_config()).top1_mean
            summary[name]["linear_top1"] = acc[name]
    _write_json(out / "ablation.json", summary)
    plot_std_traces(logs, out / "ablation.png", acc or None)
    write_run_json(out, "ablate", cfg, {"train": cfg.data.train, "test": cfg.data.test})
    print(json.dumps(summary, indent=1))


def cmd_export_embeddings(args) -> None:
    from .evaluation import export_embeddings_2d, write_embeddings_csv
    from .model import load_checkpoint
    from .plotting import plot_embeddings_2d

    cfg = _config(args)
    if args.data is not None:
        cfg.data.test = args.data
    _require(cfg, "checkpoint", "test")
    ckpt = load_checkpoint(cfg.data.checkpoint)
    ds = _load_data(cfg.data.test)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = export_embeddings_2d(ckpt, ds, cfg.eval.probe_on)
    write_embeddings_csv(rows, out / "embeddings.csv")
    plot_embeddings_2d(rows, out / "embeddings.png")
    write_run_json(out, "export-embeddings", cfg, {"checkpoint": cfg.data.checkpoint, "data": cfg.data.test})
    print(out / "embeddings.csv")


# ------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slslr", description=__doc__)
    p.add_argument("--version", action="version", version=f"slslr {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def run_opts(sp, out_required=True):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--profile", choices=["tiny", "paper"], default="paper", help="defaults profile")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("synth-data", help="generate a synthetic dataset with a planted signal window")
    sp.add_argument("--classes", type=int, default=10)
    sp.add_argument("--per-class", type=int, default=20)
    sp.add_argument("--n", type=int, default=24, help="frames per sequence")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--signal-start", type=float, default=1 / 3, help="fraction of leading noise frames")
    sp.add_argument("--signal-end", type=float, default=1 / 4, help="fraction of trailing noise frames")
    sp.add_argument("--landmarks", type=int, default=75)
    sp.add_argument("--dims", type=int, choices=[2, 3], default=2)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--split", choices=["train", "test", "unlabeled"], default="train")
    sp.add_argument("--family", type=int, default=0, help="class-path family (shared across seeds)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("pretrain", help="self-supervised pretraining")
    run_opts(sp)
    sp.add_argument("--train")
    sp.add_argument("--checkpoint", help="initialise from this checkpoint")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--mode", choices=["part_permutation", "classical", "combined"])
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("boundary-search", help="search the boundary importance (ks*, ke*)")
    run_opts(sp)
    sp.add_argument("--train")
    sp.add_argument("--test")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--stop-rule", choices=["paper_literal", "peak"])
    sp.add_argument("--sweep", action="store_true", help="evaluate every k, then apply the stop rule")
    sp.set_defaults(func=cmd_boundary_search)

    for name, func, helptext in (
        ("linear-eval", cmd_linear_eval, "linear probe on a frozen backbone"),
        ("finetune", cmd_finetune, "semi-supervised fine-tuning on a label fraction"),
        ("transfer", cmd_transfer, "linear probe of a backbone pretrained on another dataset"),
    ):
        sp = sub.add_parser(name, help=helptext)
        run_opts(sp)
        sp.add_argument("--checkpoint")
        sp.add_argument("--train")
        sp.add_argument("--test")
        if name == "linear-eval":
            sp.add_argument("--probe-on", choices=["representation", "projection"])
        if name == "finetune":
            sp.add_argument("--label-fraction", type=float)
        if name == "transfer":
            sp.add_argument("--source", default="A")
            sp.add_argument("--target", default="B")
        sp.set_defaults(func=func)

    sp = sub.add_parser("ablate", help="pretrain the five ablation variants")
    run_opts(sp)
    sp.add_argument("--train")
    sp.add_argument("--test", help="optional labeled split for per-variant linear accuracy")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--mode", choices=["part_permutation", "classical", "combined"])
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("export-embeddings", help="2-D PCA of encoder representations as CSV")
    run_opts(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--data")
    sp.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"slslr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"slslr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"slslr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
