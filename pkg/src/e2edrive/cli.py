"""Command-line entry points: ``e2edrive <command> [options]``.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime failure.
Diagnostics go to stderr; results go to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import numerics as nx
from .config import ModelConfig, TrainConfig
from .evaluation import evaluate_dataset
from .io import (DATASET_FILE, dataset_path, file_digest, load_checkpoint, read_dataset, save_checkpoint,
                 write_dataset)
from .model import DrivingModel
from .render import render_plot
from .scenario import make_dataset
from .training import Trainer, model_grad_check

log = logging.getLogger("e2edrive")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4
GRADCHECK_SEEDS = range(5)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="e2edrive", description="Desk-scale multimodal driving model.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic episode dataset")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--n", required=True, type=_positive_int, help="number of episodes")
    p.add_argument("--seed", required=True, type=_positive_int)
    p.add_argument("--phrasing", default="default", choices=("default", "rephrased"))

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True, type=Path, help="JSON with optional 'model' and 'train' objects")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--mode", choices=("full", "lora"), help="overrides the config's train.mode")
    p.add_argument("--init", type=Path, help="start from this checkpoint instead of a fresh model")
    p.add_argument("--log", type=Path, help="metrics TSV path (default: <out>.metrics.tsv)")

    p = sub.add_parser("infer", help="predict one episode")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--episode", required=True, type=Path, help="JSONL file; the first episode is used")
    p.add_argument("--render", type=Path, help="write a top-down PPM plot here")

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--report", required=True, type=Path)

    sub.add_parser("gradcheck", help="finite-difference check of every op and the tiny model")
    return parser


def _load_configs(path: Path, mode: str | None) -> tuple[ModelConfig, TrainConfig]:
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a JSON object")
    unknown = set(raw) - {"model", "train"}
    if unknown:
        raise ValueError(f"{path}: unknown sections {sorted(unknown)}")
    train = dict(raw.get("train", {}))
    if mode is not None:
        train["mode"] = mode
    return ModelConfig.from_dict(raw.get("model", {})), TrainConfig.from_dict(train)


def cmd_gen_data(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    write_dataset(args.out / DATASET_FILE, make_dataset(args.n, args.seed, args.phrasing))
    log.info("wrote %d episodes to %s", args.n, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg, train_cfg = _load_configs(args.config, args.mode)
    episodes = read_dataset(dataset_path(args.data))
    if args.init is not None:
        model = load_checkpoint(args.init)
        if not isinstance(model, DrivingModel):
            raise ValueError(f"{args.init} holds no trainable model")
    else:
        model = DrivingModel(model_cfg, seed=train_cfg.seed)
    if train_cfg.mode == "lora":
        model.enable_lora(train_cfg.seed)
    trainer = Trainer(model, episodes, train_cfg)
    for _ in range(train_cfg.steps):
        trainer.step()
        if trainer.step_count % 100 == 0:
            log.info(trainer.log_lines[-1])
    save_checkpoint(args.out, model)
    log_path = args.log or args.out.with_name(args.out.name + ".metrics.tsv")
    log_path.write_text("".join(line + "\n" for line in trainer.log_lines), encoding="utf-8")
    return EXIT_OK


def cmd_infer(args) -> int:
    predictor = load_checkpoint(args.ckpt)
    episodes = read_dataset(args.episode)
    if not episodes:
        raise ValueError(f"{args.episode} contains no episode")
    episode = episodes[0]
    traj, text = predictor.predict_batch([episode], with_text=True)[0]
    if args.render is not None:
        render_plot(episode, traj, args.render)
    json.dump({"seed": episode.seed, "trajectory": traj.reshape(-1).tolist(), "text": text}, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    predictor = load_checkpoint(args.ckpt)
    path = dataset_path(args.data)
    report = evaluate_dataset(predictor, read_dataset(path), checkpoint_id=file_digest(args.ckpt),
                              dataset_id=file_digest(path))
    args.report.write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"mean_composite\t{report.mean_composite:.9g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ok = True
    for name in nx.OP_CHECKS:
        err = max(nx.check_op(name, s) for s in GRADCHECK_SEEDS)
        ok &= err < OP_TOLERANCE
        print(f"{name}\t{err:.3e}\t{'ok' if err < OP_TOLERANCE else 'FAIL'}")
    err = max(model_grad_check(s) for s in GRADCHECK_SEEDS)
    ok &= err < MODEL_TOLERANCE
    print(f"tiny_model\t{err:.3e}\t{'ok' if err < MODEL_TOLERANCE else 'FAIL'}")
    if not ok:
        print("gradient check failed", file=sys.stderr)
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"e2edrive {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
