import argparse
import json
import logging
import sys
from pathlib import Path

from config.config import (
    CAPTIONS_FILE,
    CHECKPOINTS_DIR,
    DEVICE,
    MANIFEST_FILE,
    METRICS_FILE,
    REPORT_FILE,
    RESUME_MANIFEST_FILE,
    SCHEDULE_FILE,
    SENTENCES_FILE,
)
from config.interfaces import ArgumentError, ConfigurationError, DiffCapException, DivergenceError
from config.sections import RunConfig, build_config, load_config, parse_overrides
from cli.manifest import RunManifest
from data.dataset import load_dataset, split
from data.toy import make_toy_corpus
from denoiser.checkpoint import load_checkpoint, load_params, load_trainer_state
from denoiser.model import build_denoiser
from diffusion.schedule import schedule_from_config
from inference.evaluation import evaluate_records
from inference.generator import CaptionGenerator, GenConfig
from textcodec.vocab import Vocab, build_vocab
from training.trainer import Trainer

logger = logging.getLogger("diffcap.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2


class UsageError(DiffCapException):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_make_toy_data(args) -> int:
    if args.scenes < 2:
        raise UsageError(f"--scenes must be at least 2, got {args.scenes}")
    paths = make_toy_corpus(args.out, num_scenes=args.scenes, captions_per_scene=args.captions,
                            dim=args.dim, seed=args.seed, val_fraction=args.val_fraction,
                            text_features=args.text_features)
    RunManifest.create("make-toy-data", args.seed, config=vars_snapshot(args),
                       outputs=paths).write(args.out)
    return EXIT_OK


def _training_data(config: RunConfig):
    data = config.data
    if not data.train or not data.features:
        raise ConfigurationError("data.train", "train captions and features paths are required")
    records, features = load_dataset(data.train, data.features)
    if data.val:
        val, _ = load_dataset(data.val, data.features)
        train = records
    else:
        train, val = split(records, config.training.val_fraction, config.training.seed)
    if data.vocab:
        vocab = Vocab.load(data.vocab)
    else:
        vocab = build_vocab(c for r in train for c in r.captions)
    return train, val, features, vocab


def cmd_train(args) -> int:
    config = load_config(args.config, parse_overrides(args.set))
    train, val, features, vocab = _training_data(config)
    config = config.model_copy(update={"model": config.model.model_copy(update={"vocab_size": len(vocab)})})
    if features.dim != config.model.d_clip:
        raise ConfigurationError("model.d_clip", f"{config.model.d_clip} != feature width {features.dim}")

    out = Path(args.out)
    use_text = config.guidance.enabled and config.guidance.use_text
    model = build_denoiser(config.model, config.embedding, use_text=use_text, seed=config.training.seed).to(DEVICE)
    schedule = schedule_from_config(config.schedule)
    trainer = Trainer(model, schedule, config, vocab)
    manifest_name = MANIFEST_FILE
    if args.resume:
        last = out / CHECKPOINTS_DIR / "last"
        load_params(model, last)
        state = load_trainer_state(last)
        if state is None:
            raise UsageError(f"--resume given but {last} holds no trainer state")
        trainer.load_state_dict(state)
        # the first run's manifest stays as written
        manifest_name = RESUME_MANIFEST_FILE.format(epoch=trainer.epoch)
        logger.info(f"Resumed from epoch {trainer.epoch}, step {trainer.step}")

    RunManifest.create(
        "train", config.training.seed, config=config.model_dump(mode="json"),
        inputs=[config.data.train, config.data.val, config.data.features, config.data.vocab],
        outputs={"checkpoints": out / CHECKPOINTS_DIR, "metrics": out / METRICS_FILE},
    ).write(out, manifest_name)

    result = trainer.fit(train, val, features, out)
    logger.info(f"Training finished after {result.epochs_run} epochs, best epoch {result.best_epoch}")
    return EXIT_OK


def _generator_from_checkpoint(args) -> tuple[CaptionGenerator, RunConfig]:
    model, config, vocab, _ = load_checkpoint(args.checkpoint)
    model.to(DEVICE)
    infer = config.infer.model_copy(update={
        "stages": args.stages if args.stages is not None else config.infer.stages,
        "seed": args.seed if args.seed is not None else config.infer.seed,
        "deterministic": not args.stochastic,
    })
    config = config.model_copy(update={"infer": infer})
    schedule = schedule_from_config(config.schedule)
    return CaptionGenerator(model, schedule, vocab, config, GenConfig.from_config(config)), config


def cmd_generate(args) -> int:
    generator, config = _generator_from_checkpoint(args)
    records, features = load_dataset(args.records, args.features)
    by_key = {r.key: r for r in records}
    keys = [k for k in args.keys.split(",") if k] if args.keys else list(by_key)
    unknown = [k for k in keys if k not in by_key]
    if unknown:
        raise ArgumentError(f"unknown keys: {unknown}")
    selected = [by_key[k] for k in keys]
    captions = generator.caption_records(selected, features)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / CAPTIONS_FILE, "w", encoding="utf-8") as f:
        for record, caption in zip(selected, captions):
            f.write(json.dumps({"key": record.key, "caption": caption}, ensure_ascii=False) + "\n")
    RunManifest.create("generate", config.infer.seed, config=config.model_dump(mode="json"),
                       inputs=[args.records, args.features],
                       outputs={"captions": out / CAPTIONS_FILE}).write(out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    generator, config = _generator_from_checkpoint(args)
    records, features = load_dataset(args.dataset, args.features)
    report = evaluate_records(generator, records, features)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / REPORT_FILE, out / SENTENCES_FILE)
    RunManifest.create("evaluate", config.infer.seed, config=config.model_dump(mode="json"),
                       inputs=[args.dataset, args.features],
                       outputs={"report": out / REPORT_FILE, "sentences": out / SENTENCES_FILE}).write(out)
    print(json.dumps(report.summary()))
    return EXIT_OK


def cmd_inspect_schedule(args) -> int:
    overrides = parse_overrides(args.set)
    config = load_config(args.config, overrides) if args.config else build_config({}, overrides)
    schedule = schedule_from_config(config.schedule)
    lines = ["t,beta,alpha_bar"]
    lines += [f"{t},{float(schedule.betas[t - 1])!r},{float(schedule.alpha_bars[t - 1])!r}" for t in range(1, schedule.T + 1)]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / SCHEDULE_FILE).write_text(text, encoding="utf-8")
        RunManifest.create("inspect-schedule", config.training.seed, config=config.model_dump(mode="json"),
                           inputs=[args.config], outputs={"schedule": out / SCHEDULE_FILE}).write(out)
    return EXIT_OK


def vars_snapshot(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def build_parser() -> Parser:
    parser = Parser(prog="diffcap", description="Diffusion language model image captioning")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    toy = sub.add_parser("make-toy-data", help="write a synthetic caption corpus")
    toy.add_argument("--scenes", type=int, default=20)
    toy.add_argument("--captions", type=int, default=3)
    toy.add_argument("--dim", type=int, default=16)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--val-fraction", type=float, default=0.2)
    toy.add_argument("--text-features", action="store_true")
    toy.add_argument("--out", default="toy_data")
    toy.set_defaults(func=cmd_make_toy_data)

    train = sub.add_parser("train", help="fit the denoiser")
    train.add_argument("--config", required=True)
    train.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    train.add_argument("--out", default="runs/train")
    train.add_argument("--resume", action="store_true")
    train.set_defaults(func=cmd_train)

    for name, func, help_text in (("generate", cmd_generate, "caption records from a checkpoint"),
                                  ("evaluate", cmd_evaluate, "BLEU-4 of a checkpoint on a dataset")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--checkpoint", required=True)
        cmd.add_argument("--features", required=True)
        cmd.add_argument("--stages", type=int, default=None)
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--stochastic", action="store_true")
        cmd.add_argument("--out", default=f"runs/{name}")
        cmd.set_defaults(func=func)
        if name == "generate":
            cmd.add_argument("--records", required=True)
            cmd.add_argument("--keys", default=None, help="comma-separated record keys, all when omitted")
        else:
            cmd.add_argument("--dataset", required=True)

    inspect = sub.add_parser("inspect-schedule", help="print the beta / alpha-bar table")
    inspect.add_argument("--config", default=None)
    inspect.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    inspect.add_argument("--out", default=None)
    inspect.set_defaults(func=cmd_inspect_schedule)
    return parser


def run(argv: list[str] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        logger.error(f"Numeric divergence: {e}")
        return EXIT_DIVERGED
    except (DiffCapException, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_USAGE
