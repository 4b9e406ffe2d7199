"""Command-line entry point: synth, split, train, eval, explain, preview-augment.

Exit codes: 0 ok, 2 data/config, 3 numeric, 4 artifact mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import augment, datakit, explain, metrics, network, trainer
from .config import PipelineConfig, load_config
from .errors import DataError, FormatError, HistoError

logger = logging.getLogger("histoxai")

SPLIT_FILE = "split.json"
WEIGHTS_FILE = "weights.hscw"
HISTORY_FILE = "history.csv"
CONFIG_FILE = "config.json"


class Run:
    """Resolved config plus the output directory of one invocation."""

    def __init__(self, config: PipelineConfig, out: Path):
        self.config = config
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        (out / CONFIG_FILE).write_text(config.dump())

    @property
    def seed(self) -> int:
        return self.config.seed

    def dataset_root(self) -> Path:
        ds = self.config.dataset
        if ds.root is not None:
            return Path(ds.root)
        return self.out / "data"

    def model_config(self) -> network.ModelConfig:
        m = self.config.model
        return network.ModelConfig(
            backbone=m.backbone if m.backbone is not None else network.tiny_vgg(),
            input_size=(m.input_size, m.input_size, 3),
            frozen_layers=list(m.frozen_layers),
            dropout=m.dropout,
            seed=self.seed,
        )

    def pipeline(self) -> augment.AugmentPipeline | None:
        a = self.config.augment
        if not a.enabled:
            return None
        return augment.AugmentPipeline.from_dicts([s.model_dump() for s in a.steps], seed=self.seed)

    def train_config(self) -> trainer.TrainConfig:
        t = self.config.train
        return trainer.TrainConfig(
            learning_rate=t.learning_rate,
            epochs=t.epochs,
            batch_size=t.batch_size,
            beta1=t.beta1,
            beta2=t.beta2,
            epsilon=t.epsilon,
            seed=self.seed,
            shuffle=t.shuffle,
            online_augment=t.online_augment,
        )

    def load_model(self, weights: Path) -> network.Model:
        if not weights.is_file():
            raise FormatError(f"weights file {weights} not found")
        model = network.build_model(self.model_config())
        network.load_weights(model, weights)
        return model


def _inventory(run: Run) -> datakit.Inventory:
    root = run.dataset_root()
    synth = run.config.dataset.synth
    if run.config.dataset.root is None and synth is not None and not root.exists():
        datakit.synth_generate(root, synth.per_class, synth.size, seed=run.seed, task=run.config.task)
    return datakit.scan_dataset(root)


def cmd_synth(run: Run, args) -> int:
    synth = run.config.dataset.synth
    per_class = args.per_class or (synth.per_class if synth else 200)
    size = args.size or (synth.size if synth else 64)
    target = Path(args.to) if args.to else run.dataset_root()
    inv = datakit.synth_generate(target, per_class, size, seed=run.seed, task=args.task or run.config.task)
    for cls, paths in inv.items():
        print(f"{cls}: {len(paths)} images -> {target / cls}")
    return 0


def _make_split(run: Run) -> datakit.DatasetSplit:
    inv = _inventory(run)
    missing = datakit.missing_classes(inv)[run.config.task]
    if missing:
        raise DataError(f"task {run.config.task!r} is missing classes {missing}")
    split = datakit.build_split(inv, run.config.task, seed=run.seed)
    datakit.write_manifest(split, run.dataset_root(), run.out / SPLIT_FILE)
    (run.out / "split_summary.txt").write_text(datakit.split_summary(split))
    return split


def _load_split(run: Run) -> datakit.DatasetSplit:
    path = run.out / SPLIT_FILE
    if path.is_file():
        return datakit.read_manifest(path)
    return _make_split(run)


def cmd_split(run: Run, args) -> int:
    split = _make_split(run)
    print(datakit.split_summary(split), end="")
    return 0


def cmd_train(run: Run, args) -> int:
    if args.epochs is not None:
        run.config.train.epochs = args.epochs
        (run.out / CONFIG_FILE).write_text(run.config.dump())
    split = _load_split(run)
    model = network.build_model(run.model_config())
    history = trainer.train(model, split, run.pipeline(), run.train_config())
    network.save_weights(model, run.out / WEIGHTS_FILE)
    trainer.write_history_csv(history, run.out / HISTORY_FILE)
    last = history[-1]
    print(f"trained {len(history)} epochs: val_loss {last.val_loss:.4f} val_acc {last.val_acc:.4f}")
    return 0


def cmd_eval(run: Run, args) -> int:
    model = run.load_model(Path(args.weights) if args.weights else run.out / WEIGHTS_FILE)
    split = _load_split(run)
    if not split.test:
        raise DataError("test partition is empty")
    scores = trainer.predict(model, split.test, run.config.train.batch_size)
    labels = [ex.label for ex in split.test]
    m = run.config.metrics
    report = metrics.evaluate(
        scores, labels, threshold=m.threshold, averaging=m.averaging,
        model=run.config.model.name, task=run.config.task,
    )
    (run.out / "metrics.json").write_text(report.to_json())
    table = metrics.format_table([report])
    (run.out / "metrics.txt").write_text(table)
    print(table, end="")
    return 0


def cmd_explain(run: Run, args) -> int:
    model = run.load_model(Path(args.weights) if args.weights else run.out / WEIGHTS_FILE)
    cfg = run.config.explain
    size = run.config.model.input_size
    out = run.out / "explain"
    out.mkdir(exist_ok=True)
    ok = 0
    for path in args.images:
        try:
            img = augment.crop_square_resize(augment.load_image(path), size)
        except HistoError as exc:
            logger.warning("%s", exc)
            continue
        x = explain.image_to_input(img)
        cls = cfg.class_index if cfg.class_index is not None else explain.classify(model, x)
        for method in cfg.methods:
            if method == "gradcam":
                hm = explain.gradcam(model, x, cls, layer_id=cfg.layer)
            elif method == "smoothgrad":
                hm = explain.smoothgrad(model, x, cls, n=cfg.n, sigma=cfg.sigma, seed=run.seed)
            else:
                hm = explain.vanilla_saliency(model, x, cls)
            stem = f"{Path(path).stem}.{method}.{cls}"
            png = out / f"{stem}.png"
            augment.save_png(explain.render_overlay(hm, img, cfg.alpha), png)
            sidecar = {
                "image": str(path),
                "method": method,
                "class": cls,
                "score": hm.meta.get("score"),
                "layer": cfg.layer if method == "gradcam" else None,
                "n": cfg.n if method == "smoothgrad" else None,
                "sigma": cfg.sigma if method == "smoothgrad" else None,
                "seed": run.seed,
            }
            (out / f"{stem}.json").write_text(json.dumps(sidecar, indent=2) + "\n")
            print(png)
        ok += 1
    if args.images and ok == 0:
        raise DataError("no image could be decoded")
    return 0


def cmd_preview_augment(run: Run, args) -> int:
    img = augment.load_image(args.image)
    pipeline = run.pipeline() or augment.AugmentPipeline([], seed=run.seed)
    grid = augment.preview_grid(pipeline, img, n=8, tile=run.config.model.input_size)
    path = run.out / f"preview_{Path(args.image).stem}.png"
    augment.save_png(grid, path)
    print(path)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "preview-augment": cmd_preview_augment,
}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # flags work before or after the subcommand; the subcommand copy uses SUPPRESS so
    # it never overwrites a value given before it
    flags = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
    flags.add_argument("--config", help="pipeline config JSON")
    flags.add_argument("--seed", type=int, help="override the config seed")
    flags.add_argument("--out", help="output directory (overrides config output_dir)")
    flags.add_argument("-v", "--verbose", action="store_true")
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histoxai", parents=[_global_flags(False)], description=__doc__.splitlines()[0]
    )
    common = _global_flags(True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic texture dataset")
    p.add_argument("--per-class", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--task", choices=sorted(datakit.TASKS))
    p.add_argument("--to", help="dataset directory (default: dataset.root or <out>/data)")

    sub.add_parser("split", parents=[common], help="build the train/validation/test manifest")

    p = sub.add_parser("train", parents=[common], help="train and write weights + history.csv")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", parents=[common], help="evaluate the test partition")
    p.add_argument("--weights")

    p = sub.add_parser("explain", parents=[common], help="GradCAM / SmoothGrad overlays")
    p.add_argument("--weights")
    p.add_argument("images", nargs="+")

    p = sub.add_parser("preview-augment", parents=[common], help="8x8 grid of augmented draws")
    p.add_argument("image")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.out is not None:
            config.output_dir = args.out
        run = Run(config, Path(config.output_dir))
        return COMMANDS[args.command](run, args)
    except HistoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
