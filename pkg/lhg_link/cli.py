"""
lhg-link command line.

    lhg-link prepare  --edges dblp.tsv --ratios 0.8,0.1,0.1 --seed 7
    lhg-link train    --config config.ini --seed 1
    lhg-link eval     --config config.ini --checkpoint output/best.ckpt --split test
    lhg-link ablate   --config config.ini --variant no_personalization --seeds 0,1,2
    lhg-link probe    --config config.ini
    lhg-link baseline transe --config config.ini --pseudo-k 1,3,10
    lhg-link scaling  --config config.ini --sizes 5000,10000,20000

Settings resolve as flags > environment (LHG_OUTPUT_DIR, LHG_WORKERS) >
INI file > defaults. Exit codes: 0 success, 1 runtime failure, 2 usage error.

"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from lhg_link.common import ConfigurationError, LhgError, get_config_items, get_env_overrides
from lhg_link.path_sampler import TRUNCATION_MODES
from lhg_link.trainer import OPTIMIZERS, VARIANTS, TrainConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# (flag, config name, type)
_OVERRIDES = [
    ("--num-layers", "num_layers", int),
    ("--hidden-dims", "hidden_dims", str),
    ("--semantic-dims", "semantic_dims", str),
    ("--num-paths", "num_paths", int),
    ("--max-path-length", "max_path_length", int),
    ("--decay", "decay", float),
    ("--margin", "margin", float),
    ("--film-weight", "film_weight", float),
    ("--batch-size", "batch_size", int),
    ("--learning-rate", "learning_rate", float),
    ("--max-epochs", "max_epochs", int),
    ("--steps-per-epoch", "steps_per_epoch", int),
    ("--patience", "patience", int),
    ("--entity-dim", "entity_dim", int),
    ("--transe-dim", "transe_dim", int),
    ("--transe-epochs", "transe_epochs", int),
    ("--seed", "seed", int),
    ("--workers", "workers", int),
]


def parse_int_list(text: str, flag: str) -> List[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise ConfigurationError(f"{flag} must be a comma separated list of integers, got '{text}'")
    if not values:
        raise ConfigurationError(f"{flag} must not be empty")
    return values


def parse_ratios(text: str) -> tuple:
    try:
        ratios = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigurationError(f"--ratios must be three comma separated fractions, got '{text}'")
    if len(ratios) != 3:
        raise ConfigurationError(f"--ratios must be three comma separated fractions, got '{text}'")
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ConfigurationError(f"--ratios must be non-negative and sum to 1, got '{text}'")
    return ratios


def _add_common_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, default=None, help="INI file laid out like config.example.ini")
    parser.add_argument("--edges", type=Path, default=None, help="head<TAB>tail edge list")
    parser.add_argument("--features", type=Path, default=None, help="Node feature matrix (.npy or text)")
    parser.add_argument("--labels", type=Path, default=None, help="node_id<TAB>type_label, probe only")
    parser.add_argument("--dataset", type=str, default=None, help="Dataset name used in reports")
    parser.add_argument("--output-dir", type=Path, default=None, help="Where artifacts are written")
    parser.add_argument("--ratios", type=str, default=None, help="train,val,test fractions")
    parser.add_argument("--optimizer", choices=OPTIMIZERS, default=None)
    parser.add_argument("--truncation", choices=TRUNCATION_MODES, default=None)
    parser.add_argument("--resample-paths", action="store_true", default=None, help="Fresh paths every epoch")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    for flag, name, kind in _OVERRIDES:
        parser.add_argument(flag, dest=name, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lhg-link",
        description="Link prediction on latent heterogeneous graphs (LHGNN) with TransE baselines.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    prepare = commands.add_parser("prepare", help="Split the links and cache the path sets")
    _add_common_arguments(prepare)
    prepare.add_argument("--no-path-cache", action="store_true", help="Skip writing the path cache")

    train = commands.add_parser("train", help="Train the model with early stopping")
    _add_common_arguments(train)
    train.add_argument("--variant", choices=VARIANTS, default=None)

    evaluate = commands.add_parser("eval", help="Rank held-out links with a checkpoint")
    _add_common_arguments(evaluate)
    evaluate.add_argument("--checkpoint", type=Path, default=None)
    evaluate.add_argument("--split", choices=("val", "test"), default="test")
    evaluate.add_argument("--variant", choices=VARIANTS, default=None)

    ablate = commands.add_parser("ablate", help="Train and test ablation variants over seeds")
    _add_common_arguments(ablate)
    ablate.add_argument("--variant", choices=VARIANTS + ("all",), default="all")
    ablate.add_argument("--seeds", type=str, default=None, help="Comma separated seeds (default: --seed)")

    probe = commands.add_parser("probe", help="Node type classification probe on the embeddings")
    _add_common_arguments(probe)
    probe.add_argument("--checkpoint", type=Path, default=None)
    probe.add_argument("--variant", choices=VARIANTS, default=None)

    baseline = commands.add_parser("baseline", help="TransE baselines with K-means pseudo types")
    _add_common_arguments(baseline)
    baseline.add_argument("model", choices=("transe",))
    baseline.add_argument("--pseudo-k", type=str, default="1", help="Comma separated K values; 1 = no pseudo types")
    baseline.add_argument(
        "--recluster", action="store_true", help="Recompute pseudo types even when pseudo_types_k<K>.tsv exists"
    )

    scaling = commands.add_parser("scaling", help="Per-epoch training time over BFS subgraphs")
    _add_common_arguments(scaling)
    scaling.add_argument("--sizes", type=str, required=True, help="Comma separated node counts")
    scaling.add_argument("--epochs", type=int, default=1)
    return parser


def resolve_settings(args: argparse.Namespace) -> Dict[str, object]:
    items: Dict[str, object] = {}
    if args.config is not None:
        items.update(get_config_items(args.config))
    items.update(get_env_overrides())
    for _, name, _ in _OVERRIDES:
        value = getattr(args, name)
        if value is None:
            continue
        if name in ("hidden_dims", "semantic_dims"):
            value = parse_int_list(value, "--" + name.replace("_", "-"))
        items[name] = value
    for name in ("optimizer", "truncation", "resample_paths", "variant"):
        value = getattr(args, name, None)
        if value is not None:
            items[name] = value
    for name in ("edges", "features", "labels", "dataset", "output_dir", "ratios"):
        value = getattr(args, name)
        if value is not None:
            items[name] = value
    return items


def build_run_config(args: argparse.Namespace):
    from lhg_link.workflow import RunConfig

    items = resolve_settings(args)
    if items.get("variant") == "all":
        items.pop("variant")
    train_config = TrainConfig.from_items(items)
    train_config.validate()

    def _path(name: str) -> Optional[Path]:
        return None if items.get(name) in (None, "") else Path(str(items[name]))

    return RunConfig(
        edges=_path("edges"),
        features=_path("features"),
        labels=_path("labels"),
        dataset=str(items.get("dataset") or "graph"),
        output_dir=_path("output_dir") or Path("output"),
        ratios=parse_ratios(str(items["ratios"])) if items.get("ratios") else (0.8, 0.1, 0.1),
        train=train_config,
    )


def dispatch(args: argparse.Namespace):
    from lhg_link import workflow

    run = build_run_config(args)
    if args.command == "prepare":
        return workflow.run_prepare(run, cache_paths=not args.no_path_cache)
    if args.command == "train":
        return workflow.run_train(run)
    if args.command == "eval":
        return workflow.run_eval(run, checkpoint=args.checkpoint, which=args.split)
    if args.command == "ablate":
        variants = VARIANTS if args.variant == "all" else (args.variant,)
        seeds = parse_int_list(args.seeds, "--seeds") if args.seeds else [run.train.seed]
        return workflow.run_ablate(run, variants=variants, seeds=seeds)
    if args.command == "probe":
        return workflow.run_probe(run, checkpoint=args.checkpoint)
    if args.command == "baseline":
        pseudo_ks = parse_int_list(args.pseudo_k, "--pseudo-k")
        return workflow.run_baseline(run, pseudo_ks=pseudo_ks, recluster=args.recluster)
    if args.command == "scaling":
        return workflow.run_scaling(run, sizes=parse_int_list(args.sizes, "--sizes"), epochs=args.epochs)
    raise ConfigurationError(f"Unknown command {args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        dispatch(args)
    except ConfigurationError as e:
        print(f"lhg-link {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except LhgError as e:
        print(f"lhg-link {args.command}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
