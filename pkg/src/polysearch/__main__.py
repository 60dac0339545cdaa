import argparse
import json
import sys
import time
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
from loguru import logger
from pydantic import ValidationError

from polysearch import commands
from polysearch.errors import (
    ArgumentError,
    CheckFailedError,
    ConfigError,
    FormatError,
)
from polysearch.genetic import SEARCH_LEVEL
from polysearch.model import (
    DatasetSource,
    FeatureExtractor,
    FeatureKind,
    GAConfig,
    SynthConfig,
)

start_time: float = time.time()

CONSOLE_FORMAT = "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{message}</level>"
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level}: {message}"


def set_logger(verbose: bool, silent: bool, log_dir: Path = Path("logs")) -> None:
    """Set up the Loguru logger."""
    logger.remove()
    base = logger.add(sink=sys.stdout, format=CONSOLE_FORMAT, level="INFO")
    logger.add(
        sink=log_dir / f"search-{int(start_time)}.log",
        format=FILE_FORMAT,
        filter=lambda record: record["extra"].get("search", False),
        level=SEARCH_LEVEL,
    )

    if verbose:
        logger.remove(base)
        logger.add(sink=sys.stdout, format=CONSOLE_FORMAT, level="DEBUG")
        logger.add(sink=log_dir / "polysearch.log", format=FILE_FORMAT, level="DEBUG")
    elif silent:
        logger.remove(base)
        logger.add(sink=log_dir / "polysearch.log", format=FILE_FORMAT, level="ERROR")


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return number


def add_dataset_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "--data-dir",
        type=Path,
        help="Class-folder dataset root (one sub-directory per class)",
        dest="data_dir",
    )
    group.add_argument(
        "--idx-images",
        type=Path,
        help="IDX image file (needs --idx-labels)",
        dest="idx_images",
    )
    group.add_argument(
        "--synthetic",
        action="store_true",
        help="Use the built-in four-class synthetic confounder corpus",
    )
    parser.add_argument("--idx-labels", type=Path, dest="idx_labels")
    parser.add_argument(
        "--image-side",
        type=positive_int,
        default=64,
        help="Side length images are resized to. Defaults to 64",
        dest="image_side",
    )


def add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-c", "--config", type=Path, help="JSON run configuration", dest="config"
    )
    add_dataset_arguments(parser)
    parser.add_argument("-o", "--output", type=Path, help="Output directory")
    parser.add_argument("--seed", type=int, help="Override the GA master seed")
    parser.add_argument(
        "-w",
        "--workers",
        type=positive_int,
        help=f"Parallel evaluation workers. Defaults to ${commands.WORKERS_ENV} or 1",
    )


def create_parser() -> argparse.ArgumentParser:
    """Create a parser for the command line arguments."""
    parser = argparse.ArgumentParser(
        prog="polysearch",
        description="Class-specific augmentation policy search",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Enable verbose logging"
    )
    parser.add_argument(
        "-q", "--silent", action="store_true", help="Disable logging to stdout"
    )
    parser.add_argument(
        "--log-dir",
        type=Path,
        default=Path("logs"),
        help="Directory for log files. Defaults to ./logs",
        dest="log_dir",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    search = subparsers.add_parser("search", help="Search a policy for a dataset")
    add_run_arguments(search)
    search.add_argument(
        "--resume", action="store_true", help="Continue from the last checkpoint"
    )

    orders = subparsers.add_parser(
        "order-experiment", help="Search once per category order"
    )
    add_run_arguments(orders)

    preview = subparsers.add_parser(
        "preview", help="Render the most and least likely transforms per class"
    )
    preview.add_argument("policy", type=Path, metavar="POLICY_FILE")
    add_dataset_arguments(preview)
    preview.add_argument("-n", type=positive_int, default=2, help="Samples per class")
    preview.add_argument("-o", "--output", type=Path, default=Path("preview"))
    preview.add_argument("--seed", type=int, default=0)

    rastrigin = subparsers.add_parser(
        "rastrigin-check", help="Benchmark the GA on the Rastrigin function"
    )
    rastrigin.add_argument("--dims", type=positive_int, default=5)
    rastrigin.add_argument(
        "-c", "--config", type=Path, help="JSON GA configuration", dest="config"
    )
    rastrigin.add_argument("--seed", type=int, help="Override the GA master seed")
    rastrigin.add_argument("-w", "--workers", type=positive_int, default=1)
    rastrigin.add_argument(
        "--max-ratio",
        type=float,
        default=0.5,
        help="Fail when final/initial best exceeds this. Defaults to 0.5",
        dest="max_ratio",
    )

    analyze = subparsers.add_parser(
        "analyze-policy", help="Summarise a policy by augmentation category"
    )
    analyze.add_argument("policy", type=Path, metavar="POLICY_FILE")
    analyze.add_argument("-o", "--output", type=Path, help="Summary CSV path")

    synth = subparsers.add_parser(
        "synth-data", help="Write the synthetic confounder corpus to class folders"
    )
    synth.add_argument("output", type=Path, metavar="OUTPUT_DIR")
    synth.add_argument(
        "--images-per-class", type=positive_int, default=200, dest="images_per_class"
    )
    synth.add_argument("--image-side", type=positive_int, default=64, dest="image_side")
    synth.add_argument("--seed", type=int, default=0)

    pca = subparsers.add_parser(
        "feature-pca", help="Project features onto two principal components"
    )
    add_dataset_arguments(pca)
    pca.add_argument(
        "--features",
        type=FeatureKind,
        choices=list(FeatureKind),
        default=FeatureKind.HOG,
    )
    pca.add_argument("-o", "--output", type=Path, default=Path("feature_pca.csv"))

    return parser


def dataset_document(args: argparse.Namespace) -> dict[str, Any] | None:
    """The dataset section selected by command-line flags, if any."""
    if args.idx_labels is not None and args.idx_images is None:
        raise ArgumentError("--idx-labels needs --idx-images")
    if args.data_dir is not None:
        return {"folder": str(args.data_dir), "image_side": args.image_side}
    if args.idx_images is not None:
        if args.idx_labels is None:
            raise ArgumentError("--idx-images needs --idx-labels")
        return {
            "idx_images": str(args.idx_images),
            "idx_labels": str(args.idx_labels),
            "image_side": args.image_side,
        }
    if args.synthetic:
        return {
            "synthetic": SynthConfig.confounder(image_side=args.image_side).model_dump(
                mode="json"
            ),
            "image_side": args.image_side,
        }
    return None


def require_dataset(args: argparse.Namespace) -> DatasetSource:
    document = dataset_document(args)
    if document is None:
        raise ArgumentError("Choose a dataset with --data-dir, --idx-images or --synthetic")
    return DatasetSource.model_validate(document)


def load_ga_config(path: Path | None, seed: int | None) -> GAConfig:
    document: dict[str, Any] = {}
    if path is not None:
        try:
            document = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if seed is not None:
        document["master_seed"] = seed
    return GAConfig.model_validate(document)


def dispatch(args: argparse.Namespace) -> None:
    match args.command:
        case "search" | "order-experiment":
            config = commands.build_run_config(
                args.config,
                dataset=dataset_document(args),
                output_dir=args.output,
                workers=args.workers,
                seed=args.seed,
            )
            if args.command == "search":
                artifacts = commands.cmd_search(config, resume=args.resume)
                logger.info(f"Artifacts written to {artifacts.report.parent}")
            else:
                commands.cmd_order_experiment(config)
        case "preview":
            data = commands.load_dataset(require_dataset(args))
            commands.cmd_preview(args.policy, data, args.n, args.output, args.seed)
        case "rastrigin-check":
            summary = commands.cmd_rastrigin_check(
                args.dims, load_ga_config(args.config, args.seed), workers=args.workers
            )
            if summary.improvement_ratio > args.max_ratio:
                raise CheckFailedError(
                    f"Improvement ratio {summary.improvement_ratio:.3f} exceeds "
                    f"{args.max_ratio}"
                )
        case "analyze-policy":
            commands.cmd_analyze_policy(args.policy, args.output)
        case "synth-data":
            cfg = SynthConfig.confounder(
                images_per_class=args.images_per_class,
                image_side=args.image_side,
                seed=args.seed,
            )
            commands.cmd_synth_data(cfg, args.output)
        case "feature-pca":
            data = commands.load_dataset(require_dataset(args))
            commands.cmd_feature_pca(
                data, FeatureExtractor(kind=args.features), args.output
            )


def run(argv: Sequence[str] | None = None) -> int:
    """
    polysearch

    Searches per-class augmentation probabilities with a genetic algorithm,
    scoring each candidate by fine-tuning a linear head on frozen features.

    Returns:
        0 on success, 1 when a check fails or on an unexpected error, 2 for
        configuration, format, argument and I/O errors.
    """
    load_dotenv()
    args = create_parser().parse_args(argv)
    set_logger(args.verbose, args.silent, args.log_dir)

    exit_code = 0
    try:
        dispatch(args)
    except CheckFailedError as e:
        logger.error(e)
        exit_code = 1
    except (ConfigError, FormatError, ArgumentError, ValidationError, OSError) as e:
        logger.error(e)
        exit_code = 2
    except Exception as e:
        logger.exception(e)
        exit_code = 1
    finally:
        logger.debug(f"Execution time: {time.time() - start_time:.2f} seconds")
    return exit_code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
