import configparser
import hashlib
import json
import os
import zlib
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy

ID_MAP_FILE_NAME = "id_map.tsv"
MANIFEST_FILE_NAME = "manifest.json"
SPLIT_FILE_NAMES = {
    "train": "train.tsv",
    "val": "val.tsv",
    "test": "test.tsv",
}
BEST_CHECKPOINT_NAME = "best.ckpt"
CHECKPOINT_FORMAT_VERSION = 1
OUTPUT_DIR_ENV = "LHG_OUTPUT_DIR"
WORKERS_ENV = "LHG_WORKERS"


class LhgError(Exception):
    """Base for every error raised on purpose by lhg_link."""


class ConfigurationError(LhgError, ValueError):
    pass


class GraphParseError(LhgError, ValueError):
    def __init__(self, path: Path, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{str(path)}:{line_number}: {message}")


class DimensionError(LhgError, ValueError):
    pass


class ContractError(LhgError, RuntimeError):
    pass


class DivergenceError(LhgError, RuntimeError):
    pass


class CheckpointMismatchError(LhgError, RuntimeError):
    def __init__(self, checkpoint_fingerprint: str, config_fingerprint: str):
        self.checkpoint_fingerprint = checkpoint_fingerprint
        self.config_fingerprint = config_fingerprint
        super().__init__(
            "Checkpoint was trained with a different configuration.\n"
            f"  checkpoint fingerprint: {checkpoint_fingerprint}\n"
            f"  config fingerprint:     {config_fingerprint}"
        )


def derive_rng(seed: int, subsystem: str, index: int = 0) -> numpy.random.Generator:
    """
    Independent pseudorandom stream for (seed, subsystem, index).

    The subsystem name goes through crc32 rather than hash() so that streams
    are stable across interpreter runs.

    """
    sequence = numpy.random.SeedSequence(
        [int(seed), zlib.crc32(subsystem.encode("utf-8")), int(index)]
    )
    return numpy.random.default_rng(sequence)


def fingerprint(payload: Dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def iter_data_lines(path: Path) -> Iterable[tuple]:
    """Yields (line_number, stripped line) for non-blank lines of a UTF-8 file."""
    with open(str(path), "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line.strip() == "":
                continue
            yield line_number, line


def _parse_ints(text: str, key: str):
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise ConfigurationError(f"{key} must be a comma separated list of integers")


def get_config_items(config_path: Path) -> Dict[str, object]:
    """
    Reads an INI file laid out like config.example.ini and returns the flat
    mapping of the keys that are present. Missing sections or keys are simply
    absent from the result so that dataclass defaults apply.

    """
    config = configparser.ConfigParser()
    if not config_path.exists():
        raise ConfigurationError(f"{str(config_path)} does not exist.")
    config.read(str(config_path))

    items: Dict[str, object] = {}
    converters = {
        "DATASET": {
            "NAME": ("dataset", str),
            "EDGES": ("edges", str),
            "FEATURES": ("features", str),
            "LABELS": ("labels", str),
            "OUTPUT_DIR": ("output_dir", str),
            "RATIOS": ("ratios", str),
        },
        "MODEL": {
            "NUM_LAYERS": ("num_layers", int),
            "HIDDEN_DIMS": ("hidden_dims", "ints"),
            "SEMANTIC_DIMS": ("semantic_dims", "ints"),
            "NUM_PATHS": ("num_paths", int),
            "MAX_PATH_LENGTH": ("max_path_length", int),
            "DECAY": ("decay", float),
            "LEAKY_SLOPE": ("leaky_slope", float),
            "ENTITY_DIM": ("entity_dim", int),
            "TRUNCATION": ("truncation", str),
        },
        "TRAIN": {
            "MARGIN": ("margin", float),
            "FILM_WEIGHT": ("film_weight", float),
            "BATCH_SIZE": ("batch_size", int),
            "LEARNING_RATE": ("learning_rate", float),
            "OPTIMIZER": ("optimizer", str),
            "MAX_EPOCHS": ("max_epochs", int),
            "STEPS_PER_EPOCH": ("steps_per_epoch", int),
            "PATIENCE": ("patience", int),
            "SEED": ("seed", int),
            "RESAMPLE_PATHS": ("resample_paths", "bool"),
            "WORKERS": ("workers", int),
        },
        "TRANSE": {
            "DIM": ("transe_dim", int),
            "MARGIN": ("transe_margin", float),
            "LEARNING_RATE": ("transe_learning_rate", float),
            "EPOCHS": ("transe_epochs", int),
            "BATCH_SIZE": ("transe_batch_size", int),
        },
    }
    for section, keys in converters.items():
        if not config.has_section(section):
            continue
        for key, (name, kind) in keys.items():
            if not config.has_option(section, key):
                continue
            raw = config.get(section, key).strip()
            if raw == "":
                continue
            try:
                if kind == "ints":
                    items[name] = _parse_ints(raw, key)
                elif kind == "bool":
                    items[name] = config.getboolean(section, key)
                else:
                    items[name] = kind(raw)
            except ValueError:
                raise ConfigurationError(f"[{section}] {key} has an invalid value: {raw}")
    return items


def get_env_overrides() -> Dict[str, object]:
    overrides: Dict[str, object] = {}
    output_dir: Optional[str] = os.environ.get(OUTPUT_DIR_ENV)
    if output_dir:
        overrides["output_dir"] = output_dir
    workers = os.environ.get(WORKERS_ENV)
    if workers:
        try:
            overrides["workers"] = int(workers)
        except ValueError:
            raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {workers}")
    return overrides


def write_json(payload: Dict, dst_path: Path):
    dst_path.parent.mkdir(parents=True, exist_ok=True)
    with open(str(dst_path), "w", encoding="utf-8") as f_out:
        json.dump(payload, f_out, indent=2, sort_keys=True)
        f_out.write("\n")


def read_json(src_path: Path) -> Dict:
    with open(str(src_path), "r", encoding="utf-8") as f:
        return json.load(f)
