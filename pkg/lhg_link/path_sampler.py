"""
Random-walk path sets P_v.

Every target node gets N uniform random walks of L_max hops, each truncated
to a prefix whose length is drawn uniformly from {1, ..., L_max}; the
terminal node of a path is its context node. A zero-length self-loop path is
always added first.

"""
import logging
import math
import pathlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy

from lhg_link.common import ConfigurationError, ContractError, derive_rng
from lhg_link.graph_store import Graph

logger = logging.getLogger(__name__)

TRUNCATE_SAMPLE = "sample"
TRUNCATE_ALL_PREFIXES = "all_prefixes"
TRUNCATION_MODES = (TRUNCATE_SAMPLE, TRUNCATE_ALL_PREFIXES)


@dataclass(frozen=True)
class Path:
    nodes: Tuple[int, ...]
    length: int
    is_self_loop: bool = False

    @property
    def start(self) -> int:
        return self.nodes[0]

    @property
    def terminal(self) -> int:
        return self.nodes[-1]


def self_loop(v: int) -> Path:
    return Path(nodes=(int(v),), length=0, is_self_loop=True)


@dataclass(frozen=True, eq=False)
class ContextSet:
    """Paths of one target; paths[0] is always the self-loop."""

    target: int
    paths: Tuple[Path, ...]

    def weights(self, decay: float) -> numpy.ndarray:
        return numpy.array([decay_weight(p, decay) for p in self.paths])

    @cached_property
    def packed(self) -> Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray, numpy.ndarray]:
        """
        Array form of the non-self-loop paths:
        (terminals, lengths, sizes, flattened node sequences).

        """
        walked = self.paths[1:]
        terminals = numpy.array([p.terminal for p in walked], dtype=numpy.int64)
        lengths = numpy.array([p.length for p in walked], dtype=numpy.int64)
        sizes = numpy.array([len(p.nodes) for p in walked], dtype=numpy.int64)
        flat = (
            numpy.concatenate([numpy.asarray(p.nodes, dtype=numpy.int64) for p in walked])
            if walked
            else numpy.zeros(0, dtype=numpy.int64)
        )
        return terminals, lengths, sizes, flat


def _check_lengths(num_paths: int, max_length: int):
    if num_paths < 0:
        raise ConfigurationError(f"NUM_PATHS must be >= 0, got {num_paths}")
    if max_length < 1:
        raise ConfigurationError(f"MAX_PATH_LENGTH must be >= 1, got {max_length}")


def sample_walks(
    g: Graph,
    v: int,
    num_paths: int,
    max_length: int,
    rng: numpy.random.Generator,
) -> List[numpy.ndarray]:
    """
    N uniform random walks of `max_length` hops from v. Revisits are
    allowed. An isolated node yields no walks.

    """
    _check_lengths(num_paths, max_length)
    if not 0 <= v < g.node_count:
        raise ContractError(f"Node {v} outside [0, {g.node_count}).")
    if g.degrees[v] == 0 or num_paths == 0:
        return []
    offsets, neighbours = g.csr
    degrees = g.degrees
    walks = numpy.empty((num_paths, max_length + 1), dtype=numpy.int64)
    walks[:, 0] = v
    current = walks[:, 0]
    for step in range(1, max_length + 1):
        picks = rng.integers(0, degrees[current])
        current = neighbours[offsets[current] + picks]
        walks[:, step] = current
    return list(walks)


def truncate(walk: Sequence[int], rng: numpy.random.Generator) -> Path:
    """Keeps the first L hops, L uniform in {1, ..., hops of the walk}."""
    hops = len(walk) - 1
    if hops < 1:
        raise ContractError("Cannot truncate a walk without any hop.")
    length = int(rng.integers(1, hops + 1))
    return Path(nodes=tuple(int(x) for x in walk[: length + 1]), length=length)


def _all_prefixes(walk: Sequence[int]) -> List[Path]:
    return [
        Path(nodes=tuple(int(x) for x in walk[: length + 1]), length=length)
        for length in range(1, len(walk))
    ]


def build_context_set(
    g: Graph,
    v: int,
    num_paths: int,
    max_length: int,
    rng: numpy.random.Generator,
    truncation: str = TRUNCATE_SAMPLE,
) -> ContextSet:
    if truncation not in TRUNCATION_MODES:
        raise ConfigurationError(f"TRUNCATION must be one of {TRUNCATION_MODES}, got {truncation}")
    paths = [self_loop(v)]
    for walk in sample_walks(g, v, num_paths, max_length, rng):
        if truncation == TRUNCATE_SAMPLE:
            paths.append(truncate(walk, rng))
        else:
            paths.extend(_all_prefixes(walk))
    return ContextSet(target=int(v), paths=tuple(paths))


def decay_weight(p: Path, decay: float) -> float:
    """e^(-decay * L); the self-loop (L = 0) always weighs exactly 1."""
    if not decay > 0:
        raise ConfigurationError(f"DECAY must be > 0, got {decay}")
    if p.is_self_loop:
        return 1.0
    return math.exp(-decay * p.length)


def sample_context_sets(
    g: Graph,
    num_paths: int,
    max_length: int,
    seed: int,
    workers: int = 1,
    truncation: str = TRUNCATE_SAMPLE,
    subsystem: str = "paths",
) -> List[ContextSet]:
    """
    Context sets for every node. Node v draws from its own stream derived
    from (seed, subsystem, v), so the result does not depend on `workers`.

    """
    _check_lengths(num_paths, max_length)

    def _one(v: int) -> ContextSet:
        return build_context_set(
            g, v, num_paths, max_length, derive_rng(seed, subsystem, v), truncation
        )

    if workers <= 1:
        return [_one(v) for v in range(g.node_count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, range(g.node_count)))


def path_cache_name(seed: int, num_paths: int, max_length: int, truncation: str) -> str:
    return f"paths_seed{seed}_n{num_paths}_l{max_length}_{truncation}.npz"


def save_path_cache(
    context_sets: Sequence[ContextSet],
    dst_dir: pathlib.Path,
    seed: int,
    num_paths: int,
    max_length: int,
    truncation: str = TRUNCATE_SAMPLE,
) -> pathlib.Path:
    dst_dir.mkdir(parents=True, exist_ok=True)
    dst_path = dst_dir / path_cache_name(seed, num_paths, max_length, truncation)
    counts = numpy.array([len(ctx.paths) - 1 for ctx in context_sets], dtype=numpy.int64)
    packed = [ctx.packed for ctx in context_sets]
    sizes = numpy.concatenate([p[2] for p in packed]) if packed else numpy.zeros(0, dtype=numpy.int64)
    flat = numpy.concatenate([p[3] for p in packed]) if packed else numpy.zeros(0, dtype=numpy.int64)
    numpy.savez(
        str(dst_path),
        counts=counts,
        sizes=sizes,
        flat=flat,
        key=numpy.array([seed, num_paths, max_length], dtype=numpy.int64),
    )
    return dst_path


def load_path_cache(
    src_dir: pathlib.Path,
    seed: int,
    num_paths: int,
    max_length: int,
    truncation: str = TRUNCATE_SAMPLE,
) -> Optional[List[ContextSet]]:
    src_path = src_dir / path_cache_name(seed, num_paths, max_length, truncation)
    if not src_path.exists():
        return None
    with numpy.load(str(src_path)) as data:
        counts, sizes, flat = data["counts"], data["sizes"], data["flat"]
    context_sets = []
    path_index = 0
    node_offset = 0
    for v, count in enumerate(counts):
        paths = [self_loop(v)]
        for size in sizes[path_index : path_index + count]:
            nodes = tuple(int(x) for x in flat[node_offset : node_offset + size])
            paths.append(Path(nodes=nodes, length=int(size) - 1))
            node_offset += int(size)
        path_index += int(count)
        context_sets.append(ContextSet(target=v, paths=tuple(paths)))
    logger.info("Loaded cached paths from %s", src_path)
    return context_sets
