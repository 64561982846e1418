"""
One function per command. Each loads what it needs from the RunConfig,
delegates to trainer / eval_bench / baselines, prints a table and leaves
JSON (plus .txt / .png) artifacts in the output directory.

"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from lhg_link.baselines import (
    TransEConfig,
    baseline_name,
    evaluate_transe,
    load_pseudo_types,
    pseudo_types_for,
    save_pseudo_types,
    transe_train,
)
from lhg_link.common import (
    BEST_CHECKPOINT_NAME,
    ID_MAP_FILE_NAME,
    MANIFEST_FILE_NAME,
    CheckpointMismatchError,
    ConfigurationError,
    ContractError,
    write_json,
)
from lhg_link.eval_bench import (
    ablation_table,
    build_queries,
    evaluate_model,
    majority_baseline,
    metrics_report,
    node_type_probe,
    run_ablation,
    stratified_probe_split,
)
from lhg_link.graph_store import (
    Graph,
    LinkSplit,
    bfs_subgraph,
    check_split_is_partition,
    graph_statistics,
    load_edge_list,
    load_split,
    save_split,
    split_links,
)
from lhg_link.lhgnn_core import ModelParams, embed_all, load_checkpoint
from lhg_link.path_sampler import ContextSet, load_path_cache, save_path_cache
from lhg_link.stats import metrics_table, print_table
from lhg_link.trainer import VARIANTS, TrainConfig, context_sets_for, measure_scaling, train
from lhg_link.visualise import plot_metric_bars

logger = logging.getLogger(__name__)

SPLIT_DIR_NAME = "split"
PATHS_DIR_NAME = "paths"


@dataclass
class RunConfig:
    edges: Optional[Path] = None
    features: Optional[Path] = None
    labels: Optional[Path] = None
    dataset: str = "graph"
    output_dir: Path = Path("output")
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def split_dir(self) -> Path:
        return self.output_dir / SPLIT_DIR_NAME

    @property
    def paths_dir(self) -> Path:
        return self.output_dir / PATHS_DIR_NAME


def run_config_from_workbook(base_dir: Path, workbook_ptr) -> RunConfig:
    """Reads the module-level settings of a workbook such as experiment_example.py."""
    items = dict(getattr(workbook_ptr, "TRAIN_SETTINGS", {}))
    items["seed"] = workbook_ptr.SEED
    return RunConfig(
        edges=base_dir / workbook_ptr.EDGES,
        features=None if workbook_ptr.FEATURES is None else base_dir / workbook_ptr.FEATURES,
        labels=None if workbook_ptr.LABELS is None else base_dir / workbook_ptr.LABELS,
        dataset=workbook_ptr.DATASET_LABEL,
        output_dir=base_dir / workbook_ptr.OUTPUT_DIR,
        ratios=tuple(workbook_ptr.RATIOS),
        train=TrainConfig.from_items(items),
    )


def load_graph(run: RunConfig) -> Graph:
    if run.edges is None:
        raise ConfigurationError("No edge list: pass --edges or set EDGES in [DATASET].")
    for flag, path in (("--edges", run.edges), ("--features", run.features), ("--labels", run.labels)):
        if path is not None and not path.exists():
            raise ConfigurationError(f"{flag} {str(path)} does not exist.")
    return load_edge_list(
        run.edges,
        feature_path=run.features,
        label_path=run.labels,
        id_map_path=run.output_dir / ID_MAP_FILE_NAME,
    )


def load_prepared(run: RunConfig, g: Optional[Graph] = None) -> Tuple[LinkSplit, List[ContextSet]]:
    """The split written by `prepare` (split afresh when absent) and its cached path sets."""
    g = g if g is not None else load_graph(run)
    if (run.split_dir / MANIFEST_FILE_NAME).exists():
        split = load_split(run.split_dir, g)
    else:
        logger.info("No prepared split in %s; splitting with seed %d.", run.split_dir, run.train.seed)
        split = split_links(g, run.ratios, run.train.seed)
    cfg = run.train
    context_sets = load_path_cache(run.paths_dir, cfg.seed, cfg.num_paths, cfg.max_path_length, cfg.truncation)
    if context_sets is None or len(context_sets) != split.train_graph.node_count:
        context_sets = context_sets_for(cfg, split.train_graph)
    return split, context_sets


def run_prepare(run: RunConfig, cache_paths: bool = True) -> Dict:
    g = load_graph(run)
    split = split_links(g, run.ratios, run.train.seed)
    check_split_is_partition(split)
    manifest = save_split(
        split, run.split_dir, extra={"dataset": run.dataset, "fingerprint": run.train.fingerprint()}
    )
    if cache_paths:
        cfg = run.train
        save_path_cache(
            context_sets_for(cfg, split.train_graph),
            run.paths_dir,
            cfg.seed,
            cfg.num_paths,
            cfg.max_path_length,
            cfg.truncation,
        )
    print_table(graph_statistics(g, split, run.dataset), dst_path=run.split_dir / "statistics.txt")
    return manifest


def run_train(run: RunConfig) -> Dict:
    split, context_sets = load_prepared(run)
    result = train(run.train, split, context_sets, output_dir=run.output_dir, dataset=run.dataset)
    return result.report.as_dict()


def load_matching_checkpoint(checkpoint: Path, config: TrainConfig) -> Tuple[ModelParams, Dict]:
    if not checkpoint.exists():
        raise ConfigurationError(f"--checkpoint {str(checkpoint)} does not exist; run `train` first.")
    params, header = load_checkpoint(checkpoint)
    if header.get("fingerprint") != config.fingerprint():
        raise CheckpointMismatchError(header.get("fingerprint"), config.fingerprint())
    return params, header


def run_eval(run: RunConfig, checkpoint: Optional[Path] = None, which: str = "test") -> Dict:
    cfg = run.train
    params, _ = load_matching_checkpoint(checkpoint or run.output_dir / BEST_CHECKPOINT_NAME, cfg)
    split, context_sets = load_prepared(run)
    queries = build_queries(split, cfg.seed, which=which)
    metrics = evaluate_model(
        params,
        split.train_graph.features,
        context_sets,
        queries,
        cfg.decay,
        cfg.leaky_slope,
        personalize=cfg.personalize,
        use_link_encoder=cfg.use_link_encoder,
        workers=cfg.workers,
    )
    report = metrics_report(run.dataset, cfg.variant, cfg.seed, cfg.fingerprint(), metrics)
    report["split"] = which
    write_json(report, run.output_dir / f"metrics_{which}.json")
    print_table(metrics_table([report]), show_index=False)
    return report


def run_ablate(run: RunConfig, variants: Sequence[str] = VARIANTS, seeds: Sequence[int] = (0,)) -> List[Dict]:
    g = load_graph(run)
    reports = []
    for seed in seeds:
        split = split_links(g, run.ratios, seed)
        config = replace(run.train, seed=seed)
        for variant in variants:
            reports.append(run_ablation(variant, config, split, output_dir=run.output_dir, dataset=run.dataset))
    write_json({"reports": reports}, run.output_dir / "ablation.json")
    print_table(ablation_table(reports).drop(columns=["map_mean"]), dst_path=run.output_dir / "ablation.txt")
    plot_metric_bars(reports, run.output_dir / "metrics.png")
    return reports


def run_probe(run: RunConfig, checkpoint: Optional[Path] = None) -> Dict:
    cfg = run.train
    params, _ = load_matching_checkpoint(checkpoint or run.output_dir / BEST_CHECKPOINT_NAME, cfg)
    split, context_sets = load_prepared(run)
    labels = split.full_graph.probe_labels
    if labels is None:
        raise ConfigurationError("The probe needs node type labels: pass --labels or set LABELS in [DATASET].")
    H, S = embed_all(
        split.train_graph.features, context_sets, params, cfg.decay, cfg.leaky_slope, personalize=cfg.personalize
    )
    probe_split = stratified_probe_split(labels, cfg.seed)
    if probe_split.test_nodes.shape[0] == 0:
        raise ContractError("Too few labelled nodes for a probe test set.")
    probe = node_type_probe(H, S, labels, probe_split)
    majority = majority_baseline(labels, probe_split)
    reports = [
        metrics_report(run.dataset, cfg.variant, cfg.seed, cfg.fingerprint(), probe=probe),
        metrics_report(run.dataset, "majority_class", cfg.seed, cfg.fingerprint(), probe=majority),
    ]
    write_json({"probe": reports[0], "majority_baseline": reports[1]}, run.output_dir / "probe.json")
    print_table(metrics_table(reports), show_index=False, dst_path=run.output_dir / "probe.txt")
    return reports[0]


def run_baseline(run: RunConfig, pseudo_ks: Sequence[int] = (1,), recluster: bool = False) -> List[Dict]:
    """
    TransE per K. A pseudo_types_k<K>.tsv already in the output directory is
    reused unless `recluster` is set.

    """
    split, _ = load_prepared(run)
    cfg = run.train
    transe_config = TransEConfig.from_train_config(cfg)
    queries = build_queries(split, cfg.seed, which="test")
    reports = []
    for k in pseudo_ks:
        name = baseline_name(k)
        types_path = run.output_dir / f"pseudo_types_k{k}.tsv"
        if types_path.exists() and not recluster:
            logger.info("Reusing pseudo types from %s.", types_path)
            pseudo_types = load_pseudo_types(types_path, split.full_graph.node_ids, k)
        else:
            pseudo_types = pseudo_types_for(split, k, transe_config)
            save_pseudo_types(pseudo_types, split.full_graph.node_ids, types_path)
        params = transe_train(split, pseudo_types, transe_config)
        metrics = evaluate_transe(queries, params, cfg.workers)
        report = metrics_report(run.dataset, name, cfg.seed, cfg.fingerprint(), metrics)
        report["losses"] = params.losses
        write_json(report, run.output_dir / f"{name}.json")
        reports.append(report)
    print_table(metrics_table(reports), show_index=False, dst_path=run.output_dir / "baselines.txt")
    plot_metric_bars(reports, run.output_dir / "baselines.png")
    return reports


def run_scaling(run: RunConfig, sizes: Sequence[int], epochs: int = 1) -> List[Dict]:
    g = load_graph(run)
    graphs = [(f"bfs_{size}", bfs_subgraph(g, size, run.train.seed)) for size in sizes]
    df = measure_scaling(graphs, run.train, epochs=epochs)
    rows = df.astype(object).where(df.notna(), None).to_dict(orient="records")
    write_json(
        {"fingerprint": run.train.fingerprint(), "seed": run.train.seed, "rows": rows},
        run.output_dir / "scaling.json",
    )
    print_table(df, show_index=False, dst_path=run.output_dir / "scaling.txt")
    return rows
