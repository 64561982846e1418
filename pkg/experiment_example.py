from pathlib import Path

DATASET_LABEL = "dblp_bfs2000"
EDGES = Path("data/dblp/edges.tsv")
FEATURES = Path("data/dblp/features.npy")
LABELS = Path("data/dblp/node_types.tsv")
OUTPUT_DIR = Path("output/dblp_bfs2000")

SEED = 7
RATIOS = (0.8, 0.1, 0.1)
ABLATION_SEEDS = [0, 1, 2]
PSEUDO_KS = [1, 3, 10]
SCALING_SIZES = [5000, 10000, 20000]

TRAIN_SETTINGS = {
    "num_layers": 2,
    "hidden_dims": [32, 32],
    "semantic_dims": [10, 10],
    "num_paths": 50,
    "max_path_length": 4,
    "decay": 0.1,
    "margin": 0.2,
    "film_weight": 0.0001,
    "batch_size": 256,
    "learning_rate": 0.005,
    "patience": 5,
}
