"""Item co-interaction graph embeddings with a two-tower retrieval layer."""

from ._core import (  # noqa: F401
    Catalog,
    EvalSplit,
    GraphBuildConfig,
    HeteroGraph,
    HgnnConfig,
    HgnnParams,
    HgnnTrainResult,
    HitRateRow,
    InteractionEvent,
    ItemEmbeddingStore,
    SagerecError,
    SyntheticConfig,
    TwoTowerConfig,
    TwoTowerParams,
    TwoTowerTrainResult,
    build_graph,
    export_embeddings,
    generate_synthetic,
    hit_rate_at_k,
    infer_new_item,
    load_interactions,
    resolve_item_embedding,
    run_pipeline,
    save_interactions,
    temporal_split,
    text_features,
    train_hgnn,
    train_two_tower,
)

__version__ = "0.1.0"
