"""Python interface to the guided adversarial training core.

Configs are plain dicts merged over ``default_config()``; unknown keys raise
``ConfigError``.
"""

from ._gat_lab import (
    ConfigError,
    Corpus,
    Error,
    GraphError,
    IoError,
    Model,
    NumericError,
    ShapeError,
    build_model,
    cosine,
    curvature_measure,
    default_config,
    evaluate,
    generate_synthetic,
    hypervolume_2d,
    load_corpus,
    load_model,
    magnitude_similarity,
    mcnemar,
    mgda,
    min_norm_two_task,
    pearson,
    pgd_attack,
    preset_names,
    roc_auc,
    run_experiment,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
