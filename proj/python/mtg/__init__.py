"""Visual consistency toolkit: feature stacks, synthetic data and VSM scoring."""

import json

from ._core import (
    MtgError,
    load_mask,
    load_stack,
    oracle_score,
    pearson,
    run_pipeline,
    save_mask,
    save_stack,
    skewness,
    spearman,
    synth_generate,
    vsm,
)

__all__ = [
    "MtgError",
    "load_mask",
    "load_stack",
    "oracle_score",
    "pearson",
    "run_pipeline",
    "save_mask",
    "save_stack",
    "skewness",
    "spearman",
    "synth_generate",
    "vsm",
    "config_text",
]


def config_text(path=None, **sections):
    """JSON text for the native config loader, from a file and/or dict sections."""
    cfg = {}
    if path is not None:
        with open(path) as f:
            cfg = json.load(f)
    cfg.update(sections)
    return json.dumps(cfg)
