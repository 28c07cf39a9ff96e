"""Named hyperparameter presets.

``PUBLISHED_HPARAMS`` holds the best CIFM settings per benchmark and backbone as
published; ``BENCHMARKS`` holds each benchmark's task kind and metric set.
Synthetic presets are tuned for the in-repo desk-scale corpora.
"""

from __future__ import annotations

_BENCH = ["EmojiEval", "EmotionEval", "HatEval", "IronyEval", "OffensEval", "SentiEval", "StanceEval",
          "ISEAR", "MELD", "GoEmotions", "STS-B", "CLAIRE", "EmoBank"]


def _rows(beta, tau, rate, eps, wd):
    return {name: {"beta": b, "tau": t, "rate": r, "epsilon": e, "weight_decay": w}
            for name, b, t, r, e, w in zip(_BENCH, beta, tau, rate, eps, wd)}


PUBLISHED_HPARAMS = {
    "bert": _rows(
        beta=[1, 0.1, 10, 0.01, 0.01, 0.1, 0.1, 0.1, 0.1, 0.1],
        tau=[0.1, 0.1, 0.1, 1, 0.1, 0.5, 0.1, 0.1, 0.1, 0.1],
        rate=[1, 1, 1, 1, 0.1, 1, 1, 1, 1, 1],
        eps=[0.1, 1, 0.1, 5, 5, 1, 1, 5, 1, 0.1],
        wd=[0, 0.001, 0.01, 0.001, 0, 0, 0.001, 0, 0.001, 0],
    ),
    "roberta": _rows(
        beta=[0.01, 1, 10, 1, 1, 0.01, 0.1, 0.1, 1, 0.1, 0.001, 0.01, 0.01],
        tau=[0.1, 0.5, 0.1, 1, 1, 0.1, 0.5, 0.1, 1, 0.1, 0.1, 1, 1],
        rate=[1, 0.1, 1, 0.1, 1, 1, 1, 1, 1, 1, 1, 0.1, 0.1],
        eps=[0.1, 5, 0.1, 0.1, 1, 1, 0.1, 0.1, 1, 1, 5, 0.1, 1],
        wd=[0, 0, 0.01, 0.01, 0.001, 0, 0, 0, 0, 0, 0, 0, 0],
    ),
}

# Search grids used to pick the values above.
SEARCH_GRID = {
    "beta_classification": [0.01, 0.1, 1, 10],
    "beta_regression": [0.001, 0.01, 0.1],
    "tau": [0.1, 0.5, 1],
    "rate": [0.1, 1],
    "epsilon": [0.1, 1, 5],
}

BENCHMARKS = {
    "EmojiEval": {"task_kind": "classification", "metrics": ["macro_f1"]},
    "EmotionEval": {"task_kind": "classification", "metrics": ["macro_f1"]},
    "HatEval": {"task_kind": "classification", "metrics": ["macro_f1"]},
    "IronyEval": {"task_kind": "classification", "metrics": ["f1_class"],
                  "metric_options": {"positive_class": "irony"}},
    "OffensEval": {"task_kind": "classification", "metrics": ["macro_f1"]},
    "SentiEval": {"task_kind": "classification", "metrics": ["macro_recall"]},
    "StanceEval": {"task_kind": "classification", "metrics": ["macro_f1_subset"],
                   "metric_options": {"class_subset": ["favor", "against"]}},
    "ISEAR": {"task_kind": "classification", "metrics": ["macro_f1"]},
    "MELD": {"task_kind": "classification", "metrics": ["macro_f1"]},
    "GoEmotions": {"task_kind": "classification", "metrics": ["macro_f1"]},
    "STS-B": {"task_kind": "regression", "metrics": ["pearson", "spearman"]},
    "CLAIRE": {"task_kind": "regression", "metrics": ["pearson", "spearman"]},
    "EmoBank": {"task_kind": "regression", "metrics": ["pearson"], "target_dim": 3},
}


def published_preset(backbone: str, benchmark: str) -> dict:
    """Config fragment (objective/cim/train sections) for a published benchmark setting."""
    try:
        hp = PUBLISHED_HPARAMS[backbone.lower()][benchmark]
    except KeyError:
        raise KeyError(f"no published setting for {backbone}/{benchmark}") from None
    task_kind = BENCHMARKS[benchmark]["task_kind"]
    return {
        "objective": {"beta": hp["beta"], "tau": hp["tau"], "mi_estimator": "infonce", "task_kind": task_kind},
        "cim": {"epsilon": hp["epsilon"], "rate": hp["rate"], "norm": "l2"},
        "train": {"weight_decay": hp["weight_decay"], "lr": 5e-5, "epochs": 20, "batch_size": 128,
                  "max_length": 128, "patience": 5},
    }


# Desk-scale defaults: models train from scratch, so the learning rate is far
# above the fine-tuning value; beta/tau/epsilon stay on the published grids.
SYNTHETIC_DATA = {
    "synthetic-separable": {"synthetic": "separable"},
    "synthetic-noisy": {"synthetic": "noisy"},
    "synthetic-regression": {"synthetic": "regression"},
    "synthetic-xor": {"synthetic": "xor"},
    "synthetic-taxonomy": {"synthetic": "taxonomy-pair"},
}

# per-corpus model and schedule; the noisy corpus is the tiny-transformer benchmark
SYNTHETIC_MODEL = {"synthetic-noisy": {"arch": "transformer", "pooling": "mean"}}
SYNTHETIC_TRAIN_OVERRIDES = {"synthetic-noisy": {"lr": 5e-3, "epochs": 30}}

METHODS = {
    "ce": {"objective": {"beta": 0.0}, "cim": None},
    "ifm": {"objective": {"beta": 0.1, "tau": 0.1}, "cim": None},
    "cifm": {"objective": {"beta": 0.1, "tau": 0.1}, "cim": {"epsilon": 0.1, "rate": 1.0}},
}

SYNTHETIC_TRAIN = {"lr": 1e-2, "batch_size": 64, "epochs": 20, "patience": 5, "seeds": [0, 1, 2, 3, 4],
                   "max_length": 64}


def resolve_preset(name: str) -> dict:
    """``<data>+<method>`` for synthetic data, or ``<backbone>/<benchmark>`` for a published setting."""
    if "/" in name:
        backbone, bench = name.split("/", 1)
        frag = published_preset(backbone, bench)
        frag["dataset"] = {"benchmark": bench}
        return frag
    data, _, method = name.partition("+")
    if data not in SYNTHETIC_DATA:
        raise KeyError(f"unknown data preset {data!r}; choose from {sorted(SYNTHETIC_DATA)}")
    method = method or "cifm"
    if method not in METHODS:
        raise KeyError(f"unknown method preset {method!r}; choose from {sorted(METHODS)}")
    frag = {"dataset": dict(SYNTHETIC_DATA[data]), "train": {**SYNTHETIC_TRAIN, **SYNTHETIC_TRAIN_OVERRIDES.get(data, {})},
            "model": {"arch": "mlp", **SYNTHETIC_MODEL.get(data, {})}}
    m = METHODS[method]
    frag["objective"] = dict(m["objective"])
    frag["cim"] = dict(m["cim"]) if m["cim"] else None
    if data == "synthetic-regression":
        frag["objective"]["task_kind"] = "regression"
        if frag["objective"]["beta"]:
            frag["objective"]["beta"] = 0.01
    return frag
