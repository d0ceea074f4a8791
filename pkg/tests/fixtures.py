"""Small pipeline configs that run end to end in a few seconds."""
from lftsformer.config import _merge, build_config


def tiny_doc(**over) -> dict:
    doc = {
        "synthetic": {"n": 1500, "seed": 0},
        "vmd": {"k_map": {"open": 3, "high": 2, "low": 2, "close": 3}, "max_iter": 150},
        "fe": {"max_points": 300},
        "model": {"seq_len": 32, "pred_len": 8, "d_model": 16, "d_ff": 32},
        "train": {"epochs": 2, "patience": 2, "steps_per_epoch": 4, "batch_size": 16},
    }
    return _merge(doc, over)


def tiny_config(out, seed=0, **over):
    return build_config(tiny_doc(**over), seed=seed, out=str(out))
