"""``covaroc-model/1`` JSON model files and deterministic JSON writing.

Floats are written with 17 significant digits so every float64 round-trips
bit-exactly; the stock ``json`` encoder writes the shortest repr instead.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import ConfigurationError, NumericError
from .inference import Posterior

FORMAT = "covaroc-model/1"


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise NumericError(f"cannot serialize non-finite value {x!r}")
    s = format(x, ".17g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj, indent, level):
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k), ensure_ascii=False)}: {_encode(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level) for v in obj) + "]"
        return "[" + pad + ("," + pad).join(_encode(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=1) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def model_to_dict(post_match: Posterior, post_nonmatch: Posterior, config=None,
                  similarity=False) -> dict:
    return {
        "format": FORMAT,
        "similarity": bool(similarity),
        "config": config or {},
        "match": post_match.to_dict(),
        "nonmatch": post_nonmatch.to_dict(),
    }


def write_model(path, post_match, post_nonmatch, config=None, similarity=False) -> None:
    write_json(model_to_dict(post_match, post_nonmatch, config, similarity), path)


def read_model(path) -> dict:
    """Returns a dict with ``match`` and ``nonmatch`` posteriors, ``similarity`` and ``config``."""
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("format") != FORMAT:
        raise ConfigurationError(f"{path}: expected format {FORMAT!r}, found {d.get('format')!r}")
    return {
        "match": Posterior.from_dict(d["match"]),
        "nonmatch": Posterior.from_dict(d["nonmatch"]),
        "similarity": bool(d.get("similarity", False)),
        "config": d.get("config", {}),
    }
