"""Reading and writing table models as JSON files.

File layout (all probabilities are plain JSON numbers):

    {
      "vocab": ["PLAN", "GUESS", ..., "EOS"],
      "eos": "EOS",
      "order": 2,
      "max_len": 4,
      "cond": {"^ ^": [0.4, 0.6, 0, 0, 0, 0], "^ PLAN": [...], ...},
      "default": [0, 0, 0, 0, 0, 1]        # optional
    }

Context keys are `order` space-separated entries, each a vocab token or
"^" for the start pad.  `resolve_model` additionally accepts the names
of built-in models, so CLI users never need a file for the bundled toy.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import START, TableModel, Vocabulary, build_toy_model

__all__ = [
    "load_model",
    "save_model",
    "resolve_model",
    "validate_model_dict",
    "ModelFileError",
    "BUILTIN_MODELS",
]

BUILTIN_MODELS = {"toy": build_toy_model}


class ModelFileError(ValueError):
    """The model file is malformed (missing keys, bad rows, unknown tokens)."""


def _parse_context(key: str, vocab: Vocabulary, order: int) -> tuple[int, ...]:
    parts = key.split()
    if len(parts) != order:
        raise ModelFileError(
            f"context {key!r} has {len(parts)} entries, expected order={order}"
        )
    out = []
    for part in parts:
        if part == "^":
            out.append(START)
        else:
            try:
                out.append(vocab.id_of(part))
            except KeyError:
                raise ModelFileError(f"context {key!r}: unknown token {part!r}") from None
    return tuple(out)


def model_from_dict(doc: dict) -> TableModel:
    for field in ("vocab", "eos", "order", "max_len", "cond"):
        if field not in doc:
            raise ModelFileError(f"model file missing {field!r}")
    tokens = tuple(doc["vocab"])
    if doc["eos"] not in tokens:
        raise ModelFileError(f"eos token {doc['eos']!r} not in vocab")
    vocab = Vocabulary(tokens, eos_id=tokens.index(doc["eos"]))
    order = int(doc["order"])
    cond = {}
    for key, row in doc["cond"].items():
        cond[_parse_context(key, vocab, order)] = np.asarray(row, dtype=np.float64)
    default = None
    if doc.get("default") is not None:
        default = np.asarray(doc["default"], dtype=np.float64)
    try:
        return TableModel(
            vocab,
            max_len=int(doc["max_len"]),
            context_order=order,
            cond=cond,
            default=default,
        )
    except ValueError as exc:
        raise ModelFileError(str(exc)) from exc


def load_model(path: str | Path) -> TableModel:
    """Load a table model from a JSON model file."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ModelFileError(f"{path}: expected a JSON object at top level")
    return model_from_dict(doc)


def save_model(model: TableModel, path: str | Path) -> None:
    """Write a model file that `load_model` reproduces exactly."""
    Path(path).write_text(json.dumps(model.canonical_dict(), indent=2, sort_keys=True) + "\n")


def validate_model_dict(doc) -> list[str]:
    """All problems with a parsed model document, as human-readable strings.

    Unlike `model_from_dict`, which raises on the first defect, this
    accumulates every violation it can find so a user can fix a file in
    one pass.  An empty list means the document is a valid model file.
    """
    problems: list[str] = []
    if not isinstance(doc, dict):
        return ["top level: expected a JSON object"]
    for field in ("vocab", "eos", "order", "max_len", "cond"):
        if field not in doc:
            problems.append(f"missing field {field!r}")
    vocab = doc.get("vocab")
    tokens: tuple[str, ...] = ()
    if vocab is not None:
        if not isinstance(vocab, list) or not all(isinstance(t, str) for t in vocab):
            problems.append("vocab: must be a list of token strings")
        elif len(set(vocab)) != len(vocab):
            problems.append("vocab: duplicate token names")
        elif "^" in vocab:
            problems.append('vocab: "^" is reserved for the start pad')
        else:
            tokens = tuple(vocab)
    if "eos" in doc and tokens and doc["eos"] not in tokens:
        problems.append(f"eos: token {doc['eos']!r} not in vocab")
    order = doc.get("order")
    if order is not None and (not isinstance(order, int) or order < 1):
        problems.append("order: must be an integer >= 1")
        order = None
    max_len = doc.get("max_len")
    if max_len is not None and (not isinstance(max_len, int) or max_len < 1):
        problems.append("max_len: must be an integer >= 1")

    def check_row(label: str, row) -> None:
        if not isinstance(row, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in row
        ):
            problems.append(f"{label}: must be a list of numbers")
            return
        if tokens and len(row) != len(tokens):
            problems.append(f"{label}: has {len(row)} entries, expected {len(tokens)}")
            return
        if any(x < 0 for x in row):
            problems.append(f"{label}: negative probability")
            return
        total = float(sum(row))
        if abs(total - 1.0) > 1e-6:
            problems.append(f"{label}: probabilities sum to {total:.6g}, expected 1")

    cond = doc.get("cond")
    if cond is not None:
        if not isinstance(cond, dict) or not cond:
            problems.append("cond: must be a non-empty object of context rows")
        else:
            names = set(tokens)
            for key, row in cond.items():
                parts = key.split()
                if order is not None and len(parts) != order:
                    problems.append(
                        f"cond[{key!r}]: context has {len(parts)} entries, "
                        f"expected order={order}"
                    )
                if tokens:
                    unknown = [p for p in parts if p != "^" and p not in names]
                    if unknown:
                        problems.append(f"cond[{key!r}]: unknown token {unknown[0]!r}")
                check_row(f"cond[{key!r}]", row)
    if doc.get("default") is not None:
        check_row("default", doc["default"])
    return problems


def resolve_model(name_or_path: str) -> TableModel:
    """Turn a CLI model argument into a model.

    Built-in names ("toy") win; anything else is treated as a file path.
    """
    builder = BUILTIN_MODELS.get(name_or_path)
    if builder is not None:
        return builder()
    path = Path(name_or_path)
    if not path.exists():
        raise ModelFileError(
            f"{name_or_path!r} is neither a built-in model "
            f"({', '.join(sorted(BUILTIN_MODELS))}) nor an existing file"
        )
    return load_model(path)
