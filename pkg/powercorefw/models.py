"""
File: powercorefw/models.py
Model documents and trainer dispatch for PowerCoreFW.

A fitted model is saved as a versioned JSON document holding its kind,
target, feature names, kind-specific parameters (normalization recipes
included) and provenance. Floats are written with round-trip precision, so
a loaded model predicts bit-identically to the one that was saved.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import json
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Sequence, Union

import numpy as np

from .dataset import Dataset
from .mlp import DEFAULT_EPOCHS, MlpConfig, MlpModel, configuration_search, train_mlp
from .mlr import LinearModel, fit_mlr
from .ret import DEFAULT_ALPHA, TreeModel, fit_ret
from .security import InputValidationError, ModelError, validate_vector
from .utils import get_logger

logger = get_logger(__name__)

SCHEMA_NAME = "powercorefw.model"
SCHEMA_VERSION = 1
MODEL_KINDS = ("mlr", "ret", "mlp")

AnyModel = Union[LinearModel, TreeModel, MlpModel]
_CLASSES = {"mlr": LinearModel, "ret": TreeModel, "mlp": MlpModel}


def tool_version() -> str:
    from .core import PowerCoreFW

    return PowerCoreFW._version


def kind_of(model: AnyModel) -> str:
    for kind, cls in _CLASSES.items():
        if isinstance(model, cls):
            return kind
    raise ModelError(f"not a PowerCoreFW model: {type(model).__name__}")


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A trained model plus where it came from."""

    model: AnyModel
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return kind_of(self.model)

    @property
    def features(self) -> Sequence[str]:
        return self.model.features

    @property
    def target(self) -> str:
        return self.model.target

    def predict(self, x: Any) -> float:
        return self.model.predict(x)

    def predict_many(self, matrix: Any) -> np.ndarray:
        return self.model.predict_many(matrix)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": SCHEMA_NAME,
            "version": SCHEMA_VERSION,
            "kind": self.kind,
            "target": self.target,
            "features": list(self.features),
            "params": self.model.to_dict(),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "FittedModel":
        if doc.get("schema") != SCHEMA_NAME:
            raise ModelError("not a PowerCoreFW model document")
        if doc.get("version") != SCHEMA_VERSION:
            raise ModelError(f"unsupported model schema version {doc.get('version')}")
        kind = doc.get("kind")
        if kind not in _CLASSES:
            raise ModelError(f"unknown model kind {kind!r}")
        try:
            model = _CLASSES[kind].from_dict(doc["params"], doc["features"], doc["target"])
        except (KeyError, TypeError, ValueError) as e:
            raise ModelError(f"malformed {kind} model document: {e}")
        return cls(model, dict(doc.get("provenance", {})))


def model_to_string(fitted: FittedModel) -> str:
    return json.dumps(fitted.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def save_model(fitted: FittedModel, path: str) -> None:
    """
    Write a model document.

    Raises:
        ModelError: Parameters contain non-finite values
    """
    try:
        text = model_to_string(fitted)
    except ValueError as e:
        raise ModelError(f"cannot serialize model: {e}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    logger.info("saved %s model to %s", fitted.kind, path)


def load_model(path: str) -> FittedModel:
    """
    Read a model document written by ``save_model``.

    Raises:
        ModelError: Missing file, invalid JSON or unknown schema
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ModelError(f"model file not found: {path}")
    except json.JSONDecodeError as e:
        raise ModelError(f"{path}: invalid model document ({e})")
    return FittedModel.from_dict(doc)


def predict_row(fitted: FittedModel, row: Any, row_number: Optional[int] = None) -> float:
    """
    Predict one raw feature row, naming the row on arity errors.

    Raises:
        InputValidationError: Arity mismatch or non-finite value
    """
    try:
        x = validate_vector(row, "row", length=len(fitted.features))
    except InputValidationError as e:
        where = f"row {row_number}: " if row_number is not None else ""
        raise InputValidationError(f"{where}{e}")
    return fitted.predict(x)


Trainer = Callable[[Dataset, str, Sequence[str]], AnyModel]


def make_trainer(
    kind: str,
    alpha: float = DEFAULT_ALPHA,
    mlp_config: Optional[MlpConfig] = None,
    search_budget: Optional[int] = None,
    seed: int = 0,
    epochs: int = DEFAULT_EPOCHS,
) -> Trainer:
    """
    Return ``trainer(dataset, target, features) -> model`` for ``kind``.

    For "mlp" without an explicit config, the configuration search runs on
    each training set first and the winner is trained for ``epochs`` epochs.

    Raises:
        InputValidationError: Unknown kind

    Examples:
        >>> make_trainer("mlr")(d, "power_w", ["cpu_user"]).coefficients
        (2.0,)
    """
    if kind == "mlr":
        return lambda d, target, features: fit_mlr(d, target, features)
    if kind == "ret":
        return lambda d, target, features: fit_ret(d, target, features, alpha)
    if kind == "mlp":
        def train(d: Dataset, target: str, features: Sequence[str]) -> MlpModel:
            cfg = mlp_config or replace(
                configuration_search(d, target, features, budget=search_budget, seed=seed), epochs=epochs
            )
            return train_mlp(d, target, features, cfg)

        return train
    raise InputValidationError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def fit_model(
    d: Dataset,
    kind: str,
    target: Optional[str] = None,
    features: Optional[Sequence[str]] = None,
    seed: int = 0,
    **params: Any,
) -> FittedModel:
    """Train a model of ``kind`` and attach provenance."""
    target = target or d.power_variable()
    features = list(features) if features is not None else d.feature_names(target)
    model = make_trainer(kind, seed=seed, **params)(d, target, features)
    config: Dict[str, Any] = {}
    if isinstance(model, TreeModel):
        config = {"alpha": model.to_dict()["alpha"]}
    elif isinstance(model, MlpModel) and model.config is not None:
        config = model.config.to_dict()
    provenance = {
        "dataset": d.label,
        "rows": d.n_rows,
        "seed": seed,
        "config": config,
        "tool_version": tool_version(),
    }
    return FittedModel(model, provenance)
