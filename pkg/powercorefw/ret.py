"""
File: powercorefw/ret.py
Regression tree for PowerCoreFW.

A CART-style tree over numeric counters. A node p is split on the feature and
midpoint that maximize the sum-of-squares reduction I(p) = e_p - (e_l + e_r).
The node is only expanded when its complexity index
beta_p = I(p) / (n_l + n_r + 1), taken relative to the root's
e_root / (N + 1), exceeds alpha. Leaves predict the mean of their training
targets.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import Dataset
from .security import InputValidationError, validate_names, validate_vector
from .utils import get_logger

logger = get_logger(__name__)

DEFAULT_ALPHA = 0.01
MIN_NODE_SIZE = 2
# relative gain difference below which two candidate splits count as tied
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LeafNode:
    prediction: float
    n: int


@dataclass(frozen=True)
class SplitNode:
    variable: str
    split_value: float
    left: "TreeNode"
    right: "TreeNode"
    gain: float
    n: int


TreeNode = Union[LeafNode, SplitNode]


@dataclass(frozen=True)
class SplitCandidate:
    variable: str
    split_value: float
    gain: float


@dataclass(frozen=True)
class TreeModel:
    root: TreeNode
    alpha: float
    features: Tuple[str, ...]
    target: str = "power_w"

    def predict(self, x: Any) -> float:
        return predict_ret(self, x)

    def predict_many(self, matrix: Any) -> np.ndarray:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != len(self.features):
            raise InputValidationError(
                f"expected a (rows, {len(self.features)}) matrix, got shape {matrix.shape}"
            )
        return np.array([_route(self, row) for row in matrix])

    def leaves(self) -> List[LeafNode]:
        found = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, LeafNode):
                found.append(node)
            else:
                stack.extend((node.right, node.left))
        return found

    def internal_count(self) -> int:
        return len(self.leaves()) - 1

    def to_dict(self) -> Dict[str, Any]:
        alpha = self.alpha if math.isfinite(self.alpha) else "inf"
        return {"alpha": alpha, "root": _node_to_dict(self.root)}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], features: Sequence[str], target: str) -> "TreeModel":
        return cls(_node_from_dict(doc["root"]), float(doc["alpha"]), tuple(features), target)


def _node_to_dict(node: TreeNode) -> Dict[str, Any]:
    if isinstance(node, LeafNode):
        return {"leaf": True, "prediction": node.prediction, "n": node.n}
    return {
        "leaf": False,
        "variable": node.variable,
        "split_value": node.split_value,
        "gain": node.gain,
        "n": node.n,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(doc: Dict[str, Any]) -> TreeNode:
    if doc["leaf"]:
        return LeafNode(float(doc["prediction"]), int(doc["n"]))
    return SplitNode(
        doc["variable"],
        float(doc["split_value"]),
        _node_from_dict(doc["left"]),
        _node_from_dict(doc["right"]),
        float(doc["gain"]),
        int(doc["n"]),
    )


def sse(y: np.ndarray) -> float:
    """Sum of squared deviations from the mean."""
    if y.shape[0] == 0:
        return 0.0
    centered = y - y.mean()
    return float(centered @ centered)


def _feature_split(values: np.ndarray, y: np.ndarray) -> Optional[Tuple[float, float]]:
    """
    Best midpoint split of one feature.

    Returns:
        (gain, split_value) or None when the feature is constant
    """
    order = np.argsort(values, kind="stable")
    xs = values[order]
    ys = y[order] - y.mean()
    n = ys.shape[0]

    boundaries = np.flatnonzero(xs[1:] != xs[:-1])  # last index of each left side
    if boundaries.size == 0:
        return None

    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    total, total_sq = csum[-1], csq[-1]
    n_left = boundaries + 1.0
    n_right = n - n_left
    left_sum = csum[boundaries]
    right_sum = total - left_sum
    e_parent = total_sq - total * total / n
    e_left = csq[boundaries] - left_sum * left_sum / n_left
    e_right = (total_sq - csq[boundaries]) - right_sum * right_sum / n_right
    gains = e_parent - (e_left + e_right)

    best = float(gains.max())
    tied = np.flatnonzero(gains >= best - TIE_TOLERANCE * max(1.0, abs(best)))
    pick = boundaries[tied[0]]  # lowest split value among ties
    a, b = float(xs[pick]), float(xs[pick + 1])
    mid = (a + b) / 2.0
    if not a <= mid < b:
        mid = a
    return float(gains[tied[0]]), mid


def _best_split_arrays(x: np.ndarray, y: np.ndarray, features: Sequence[str]) -> Optional[SplitCandidate]:
    if y.shape[0] < MIN_NODE_SIZE or np.all(y == y[0]):
        return None
    best: Optional[SplitCandidate] = None
    for j in sorted(range(len(features)), key=lambda i: features[i]):
        found = _feature_split(x[:, j], y)
        if found is None:
            continue
        gain, value = found
        if best is None or gain > best.gain + TIE_TOLERANCE * max(1.0, abs(best.gain)):
            best = SplitCandidate(features[j], value, gain)
    if best is None or best.gain <= 0.0:
        return None
    return best


def best_split(d: Dataset, target: str, features: Sequence[str]) -> Optional[SplitCandidate]:
    """
    Find the split maximizing I(p) = e_p - (e_l + e_r).

    Every feature and every midpoint between consecutive distinct sorted values
    is evaluated. Ties go to the alphabetically first feature, then to the
    lower split value.

    Args:
        d: Rows of the node
        target: Dependent variable
        features: Candidate split variables

    Returns:
        SplitCandidate, or None when no split reduces the error (e.g. all
        targets identical)

    Raises:
        InputValidationError: Fewer than 2 rows

    Examples:
        >>> best_split(d, "y", ["x"])   # x = [1,2,3,4], y = [1,1,10,10]
        SplitCandidate(variable='x', split_value=2.5, gain=81.0)
    """
    if d.n_rows < 2:
        raise InputValidationError(f"best_split needs at least 2 rows, got {d.n_rows}")
    features = list(validate_names(features, "features"))
    return _best_split_arrays(d.matrix(features), np.array(d.column(target)), features)


def fit_ret(
    d: Dataset,
    target: Optional[str] = None,
    features: Optional[Sequence[str]] = None,
    alpha: float = DEFAULT_ALPHA,
) -> TreeModel:
    """
    Grow a regression tree with the complexity-index stopping rule.

    Args:
        d: Training dataset, at least 2 rows
        target: Dependent variable (default: the power variable)
        features: Split variables (default: every other variable); an empty
            list yields a single leaf
        alpha: Stop threshold on the root-relative complexity index

    Returns:
        TreeModel

    Examples:
        >>> fit_ret(d, "y", ["x"]).internal_count()
        1
    """
    target = target or d.power_variable()
    features = list(features) if features is not None else d.feature_names(target)
    validate_names(features, "features")
    if target in features:
        raise InputValidationError(f"target {target!r} cannot also be a feature")
    if d.n_rows < 2:
        raise InputValidationError(f"fit_ret needs at least 2 rows, got {d.n_rows}")
    if math.isnan(alpha) or alpha < 0:
        raise InputValidationError(f"alpha must be >= 0, got {alpha}")

    x = d.matrix(features)
    y = np.array(d.column(target), dtype=np.float64)
    n_total = y.shape[0]
    root_scale = sse(y) / (n_total + 1)

    # plans[i] is ("leaf", mean, n) or ("split", candidate, n, left_id, right_id);
    # children always come after their parent.
    plans: List[Tuple[Any, ...]] = []
    stack: List[Tuple[np.ndarray, int]] = [(np.arange(n_total), 0)]
    plans.append(())
    while stack:
        rows, slot = stack.pop()
        ys = y[rows]
        candidate = None
        if features and root_scale > 0.0:
            candidate = _best_split_arrays(x[rows], ys, features)
        if candidate is not None:
            j = features.index(candidate.variable)
            go_left = x[rows, j] <= candidate.split_value
            left_rows, right_rows = rows[go_left], rows[~go_left]
            complexity = candidate.gain / (left_rows.shape[0] + right_rows.shape[0] + 1)
            if complexity / root_scale <= alpha:
                candidate = None
        if candidate is None:
            plans[slot] = ("leaf", float(ys.mean()), int(ys.shape[0]))
            continue
        left_slot, right_slot = len(plans), len(plans) + 1
        plans.extend([(), ()])
        plans[slot] = ("split", candidate, int(ys.shape[0]), left_slot, right_slot)
        stack.append((right_rows, right_slot))
        stack.append((left_rows, left_slot))

    built: List[Optional[TreeNode]] = [None] * len(plans)
    for slot in range(len(plans) - 1, -1, -1):
        plan = plans[slot]
        if plan[0] == "leaf":
            built[slot] = LeafNode(plan[1], plan[2])
        else:
            candidate, n, left_slot, right_slot = plan[1], plan[2], plan[3], plan[4]
            built[slot] = SplitNode(
                candidate.variable,
                candidate.split_value,
                built[left_slot],
                built[right_slot],
                candidate.gain,
                n,
            )

    model = TreeModel(built[0], float(alpha), tuple(features), target)
    logger.info("fitted regression tree: %d leaves", len(model.leaves()))
    return model


def _route(m: TreeModel, x: np.ndarray) -> float:
    index = {name: i for i, name in enumerate(m.features)}
    node = m.root
    while isinstance(node, SplitNode):
        node = node.left if x[index[node.variable]] <= node.split_value else node.right
    return node.prediction


def predict_ret(m: TreeModel, x: Union[Sequence[float], Mapping[str, float]]) -> float:
    """
    Drop a sample down the tree to a leaf and return its mean.

    Args:
        m: Fitted tree
        x: Feature vector aligned with ``m.features``, or a mapping of
            feature name to value

    Raises:
        InputValidationError: Missing feature value or arity mismatch

    Examples:
        >>> predict_ret(tree, [0.0])
        1.0
    """
    if isinstance(x, Mapping):
        missing = [f for f in m.features if f not in x]
        if missing:
            raise InputValidationError(f"missing feature values: {missing}")
        x = [x[f] for f in m.features]
    vector = validate_vector(x, "x", length=len(m.features))
    return _route(m, vector)


def render_tree(m: TreeModel, digits: int = 4) -> str:
    """Indented text rendering of a tree for inspection."""
    lines: List[str] = []

    def fmt(v: float) -> str:
        return f"{v:.{digits}g}"

    def walk(node: TreeNode, depth: int, prefix: str) -> None:
        pad = "  " * depth
        if isinstance(node, LeafNode):
            lines.append(f"{pad}{prefix}leaf n={node.n} -> {fmt(node.prediction)}")
            return
        lines.append(f"{pad}{prefix}split n={node.n} gain={fmt(node.gain)}")
        walk(node.left, depth + 1, f"{node.variable} <= {fmt(node.split_value)}: ")
        walk(node.right, depth + 1, f"{node.variable} > {fmt(node.split_value)}: ")

    walk(m.root, 0, "")
    return "\n".join(lines)
