"""
File: powercorefw/mlp.py
Multilayer perceptron for PowerCoreFW.

A fully connected network with tanh activation on every layer, the output
layer included, trained by backpropagation with chunk updates: the loss
gradients of p consecutive samples are summed and the weights move by
-(eta / p) times that sum, once per chunk and once more for the final partial
chunk of an epoch.

Because the output neuron is a tanh, inputs and the target are min-max
normalized into [-0.9, 0.9] before training and the recipes travel with the
model, so predictions are made in raw counter units and returned in watts.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import NORMALIZED_RANGE, Dataset, NormalizationRecipe, fit_normalizer
from .security import (
    DivergenceError,
    InputValidationError,
    validate_names,
    validate_vector,
)
from .utils import get_logger, seeded_rng

logger = get_logger(__name__)

REFERENCE_LEARNING_RATE = 5.0
REFERENCE_CHUNK_SIZE = 50
DEFAULT_EPOCHS = 500
SEARCH_SUBSAMPLE = 0.2
LEARNING_RATE_GRID = tuple(0.25 * i for i in range(1, 41))


@dataclass(frozen=True)
class MlpConfig:
    """Network shape and training schedule."""

    hidden_layers: int = 3
    neurons_per_hidden: int = 8
    learning_rate: float = 0.5
    chunk_size: int = REFERENCE_CHUNK_SIZE
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0
    # stop when training R2 improves less than early_stop_delta over
    # early_stop_patience epochs; patience 0 disables early stopping
    early_stop_patience: int = 20
    early_stop_delta: float = 1e-5

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise InputValidationError(f"hidden_layers must be >= 1, got {self.hidden_layers}")
        if self.neurons_per_hidden < 1:
            raise InputValidationError(f"neurons_per_hidden must be >= 1, got {self.neurons_per_hidden}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise InputValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.chunk_size < 1:
            raise InputValidationError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.epochs < 1:
            raise InputValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.early_stop_patience < 0:
            raise InputValidationError("early_stop_patience must be >= 0")

    def layer_sizes(self, inputs: int) -> List[int]:
        return [inputs] + [self.neurons_per_hidden] * self.hidden_layers + [1]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "MlpConfig":
        return cls(**doc)


def _frozen(a: Any) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class MlpModel:
    """
    Trained network. ``weights[l]`` has shape (q^l, q^(l-1)) and
    ``biases[l]`` length q^l for each of the L layers after the input.
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    features: Tuple[str, ...] = ()
    target: str = "power_w"
    input_recipe: Optional[NormalizationRecipe] = None
    target_recipe: Optional[NormalizationRecipe] = None
    config: Optional[MlpConfig] = None
    history: Tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InputValidationError("an MLP needs one bias vector per weight matrix")
        weights = tuple(_frozen(w) for w in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        for l, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InputValidationError(f"layer {l + 1}: weight {w.shape} and bias {b.shape} do not match")
            if l > 0 and w.shape[1] != weights[l - 1].shape[0]:
                raise InputValidationError(f"layer {l + 1} expects {w.shape[1]} inputs, previous layer has {weights[l - 1].shape[0]}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def predict(self, x: Any) -> float:
        return predict_mlp(self, x)

    def predict_many(self, matrix: Any) -> np.ndarray:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != self.n_inputs:
            raise InputValidationError(
                f"expected a (rows, {self.n_inputs}) matrix, got shape {matrix.shape}"
            )
        normalized = self.input_recipe.apply(matrix) if self.input_recipe else matrix
        raw = _forward_batch(self.weights, self.biases, normalized)[0][-1][:, 0]
        return self.target_recipe.invert(raw) if self.target_recipe else raw

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layers": [
                {"shape": list(w.shape), "weights": w.ravel().tolist(), "biases": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
            "input_recipe": self.input_recipe.to_dict() if self.input_recipe else None,
            "target_recipe": self.target_recipe.to_dict() if self.target_recipe else None,
            "config": self.config.to_dict() if self.config else None,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], features: Sequence[str], target: str) -> "MlpModel":
        weights, biases = [], []
        for layer in doc["layers"]:
            rows, cols = layer["shape"]
            weights.append(np.array(layer["weights"], dtype=np.float64).reshape(rows, cols))
            biases.append(np.array(layer["biases"], dtype=np.float64))
        return cls(
            tuple(weights),
            tuple(biases),
            tuple(features),
            target,
            NormalizationRecipe.from_dict(doc["input_recipe"]) if doc.get("input_recipe") else None,
            NormalizationRecipe.from_dict(doc["target_recipe"]) if doc.get("target_recipe") else None,
            MlpConfig.from_dict(doc["config"]) if doc.get("config") else None,
        )


@dataclass(frozen=True)
class ForwardState:
    """Everything backward needs: o, y^0..y^L and v^1..v^L."""

    output: float
    activations: Tuple[np.ndarray, ...]
    locals: Tuple[np.ndarray, ...]


@dataclass(frozen=True)
class Gradients:
    """Loss gradients (of 0.5 * e^2) per layer, shaped like the parameters."""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    deltas: Tuple[np.ndarray, ...] = ()


def tanh_derivative(v: np.ndarray) -> np.ndarray:
    """phi'(v) = 1 - tanh(v)^2."""
    t = np.tanh(v)
    return 1.0 - t * t


def forward(m: MlpModel, x: Any) -> ForwardState:
    """
    Propagate one normalized input vector layer by layer.

    y^0 = x, v^l = w^l y^(l-1) + b^l, y^l = tanh(v^l) for every layer
    including the output.

    Raises:
        InputValidationError: Arity mismatch

    Examples:
        >>> forward(MlpModel(([[1.0]],), ([0.0],)), [0.0]).output
        0.0
    """
    y = validate_vector(x, "x", length=m.n_inputs)
    activations = [y]
    local_fields = []
    for w, b in zip(m.weights, m.biases):
        v = w @ y + b
        y = np.tanh(v)
        local_fields.append(v)
        activations.append(y)
    return ForwardState(float(y[0]), tuple(activations), tuple(local_fields))


def backward(m: MlpModel, state: ForwardState, desired: float) -> Gradients:
    """
    Local gradients and per-weight loss gradients for one sample.

    e = d - o; delta^L = e * phi'(v^L);
    delta^l = phi'(v^l) * (w^(l+1))^T delta^(l+1). The loss 0.5 * e^2 has
    gradient -delta^l_j * y^(l-1)_i for weight w_ij and -delta^l_j for the
    bias; those are the contributions returned, so a chunk update is
    w <- w - (eta / p) * sum of contributions.

    Examples:
        >>> state = forward(m, x)
        >>> backward(m, state, state.output).weights[0].any()
        False
    """
    error = float(desired) - state.output
    layers = m.n_layers
    deltas: List[np.ndarray] = [np.empty(0)] * layers
    deltas[-1] = error * tanh_derivative(state.locals[-1])
    for l in range(layers - 2, -1, -1):
        deltas[l] = tanh_derivative(state.locals[l]) * (m.weights[l + 1].T @ deltas[l + 1])
    grad_w = tuple(-np.outer(deltas[l], state.activations[l]) for l in range(layers))
    grad_b = tuple(-deltas[l] for l in range(layers))
    return Gradients(grad_w, grad_b, tuple(deltas))


def _forward_batch(
    weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x: np.ndarray
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Row-wise forward pass for a (samples, inputs) matrix."""
    activations = [x]
    local_fields = []
    y = x
    for w, b in zip(weights, biases):
        v = y @ w.T + b
        y = np.tanh(v)
        local_fields.append(v)
        activations.append(y)
    return activations, local_fields


def _chunk_gradients(
    weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x: np.ndarray, d: np.ndarray
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Summed per-sample loss gradients over the rows of one chunk."""
    activations, _ = _forward_batch(weights, biases, x)
    layers = len(weights)
    error = d - activations[-1][:, 0]
    delta = error[:, None] * (1.0 - activations[-1] ** 2)
    grad_w: List[np.ndarray] = [np.empty(0)] * layers
    grad_b: List[np.ndarray] = [np.empty(0)] * layers
    for l in range(layers - 1, -1, -1):
        grad_w[l] = -(delta.T @ activations[l])
        grad_b[l] = -delta.sum(axis=0)
        if l > 0:
            delta = (1.0 - activations[l] ** 2) * (delta @ weights[l])
    return grad_w, grad_b


def init_weights(sizes: Sequence[int], rng: np.random.Generator) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """
    Initial weights and biases: standard Gaussian draws truncated to (0, 1).
    """
    def draw(count: int) -> np.ndarray:
        kept: List[np.ndarray] = []
        have = 0
        while have < count:
            sample = rng.standard_normal(max(4 * (count - have), 16))
            sample = sample[(sample > 0.0) & (sample < 1.0)]
            kept.append(sample)
            have += sample.shape[0]
        return np.concatenate(kept)[:count]

    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(draw(fan_in * fan_out).reshape(fan_out, fan_in))
        biases.append(draw(fan_out))
    return weights, biases


def _r2(d: np.ndarray, o: np.ndarray) -> float:
    total = float(((d - d.mean()) ** 2).sum())
    if total == 0.0:
        return 1.0 if np.allclose(d, o) else -math.inf
    return 1.0 - float(((d - o) ** 2).sum()) / total


def _chunks(n: int, p: int) -> Iterator[slice]:
    for start in range(0, n, p):
        yield slice(start, min(start + p, n))


def train_normalized(
    x: np.ndarray,
    d: np.ndarray,
    cfg: MlpConfig,
    weights: Optional[List[np.ndarray]] = None,
    biases: Optional[List[np.ndarray]] = None,
) -> Tuple[List[np.ndarray], List[np.ndarray], List[float]]:
    """
    Chunk-update backpropagation on already normalized data.

    Args:
        x: (samples, inputs) matrix in the recipe range
        d: Desired outputs in the recipe range
        cfg: Network and schedule
        weights, biases: Starting parameters (default: seeded initialization)

    Returns:
        (weights, biases, per-epoch training MSE)

    Raises:
        DivergenceError: Non-finite loss, naming the epoch
    """
    rng = seeded_rng(cfg.seed)
    if weights is None or biases is None:
        weights, biases = init_weights(cfg.layer_sizes(x.shape[1]), rng)
    else:
        weights = [np.array(w, dtype=np.float64) for w in weights]
        biases = [np.array(b, dtype=np.float64) for b in biases]

    n = x.shape[0]
    step = cfg.learning_rate / cfg.chunk_size
    history: List[float] = []
    best_r2 = -math.inf
    best_epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        xs, ds = x[order], d[order]
        for part in _chunks(n, cfg.chunk_size):
            grad_w, grad_b = _chunk_gradients(weights, biases, xs[part], ds[part])
            for l in range(len(weights)):
                weights[l] -= step * grad_w[l]
                biases[l] -= step * grad_b[l]

        output = _forward_batch(weights, biases, x)[0][-1][:, 0]
        loss = float(np.mean((d - output) ** 2))
        if not math.isfinite(loss) or not all(np.all(np.isfinite(w)) for w in weights):
            raise DivergenceError(epoch, loss)
        history.append(loss)

        if cfg.early_stop_patience:
            r2 = _r2(d, output)
            if r2 > best_r2 + cfg.early_stop_delta:
                best_r2, best_epoch = r2, epoch
            elif epoch - best_epoch >= cfg.early_stop_patience:
                logger.debug("early stop at epoch %d (R2=%.6f)", epoch, r2)
                break
    return weights, biases, history


def train_mlp(
    d: Dataset,
    target: Optional[str] = None,
    features: Optional[Sequence[str]] = None,
    cfg: Optional[MlpConfig] = None,
) -> MlpModel:
    """
    Normalize, initialize and train an MLP.

    Inputs and target are min-max normalized into [-0.9, 0.9]; each epoch
    visits the samples in a seeded shuffled order.

    Args:
        d: Training dataset
        target: Dependent variable (default: the power variable)
        features: Inputs (default: every other variable)
        cfg: Configuration (default: MlpConfig())

    Returns:
        MlpModel carrying both normalization recipes and the config

    Raises:
        InputValidationError: Fewer rows than the chunk size
        DivergenceError: Non-finite loss

    Examples:
        >>> m = train_mlp(d, "power_w", ["cpu_user"], MlpConfig(1, 4, 0.5, 10, 200))
    """
    cfg = cfg or MlpConfig()
    target = target or d.power_variable()
    features = list(features) if features is not None else d.feature_names(target)
    validate_names(features, "features")
    if not features:
        raise InputValidationError("an MLP needs at least one feature")
    if target in features:
        raise InputValidationError(f"target {target!r} cannot also be a feature")
    if d.n_rows < cfg.chunk_size:
        raise InputValidationError(
            f"need at least chunk_size={cfg.chunk_size} rows, got {d.n_rows}"
        )

    input_recipe = fit_normalizer(d, NORMALIZED_RANGE, features)
    target_recipe = fit_normalizer(d, NORMALIZED_RANGE, [target])
    x = input_recipe.apply(d.matrix(features))
    desired = target_recipe.apply(d.matrix([target]))[:, 0]

    weights, biases, history = train_normalized(x, desired, cfg)
    logger.info(
        "trained MLP %s on %d rows: %d epochs, final mse %.3g",
        cfg.layer_sizes(len(features)), d.n_rows, len(history), history[-1],
    )
    return MlpModel(
        tuple(weights),
        tuple(biases),
        tuple(features),
        target,
        input_recipe,
        target_recipe,
        cfg,
        tuple(history),
    )


def predict_mlp(m: MlpModel, x: Any) -> float:
    """
    Estimate watts from one raw feature vector.

    The input is normalized with the model's input recipe, propagated, and the
    output denormalized through the target recipe.

    Raises:
        InputValidationError: Arity mismatch

    Examples:
        >>> predict_mlp(m, [0.42, 1500.0])
        87.3
    """
    x = validate_vector(x, "x", length=m.n_inputs)
    normalized = m.input_recipe.apply(x) if m.input_recipe else x
    raw = forward(m, normalized).output
    if m.target_recipe is None:
        return raw
    return float(m.target_recipe.invert(np.array([raw]))[0])


@dataclass(frozen=True)
class SearchTrial:
    config: MlpConfig
    r2: float


def _neuron_range(v: int) -> List[int]:
    return list(range(max(1, v // 10), 2 * v + 1))


def configuration_search(
    d: Dataset,
    target: Optional[str] = None,
    features: Optional[Sequence[str]] = None,
    budget: Optional[int] = None,
    epochs: int = 50,
    chunk_size: int = REFERENCE_CHUNK_SIZE,
    seed: int = 0,
    subsample: float = SEARCH_SUBSAMPLE,
    learning_rates: Optional[Sequence[float]] = None,
    neuron_counts: Optional[Sequence[int]] = None,
    max_hidden_layers: Optional[int] = None,
    trials: Optional[List[SearchTrial]] = None,
) -> MlpConfig:
    """
    Empirical MLP configuration search.

    On a seeded random subsample of about 20% of the rows, every combination
    of neurons per layer (v/10 .. 2v, v = number of inputs) and learning rate
    (0.25 .. 10 by 0.25) is trained and scored by its training R2. The
    hidden-layer count grows from 1 until the best R2 of a layer count falls
    below the previous one. Diverging candidates score -inf. Ties go to the
    smaller network (fewer layers, then fewer neurons, then lower rate).

    Args:
        d: Dataset
        target: Dependent variable (default: the power variable)
        features: Inputs (default: every other variable)
        budget: Maximum number of candidates to train (default: unlimited)
        epochs: Training epochs per candidate
        chunk_size: Chunk size for every candidate
        seed: Seed for the subsample and for every candidate
        subsample: Fraction of rows used by the search
        learning_rates: Override of the learning-rate grid
        neuron_counts: Override of the neurons-per-layer grid
        max_hidden_layers: Upper bound on the hidden-layer count
        trials: If given, every scored candidate is appended to it

    Returns:
        The best MlpConfig (with the requested epochs, chunk size and seed)

    Raises:
        InputValidationError: Empty grid or a subsample too small for one chunk

    Examples:
        >>> configuration_search(d, budget=1).hidden_layers
        1
    """
    target = target or d.power_variable()
    features = list(features) if features is not None else d.feature_names(target)
    rates = list(learning_rates) if learning_rates is not None else list(LEARNING_RATE_GRID)
    rates = [r for r in rates if r > 0]
    neurons = list(neuron_counts) if neuron_counts is not None else _neuron_range(len(features))
    if not rates or not neurons or (budget is not None and budget < 1) or not features:
        raise InputValidationError("configuration search grid is empty")
    if max_hidden_layers is not None and max_hidden_layers < 1:
        raise InputValidationError("configuration search grid is empty")

    rng = seeded_rng(seed)
    size = max(int(round(d.n_rows * subsample)), min(chunk_size, d.n_rows))
    if size < chunk_size:
        raise InputValidationError(
            f"search subsample of {size} rows is smaller than chunk_size={chunk_size}"
        )
    sample = d.take(np.sort(rng.choice(d.n_rows, size=size, replace=False)))

    input_recipe = fit_normalizer(sample, NORMALIZED_RANGE, features)
    target_recipe = fit_normalizer(sample, NORMALIZED_RANGE, [target])
    x = input_recipe.apply(sample.matrix(features))
    desired = target_recipe.apply(sample.matrix([target]))[:, 0]

    best: Optional[SearchTrial] = None
    previous_layer_best = -math.inf
    tried = 0
    layers = 1
    exhausted = False
    while not exhausted and (max_hidden_layers is None or layers <= max_hidden_layers):
        layer_best = -math.inf
        for count in sorted(neurons):
            for rate in sorted(rates):
                if budget is not None and tried >= budget:
                    exhausted = True
                    break
                cfg = MlpConfig(layers, count, rate, chunk_size, epochs, seed, early_stop_patience=0)
                try:
                    w, b, _ = train_normalized(x, desired, cfg)
                    score = _r2(desired, _forward_batch(w, b, x)[0][-1][:, 0])
                except DivergenceError:
                    score = -math.inf
                tried += 1
                trial = SearchTrial(cfg, score)
                if trials is not None:
                    trials.append(trial)
                logger.debug("search h=%d n=%d eta=%.2f -> R2=%.6f", layers, count, rate, score)
                layer_best = max(layer_best, score)
                if best is None or score > best.r2:
                    best = trial
            if exhausted:
                break
        if layer_best <= previous_layer_best:
            break
        previous_layer_best = layer_best
        layers += 1

    if best is None:
        raise InputValidationError("configuration search grid is empty")
    chosen = best.config
    logger.info(
        "configuration search: %d candidates, best h=%d n=%d eta=%.2f R2=%.6f",
        tried, chosen.hidden_layers, chosen.neurons_per_hidden, chosen.learning_rate, best.r2,
    )
    return MlpConfig(chosen.hidden_layers, chosen.neurons_per_hidden, chosen.learning_rate, chunk_size, epochs, seed)


def reference_configuration(n_inputs: int, epochs: int = DEFAULT_EPOCHS, seed: int = 0) -> MlpConfig:
    """3 hidden layers of 2v neurons, eta = 5, chunk size 50."""
    return MlpConfig(3, 2 * n_inputs, REFERENCE_LEARNING_RATE, REFERENCE_CHUNK_SIZE, epochs, seed)


def layer_weight_summary(m: MlpModel) -> List[Dict[str, Any]]:
    """
    Weight statistics per connection category: bias, input-hidden1,
    hiddenK-hiddenK+1 and hiddenH-output.
    """
    hidden = m.n_layers - 1
    names = []
    for l in range(m.n_layers):
        source = "input" if l == 0 else f"hidden{l}"
        sink = "output" if l == hidden else f"hidden{l + 1}"
        names.append(f"{source}-{sink}")

    groups = [("bias", np.concatenate([b for b in m.biases]))]
    groups += [(name, w.ravel()) for name, w in zip(names, m.weights)]
    return [
        {
            "category": name,
            "count": int(values.shape[0]),
            "mean": float(values.mean()),
            "sd": float(values.std(ddof=1)) if values.shape[0] > 1 else 0.0,
            "min": float(values.min()),
            "max": float(values.max()),
        }
        for name, values in groups
    ]
