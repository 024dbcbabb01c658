"""Minimal dense-MLP engine: explicit forward/backward passes and Adam.

Everything downstream (attribute generators, discriminators, feature
extractors, downstream-task models) is built from these pieces. All math is
float64; models, traces and gradient sets are plain values with no hidden
shared state, so they can be moved between threads freely.

Weight convention: ``weight`` has shape (out, in) and a batch row vector x
maps to ``x @ weight.T + bias``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("identity", "relu", "leaky_relu", "tanh", "sigmoid")

# log-loss clamp for sigmoid heads; log terms are singular at {0, 1}
SIGMOID_CLAMP = 1e-7

CHECKPOINT_FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Array dimensions do not match the model contract."""


class TraceMismatchError(ValueError):
    """A trace was replayed against a model it was not produced by."""


class NonFiniteError(ValueError):
    """NaN or inf reached an operation that requires finite values."""


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"
    slope: float = 0.0  # leaky_relu negative slope; ignored otherwise

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("layer expects 2-D weight and 1-D bias")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class MlpModel:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer widths do not chain: {a.out_dim} -> {b.in_dim}"
                )
        for i, layer in enumerate(self.layers):
            if not (np.isfinite(layer.weight).all() and np.isfinite(layer.bias).all()):
                raise NonFiniteError(f"non-finite parameter in layer {i}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "MlpModel":
        return MlpModel(
            [
                Layer(l.weight.copy(), l.bias.copy(), l.activation, l.slope)
                for l in self.layers
            ]
        )

    def param_count(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)


@dataclass
class GradientSet:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    def first_layer(self) -> tuple[np.ndarray, np.ndarray]:
        return self.d_weights[0], self.d_biases[0]

    def first_layer_vector(self) -> np.ndarray:
        """First-layer weight and bias gradients flattened to one vector."""
        return np.concatenate([self.d_weights[0].ravel(), self.d_biases[0]])

    def is_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.d_weights) and all(
            np.isfinite(g).all() for g in self.d_biases
        )

    def copy(self) -> "GradientSet":
        return GradientSet(
            [g.copy() for g in self.d_weights], [g.copy() for g in self.d_biases]
        )

    def add_(self, other: "GradientSet") -> "GradientSet":
        for a, b in zip(self.d_weights, other.d_weights):
            a += b
        for a, b in zip(self.d_biases, other.d_biases):
            a += b
        return self

    def scale_(self, c: float) -> "GradientSet":
        for g in self.d_weights:
            g *= c
        for g in self.d_biases:
            g *= c
        return self


@dataclass
class ActivationTrace:
    """Everything backward() needs: the input batch plus per-layer pre/post
    activations. Holds a reference to the producing model so stale replays
    are caught."""

    model: MlpModel
    batch: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def zero_gradients(model: MlpModel) -> GradientSet:
    return GradientSet(
        [np.zeros_like(l.weight) for l in model.layers],
        [np.zeros_like(l.bias) for l in model.layers],
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form never exponentiates a positive argument
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _act(tag: str, x: np.ndarray, slope: float) -> np.ndarray:
    if tag == "identity":
        return x
    if tag == "relu":
        return np.maximum(x, 0.0)
    if tag == "leaky_relu":
        return np.where(x >= 0.0, x, slope * x)
    if tag == "tanh":
        return np.tanh(x)
    if tag == "sigmoid":
        return _sigmoid(x)
    raise ValueError(tag)


def _act_grad(tag: str, pre: np.ndarray, post: np.ndarray, slope: float) -> np.ndarray:
    if tag == "identity":
        return np.ones_like(pre)
    if tag == "relu":
        return (pre > 0.0).astype(np.float64)
    if tag == "leaky_relu":
        return np.where(pre >= 0.0, 1.0, slope)
    if tag == "tanh":
        return 1.0 - post * post
    if tag == "sigmoid":
        return post * (1.0 - post)
    raise ValueError(tag)


def forward(model: MlpModel, batch: np.ndarray) -> ActivationTrace:
    """Run the model on a batch, retaining all intermediates.

    ``batch`` is (B, in_dim) with B >= 1; raises ShapeError on width mismatch
    and NonFiniteError on NaN/inf input.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {batch.shape}")
    if batch.shape[0] < 1:
        raise ShapeError("batch must hold at least one row")
    if batch.shape[1] != model.in_dim:
        raise ShapeError(
            f"batch width {batch.shape[1]} != model input width {model.in_dim}"
        )
    if not np.isfinite(batch).all():
        raise NonFiniteError("non-finite value in input batch")

    trace = ActivationTrace(model=model, batch=batch)
    x = batch
    for layer in model.layers:
        pre = x @ layer.weight.T + layer.bias
        post = _act(layer.activation, pre, layer.slope)
        trace.pre.append(pre)
        trace.post.append(post)
        x = post
    return trace


def backward(
    model: MlpModel, trace: ActivationTrace, output_grad: np.ndarray
) -> tuple[GradientSet, np.ndarray]:
    """Backpropagate d(sum_B <output, output_grad>) through the model.

    Returns the parameter gradients and the gradient with respect to the
    input batch, so updates can flow further back through composed models.
    """
    if trace.model is not model:
        raise TraceMismatchError("trace was produced by a different model")
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != trace.output.shape:
        raise ShapeError(
            f"output_grad shape {output_grad.shape} != output shape {trace.output.shape}"
        )

    d_weights: list[np.ndarray] = [None] * len(model.layers)  # type: ignore[list-item]
    d_biases: list[np.ndarray] = [None] * len(model.layers)  # type: ignore[list-item]

    delta = output_grad
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        delta = delta * _act_grad(layer.activation, trace.pre[i], trace.post[i], layer.slope)
        below = trace.post[i - 1] if i > 0 else trace.batch
        d_weights[i] = delta.T @ below
        d_biases[i] = delta.sum(axis=0)
        delta = delta @ layer.weight

    return GradientSet(d_weights, d_biases), delta


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_model(
        cls,
        model: MlpModel,
        lr: float = 2e-4,
        beta1: float = 0.5,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            t=0,
            m_weights=[np.zeros_like(l.weight) for l in model.layers],
            m_biases=[np.zeros_like(l.bias) for l in model.layers],
            v_weights=[np.zeros_like(l.weight) for l in model.layers],
            v_biases=[np.zeros_like(l.bias) for l in model.layers],
        )


def adam_step(model: MlpModel, grads: GradientSet, state: AdamState) -> None:
    """One Adam update with bias correction, in place.

    Non-finite gradients are rejected before anything is touched, so the
    model is unchanged on error.
    """
    if len(grads.d_weights) != len(model.layers):
        raise ShapeError("gradient set has wrong layer count")
    for layer, dw, db in zip(model.layers, grads.d_weights, grads.d_biases):
        if dw.shape != layer.weight.shape or db.shape != layer.bias.shape:
            raise ShapeError("gradient shapes do not match model")
    if not grads.is_finite():
        raise NonFiniteError("non-finite gradient; model left unchanged")

    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for i, layer in enumerate(model.layers):
        for param, g, m, v in (
            (layer.weight, grads.d_weights[i], state.m_weights[i], state.v_weights[i]),
            (layer.bias, grads.d_biases[i], state.m_biases[i], state.v_biases[i]),
        ):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            param -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def init_mlp(
    dims: list[int],
    activations: list[str],
    rng: np.random.Generator,
    slope: float = 0.2,
) -> MlpModel:
    """Glorot-uniform weights, zero biases.

    ``dims`` is [in, h1, ..., out]; ``activations`` has one tag per layer.
    """
    if len(activations) != len(dims) - 1:
        raise ShapeError("need one activation per layer")
    layers = []
    for d_in, d_out, act in zip(dims, dims[1:], activations):
        bound = np.sqrt(6.0 / (d_in + d_out))
        w = rng.uniform(-bound, bound, size=(d_out, d_in))
        layers.append(Layer(w, np.zeros(d_out), act, slope if act == "leaky_relu" else 0.0))
    return MlpModel(layers)


def identity_mlp(dim: int, n_layers: int = 2) -> MlpModel:
    """Exact passthrough: identity weights, zero bias, identity activation."""
    return MlpModel(
        [Layer(np.eye(dim), np.zeros(dim), "identity") for _ in range(n_layers)]
    )


def clamped_log(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """log(s) with s clamped to [1e-7, 1-1e-7]; returns (value, d/ds)."""
    lo, hi = SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP
    c = np.clip(s, lo, hi)
    inside = (s > lo) & (s < hi)
    return np.log(c), np.where(inside, 1.0 / c, 0.0)


def clamped_log1m(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """log(1-s) with s clamped to [1e-7, 1-1e-7]; returns (value, d/ds)."""
    lo, hi = SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP
    c = np.clip(s, lo, hi)
    inside = (s > lo) & (s < hi)
    return np.log(1.0 - c), np.where(inside, -1.0 / (1.0 - c), 0.0)


def finite_diff_check(model: MlpModel, batch: np.ndarray, loss_fn, h: float = 1e-6) -> float:
    """Worst relative disagreement between backward() and central differences.

    ``loss_fn`` maps the output matrix to (scalar loss, d loss / d output).
    Relative error per parameter is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-12).
    """
    trace = forward(model, batch)
    _, out_grad = loss_fn(trace.output)
    analytic, _ = backward(model, trace, out_grad)

    worst = 0.0
    for i, layer in enumerate(model.layers):
        for param, grad in ((layer.weight, analytic.d_weights[i]), (layer.bias, analytic.d_biases[i])):
            flat = param.ravel()
            gflat = grad.ravel()
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                plus, _ = loss_fn(forward(model, batch).output)
                flat[j] = orig - h
                minus, _ = loss_fn(forward(model, batch).output)
                flat[j] = orig
                numeric = (plus - minus) / (2.0 * h)
                denom = max(abs(gflat[j]), abs(numeric), 1e-12)
                worst = max(worst, abs(gflat[j] - numeric) / denom)
    return worst


def save_models(path, models: dict[str, MlpModel]) -> None:
    """Write named models to one .npz checkpoint; round-trip is bit-exact."""
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, object] = {"format_version": CHECKPOINT_FORMAT_VERSION, "models": {}}
    for name, model in models.items():
        spec = []
        for i, layer in enumerate(model.layers):
            arrays[f"{name}/w{i}"] = layer.weight
            arrays[f"{name}/b{i}"] = layer.bias
            spec.append(
                {
                    "shape": list(layer.weight.shape),
                    "activation": layer.activation,
                    "slope": layer.slope,
                }
            )
        meta["models"][name] = spec  # type: ignore[index]
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_models(path) -> dict[str, MlpModel]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format: {meta.get('format_version')}")
        models = {}
        for name, spec in meta["models"].items():
            layers = [
                Layer(
                    data[f"{name}/w{i}"],
                    data[f"{name}/b{i}"],
                    entry["activation"],
                    entry["slope"],
                )
                for i, entry in enumerate(spec)
            ]
            models[name] = MlpModel(layers)
    return models
