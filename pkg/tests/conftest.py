import numpy as np
import pytest

from fedtsgan import nn


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mlp(rng, n_layers=None, activations=None, max_width=6):
    """Small random model for gradient checks."""
    n_layers = n_layers or rng.integers(1, 4)
    dims = list(rng.integers(1, max_width + 1, size=n_layers + 1))
    if activations is None:
        pool = ["identity", "tanh", "sigmoid", "leaky_relu", "relu"]
        activations = [pool[rng.integers(0, len(pool))] for _ in range(n_layers)]
    return nn.init_mlp(dims, activations, rng)


def quadratic_loss(out):
    return float(0.5 * np.sum(out * out)), out


def kink_free(model, x, margin=1e-4):
    trace = nn.forward(model, x)
    return all(
        np.abs(pre).min() > margin
        for pre, layer in zip(trace.pre, model.layers)
        if layer.activation in ("relu", "leaky_relu")
    )


def kink_free_input(model, rng, batch=4, margin=1e-4, tries=50):
    """Input draw whose pre-activations stay away from relu kinks, so
    central differences are trustworthy."""
    for _ in range(tries):
        x = rng.standard_normal((batch, model.in_dim))
        if kink_free(model, x, margin):
            return x
    return x


def gradcheck_draw(rng, activations, loss_fn, batch=4, min_grad=3e-5, tries=200):
    """(model, input) pair on which h=1e-6 central differences are a valid
    oracle: pre-activations clear of relu kinks and no nonzero gradient
    below the float64 finite-difference noise floor."""
    for _ in range(tries):
        model = random_mlp(rng, n_layers=len(activations), activations=activations)
        x = rng.standard_normal((batch, model.in_dim))
        if not kink_free(model, x):
            continue
        trace = nn.forward(model, x)
        _, out_grad = loss_fn(trace.output)
        grads, _ = nn.backward(model, trace, out_grad)
        flat = np.concatenate(
            [g.ravel() for g in grads.d_weights] + [g.ravel() for g in grads.d_biases]
        )
        nonzero = np.abs(flat[flat != 0.0])
        if nonzero.size and nonzero.min() < min_grad:
            continue
        return model, x
    raise AssertionError("no checkable draw found")


def params_blob(model):
    """Bitwise fingerprint of all parameters."""
    return b"".join(
        np.ascontiguousarray(a).tobytes()
        for l in model.layers
        for a in (l.weight, l.bias)
    )
