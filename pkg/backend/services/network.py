# backend/services/network.py
"""Dense network core: initialization, forward pass, back-propagation and Adam."""
from dataclasses import replace

import numpy as np
from scipy.special import expit, softmax

from models import Activation, Mode, DenseLayer, MlpParams, ForwardCache, AdamState
from utils.exceptions import ConfigurationError, ShapeMismatchError, NonFiniteError


def init_params(layer_dims, activations, seed=0, zero_last_layer=False):
    """
    Glorot-uniform weights, zero biases. `layer_dims` = [in, hidden..., out];
    one activation per layer.
    """
    layer_dims = [int(d) for d in layer_dims]
    activations = [Activation(a) for a in activations]
    if len(layer_dims) < 2:
        raise ConfigurationError("a network needs an input and at least one layer")
    if len(activations) != len(layer_dims) - 1:
        raise ConfigurationError(
            f"{len(activations)} activations given for {len(layer_dims) - 1} layers"
        )
    if any(d <= 0 for d in layer_dims):
        raise ConfigurationError(f"layer dimensions must be positive, got {layer_dims}")

    rng = np.random.default_rng(seed)
    layers = []
    for index, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        last = index == len(layer_dims) - 2
        if last and zero_last_layer:
            weights = np.zeros((fan_out, fan_in))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(weights, np.zeros(fan_out), activations[index]))
    return MlpParams(layers)


def activate(z, activation):
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    if activation is Activation.SIGMOID:
        return expit(z)
    if activation is Activation.SOFTMAX:
        return softmax(z, axis=-1)
    return z


def _activation_backward(grad, z, out, activation):
    """Map d/d(output) to d/d(pre-activation) for one layer"""
    if activation is Activation.RELU:
        return grad * (z > 0.0)
    if activation is Activation.SIGMOID:
        return grad * out * (1.0 - out)
    if activation is Activation.SOFTMAX:
        return out * (grad - np.sum(grad * out, axis=-1, keepdims=True))
    return grad


def forward(params: MlpParams, inputs, dropout_rate=0.0, mode=Mode.INFER, rng_seed=0):
    """
    Affine + activation chain over a vector or a batch of row vectors.

    In train mode hidden activations get inverted dropout from a mask drawn
    with `rng_seed`; the masks are kept in the cache for the backward pass.
    """
    mode = Mode(mode)
    if not 0.0 <= dropout_rate < 1.0:
        raise ConfigurationError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeMismatchError(f"network expects input width {params.in_dim}, got shape {np.shape(inputs)}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("network input contains NaN or Inf")

    use_dropout = mode is Mode.TRAIN and dropout_rate > 0.0
    rng = np.random.default_rng(rng_seed) if use_dropout else None
    activations, pre_activations, masks = [x], [], []
    last = len(params.layers) - 1
    for index, layer in enumerate(params.layers):
        z = activations[-1] @ layer.weights.T + layer.bias
        out = activate(z, layer.activation)
        mask = None
        if use_dropout and index < last:
            mask = (rng.random(out.shape) >= dropout_rate) / (1.0 - dropout_rate)
            out = out * mask
        pre_activations.append(z)
        activations.append(out)
        masks.append(mask)

    cache = ForwardCache(activations, pre_activations, masks)
    output = activations[-1][0] if single else activations[-1]
    return output, cache


def backward_from_logits(params: MlpParams, cache: ForwardCache, logit_grad) -> MlpParams:
    """Parameter gradients given d(objective)/d(final pre-activation)"""
    delta = np.atleast_2d(np.asarray(logit_grad, dtype=np.float64))
    if delta.shape != cache.pre_activations[-1].shape:
        raise ShapeMismatchError(
            f"output gradient shape {delta.shape} does not match network output {cache.pre_activations[-1].shape}"
        )
    arrays = [None] * (2 * len(params.layers))
    for index in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[index]
        arrays[2 * index] = delta.T @ cache.activations[index]
        arrays[2 * index + 1] = delta.sum(axis=0)
        if index == 0:
            break
        grad = delta @ layer.weights
        mask = cache.dropout_masks[index - 1]
        if mask is not None:
            grad = grad * mask
        below = params.layers[index - 1]
        # derivative needs the activation before dropout scaling
        out = activate(cache.pre_activations[index - 1], below.activation)
        delta = _activation_backward(grad, cache.pre_activations[index - 1], out, below.activation)
    return params.with_arrays(arrays)


def backward(params: MlpParams, cache: ForwardCache, output_grad) -> MlpParams:
    """Parameter gradients of the objective whose gradient at the network output is `output_grad`"""
    grad = np.atleast_2d(np.asarray(output_grad, dtype=np.float64))
    if grad.shape != cache.activations[-1].shape:
        raise ShapeMismatchError(
            f"output gradient shape {grad.shape} does not match network output {cache.activations[-1].shape}"
        )
    last = params.layers[-1]
    logit_grad = _activation_backward(grad, cache.pre_activations[-1], cache.activations[-1], last.activation)
    return backward_from_logits(params, cache, logit_grad)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, maximize=False):
    """
    One bias-corrected Adam update. With `maximize` the step follows the
    gradient (ascent); otherwise it descends.
    """
    param_arrays, grad_arrays = params.arrays(), grads.arrays()
    if len(param_arrays) != len(grad_arrays) or len(state.first_moment) != len(param_arrays):
        raise ShapeMismatchError("gradients, parameters and optimizer state differ in layout")
    for p, g in zip(param_arrays, grad_arrays):
        if p.shape != g.shape:
            raise ShapeMismatchError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient passed to the optimizer")

    step = state.step + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    direction = 1.0 if maximize else -1.0

    new_params, first, second = [], [], []
    for p, g, m, v in zip(param_arrays, grad_arrays, state.first_moment, state.second_moment):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        new_params.append(p + direction * update)
        first.append(m)
        second.append(v)
    return params.with_arrays(new_params), replace(state, first_moment=first, second_moment=second, step=step)
