"""Prediction of future latent time representations.

The ARX predictor maps the last ``window`` time embeddings plus the
individual's embedding through one affine (optionally tanh) layer.  The
recurrent predictor carries a latent state updated from the sensory
buffer, the previous state and the individual's embedding.  Whenever a
real sensory encoding is available it overrides the prediction.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, UsageError


class ArxPredictor:
    """Autoregressive predictor with the individual as exogenous input."""

    def __init__(self, dim, window=5, tanh_output=False, rng=None):
        if window < 1:
            raise UsageError(f"window must be >= 1, got {window}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = int(dim)
        self.window = int(window)
        self.tanh_output = bool(tanh_output)
        scale = 0.1 / np.sqrt(dim)
        self.lags = [rng.normal(0.0, scale, size=(dim, dim)) for _ in range(window)]
        self.individual_weight = rng.normal(0.0, scale, size=(dim, dim))
        self.bias = np.zeros(dim)

    def params(self):
        out = {f"lag{w}": m for w, m in enumerate(self.lags, start=1)}
        out.update(individual=self.individual_weight, bias=self.bias)
        return out


def predict_arx(pred, history, individual=None):
    """Predict the next latent from ``history`` (oldest first).

    Uses the last ``window`` entries: lag 1 is the most recent.  A
    missing individual embedding contributes nothing.
    """
    history = [np.asarray(h, dtype=float) for h in history]
    if len(history) < pred.window:
        raise UsageError(f"need at least {pred.window} past latents, "
                         f"got {len(history)}")
    for h in history:
        if h.shape != (pred.dim,):
            raise ShapeError(f"latent must have shape ({pred.dim},)")
    z = pred.bias.copy()
    for w, lag in enumerate(pred.lags, start=1):
        z += lag @ history[-w]
    if individual is not None:
        z += pred.individual_weight @ np.asarray(individual, dtype=float)
    return np.tanh(z) if pred.tanh_output else z


def predict_arx_batch(pred, lagged, individual):
    """Batched prediction: ``lagged[w-1]`` is the (B, dim) array of lag w."""
    z = np.broadcast_to(pred.bias, lagged[0].shape).copy()
    for lag_mat, arr in zip(pred.lags, lagged):
        z += arr @ lag_mat.T
    if individual is not None:
        z += np.broadcast_to(pred.individual_weight @ individual, lagged[0].shape)
    return np.tanh(z) if pred.tanh_output else z


def arx_backward_batch(pred, lagged, individual, prediction, dpred):
    """Gradients of a batch of predictions.

    Returns (per-lag input grads, individual grad or None, param grads).
    """
    if pred.tanh_output:
        dpred = dpred * (1.0 - prediction * prediction)
    grads = {"bias": dpred.sum(axis=0)}
    lag_grads = []
    for w, (lag_mat, arr) in enumerate(zip(pred.lags, lagged), start=1):
        grads[f"lag{w}"] = dpred.T @ arr
        lag_grads.append(dpred @ lag_mat)
    d_ind = None
    if individual is not None:
        grads["individual"] = dpred.sum(axis=0)[:, None] * individual[None, :]
        d_ind = pred.individual_weight.T @ dpred.sum(axis=0)
    else:
        grads["individual"] = np.zeros_like(pred.individual_weight)
    return lag_grads, d_ind, grads


class RnnPredictor:
    """tanh recurrence over sensory input, previous state and individual.

    ``window`` is the truncated unrolling depth used when the recurrence
    is trained through the prediction cost.
    """

    def __init__(self, dim, input_size, window=5, rng=None):
        if window < 1:
            raise UsageError(f"window must be >= 1, got {window}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = int(dim)
        self.input_size = int(input_size)
        self.window = int(window)
        self.input_weight = rng.normal(0.0, 0.1 / np.sqrt(max(input_size, 1)),
                                       size=(dim, input_size))
        self.recurrent_weight = rng.normal(0.0, 0.1 / np.sqrt(dim), size=(dim, dim))
        self.individual_weight = rng.normal(0.0, 0.1 / np.sqrt(dim), size=(dim, dim))
        self.bias = np.zeros(dim)

    def params(self):
        return {"input": self.input_weight, "recurrent": self.recurrent_weight,
                "individual": self.individual_weight, "bias": self.bias}


def rnn_step(pred, buffer, prev_latent, individual=None):
    """One recurrent update; components stay inside (-1, 1)."""
    u = np.asarray(buffer, dtype=float).reshape(-1)
    if u.size != pred.input_size:
        raise ShapeError(f"buffer must flatten to {pred.input_size} values, "
                         f"got {u.size}")
    prev = np.asarray(prev_latent, dtype=float)
    if prev.shape != (pred.dim,):
        raise ShapeError(f"state must have shape ({pred.dim},)")
    z = pred.bias + pred.input_weight @ u + pred.recurrent_weight @ prev
    if individual is not None:
        z += pred.individual_weight @ np.asarray(individual, dtype=float)
    return np.tanh(z)


def rnn_unroll(pred, buffers, start_latent, individual=None):
    """Run the recurrence over a list of buffers; returns every state."""
    states = [np.asarray(start_latent, dtype=float)]
    for u in buffers:
        states.append(rnn_step(pred, u, states[-1], individual))
    return states


def rnn_unroll_backward(pred, buffers, states, individual, dlast):
    """Backpropagate through an unrolled recurrence.

    ``states`` is the output of :func:`rnn_unroll` (start state first),
    ``dlast`` the gradient at the final state.  Returns (gradient at the
    start state, individual grad, param grads).
    """
    grads = {name: np.zeros_like(arr) for name, arr in pred.params().items()}
    d_ind = np.zeros(pred.dim)
    d_state = np.asarray(dlast, dtype=float)
    for k in range(len(buffers) - 1, -1, -1):
        new = states[k + 1]
        dz = d_state * (1.0 - new * new)
        u = np.asarray(buffers[k], dtype=float).reshape(-1)
        grads["bias"] += dz
        grads["input"] += np.outer(dz, u)
        grads["recurrent"] += np.outer(dz, states[k])
        if individual is not None:
            grads["individual"] += np.outer(dz, individual)
            d_ind += pred.individual_weight.T @ dz
        d_state = pred.recurrent_weight.T @ dz
    return d_state, d_ind, grads


def arx_override(encoded, predicted):
    """The sensory encoding, once available, replaces the prediction."""
    if encoded is not None:
        return np.asarray(encoded, dtype=float)
    return np.asarray(predicted, dtype=float)
