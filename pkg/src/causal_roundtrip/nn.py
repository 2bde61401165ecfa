"""Dense-network substrate: residual MLP with hand-written backprop, Adam, time embedding.

Everything runs in float64.  Parameters are plain ``dict[str, ndarray]`` so that
they can be copied, compared and serialized without ceremony.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .exceptions import ConfigError, DimensionError, DivergenceError

Params = Dict[str, np.ndarray]

_ACTIVATIONS = ("relu", "silu", "identity")


@dataclass(frozen=True)
class MlpSpec:
    """Topology of a residual MLP.

    ``input -> Linear -> [h + Block(h)] * num_blocks -> Linear -> output`` where
    ``Block(h) = W2 act(W1 h + b1) + b2``.  ``identity`` activation is accepted
    so linear networks can be checked against closed forms.
    """

    input_dim: int
    hidden_dim: int
    num_blocks: int = 2
    output_dim: int = 1
    activation: str = "silu"

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "output_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_blocks < 0:
            raise ConfigError(f"num_blocks must be >= 0, got {self.num_blocks}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "silu":
        return z / (1.0 + np.exp(-z))
    return z


def _act_grad(z, kind):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "silu":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 + z * (1.0 - s))
    return np.ones_like(z)


def param_shapes(spec: MlpSpec) -> Dict[str, tuple]:
    shapes = {"W_in": (spec.input_dim, spec.hidden_dim), "b_in": (spec.hidden_dim,)}
    for k in range(spec.num_blocks):
        shapes[f"W1_{k}"] = (spec.hidden_dim, spec.hidden_dim)
        shapes[f"b1_{k}"] = (spec.hidden_dim,)
        shapes[f"W2_{k}"] = (spec.hidden_dim, spec.hidden_dim)
        shapes[f"b2_{k}"] = (spec.hidden_dim,)
    shapes["W_out"] = (spec.hidden_dim, spec.output_dim)
    shapes["b_out"] = (spec.output_dim,)
    return shapes


def init_params(spec: MlpSpec, rng: np.random.Generator) -> Params:
    """Kaiming-uniform (fan-in) hidden layers, zero biases, zero output layer."""
    params = {}
    for name, shape in param_shapes(spec).items():
        if name.startswith("b") or name == "W_out":
            params[name] = np.zeros(shape)
            continue
        gain = 1.0 if name.startswith("W2") else np.sqrt(2.0)
        bound = gain * np.sqrt(3.0 / shape[0])
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _check_input(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"expected input of shape (n, {spec.input_dim}), got {x.shape}")
    return x


def _forward(params, spec, x):
    h = x @ params["W_in"] + params["b_in"]
    cache = [h]
    for k in range(spec.num_blocks):
        z = h @ params[f"W1_{k}"] + params[f"b1_{k}"]
        a = _act(z, spec.activation)
        h = h + a @ params[f"W2_{k}"] + params[f"b2_{k}"]
        cache.append((z, a, h))
    out = h @ params["W_out"] + params["b_out"]
    return out, cache


def mlp_forward(params: Params, spec: MlpSpec, x) -> np.ndarray:
    """Evaluate the network on a batch ``x`` of shape ``(n, input_dim)``."""
    x = _check_input(spec, x)
    return _forward(params, spec, x)[0]


def mlp_backward(params: Params, spec: MlpSpec, x, upstream) -> Tuple[Params, np.ndarray]:
    """Backpropagate ``upstream = dL/d(output)`` through the network.

    Returns
    -------
    grads : dict
        ``dL/dparam`` for every entry of ``params``.
    grad_input : ndarray of shape (n, input_dim)
    """
    x = _check_input(spec, x)
    out, cache = _forward(params, spec, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != out.shape:
        raise DimensionError(f"upstream gradient shape {upstream.shape} != output shape {out.shape}")
    return _backward(params, spec, x, cache, upstream)


def _backward(params, spec, x, cache, g):
    grads = {}
    h_last = cache[-1][2] if spec.num_blocks else cache[0]
    grads["W_out"] = h_last.T @ g
    grads["b_out"] = g.sum(axis=0)
    gh = g @ params["W_out"].T
    for k in reversed(range(spec.num_blocks)):
        z, a, _ = cache[k + 1]
        h_prev = cache[k][2] if k else cache[0]
        grads[f"W2_{k}"] = a.T @ gh
        grads[f"b2_{k}"] = gh.sum(axis=0)
        gz = (gh @ params[f"W2_{k}"].T) * _act_grad(z, spec.activation)
        grads[f"W1_{k}"] = h_prev.T @ gz
        grads[f"b1_{k}"] = gz.sum(axis=0)
        gh = gh + gz @ params[f"W1_{k}"].T
    grads["W_in"] = x.T @ gh
    grads["b_in"] = gh.sum(axis=0)
    return grads, gh @ params["W_in"].T


def forward_backward(params: Params, spec: MlpSpec, x, loss_grad_fn):
    """One forward pass, then backprop of ``loss_grad_fn(output) -> (loss, dL/dout)``."""
    out, cache = _forward(params, spec, x)
    loss, g = loss_grad_fn(out)
    grads, _ = _backward(params, spec, x, cache, g)
    return loss, grads


@dataclass
class AdamState:
    m: Params
    v: Params
    learning_rate: float = 1e-3
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Params, learning_rate: float = 1e-3, **kwargs) -> "AdamState":
        return cls(zeros_like_params(params), zeros_like_params(params), learning_rate, **kwargs)


def adam_update(params: Params, grads: Params, state: AdamState) -> Tuple[Params, AdamState]:
    """Bias-corrected Adam step.  Inputs are not mutated."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name!r} at step {state.step_count + 1}")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_params, m, v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        step = state.learning_rate * (m[name] / corr1) / (np.sqrt(v[name] / corr2) + state.epsilon)
        new_params[name] = p - step
    new_state = AdamState(m, v, state.learning_rate, t, b1, b2, state.epsilon)
    return new_params, new_state


def sinusoidal_embed(t, dim: int, t_max: int, max_period: float = 10000.0) -> np.ndarray:
    """Interleaved ``sin, cos`` features of integer timesteps.

    ``t`` may be a scalar or an integer array; the result has a trailing axis of
    length ``dim`` with ``out[..., 2k] = sin(t w_k)`` and ``out[..., 2k+1] = cos(t w_k)``
    where ``w_k = max_period ** (-2k / dim)``.
    """
    if dim <= 0 or dim % 2:
        raise ConfigError(f"embedding dim must be a positive even number, got {dim}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > t_max):
        raise ConfigError(f"timestep outside [0, {t_max}]")
    half = dim // 2
    freqs = max_period ** (-np.arange(half) / half)
    angles = t_arr.astype(np.float64)[..., None] * freqs
    out = np.empty(angles.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def gradient_check(params: Params, spec: MlpSpec, x, h: float = 1e-5, rng=None, n_probe: int = 20) -> float:
    """Worst relative disagreement between backprop and central differences.

    The loss probed is ``0.5 * ||mlp(x)||^2``.  ``n_probe`` random coordinates per
    parameter tensor are perturbed.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x = _check_input(spec, x)

    def loss(p):
        out = _forward(p, spec, x)[0]
        return 0.5 * float(np.sum(out * out))

    out = _forward(params, spec, x)[0]
    grads, _ = mlp_backward(params, spec, x, out)
    worst = 0.0
    for name, p in params.items():
        flat_idx = rng.choice(p.size, size=min(n_probe, p.size), replace=False)
        for i in flat_idx:
            idx = np.unravel_index(i, p.shape)
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            numeric = (loss(plus) - loss(minus)) / (2 * h)
            analytic = grads[name][idx]
            denom = max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
