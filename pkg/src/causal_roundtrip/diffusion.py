"""Noise schedule, score-matching losses and the training loop for one conditional denoiser."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DimensionError, DivergenceError
from .nn import AdamState, MlpSpec, Params, _backward, _forward, adam_update, init_params, sinusoidal_embed

logger = logging.getLogger(__name__)

CATEGORICAL_TAU = 0.5


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Cumulative signal levels on the grid ``t = 0..T``.

    ``alpha_bar[0] == 1``; ``gamma = sqrt(alpha_bar)``, ``sigma = sqrt(1 - alpha_bar)``
    and ``rho = sigma / gamma`` (so ``rho[0] == 0``).  ``beta[t-1]`` is the
    per-step noise of step ``t``.
    """

    alpha_bar: np.ndarray
    beta: np.ndarray

    @classmethod
    def from_alpha_bar(cls, alpha_bar, strict: bool = True) -> "NoiseSchedule":
        ab = np.asarray(alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 2:
            raise ConfigError("alpha_bar must be a 1-D sequence of length T + 1 >= 2")
        if ab[0] != 1.0:
            raise ConfigError("alpha_bar[0] must equal 1")
        if not (0.0 < ab[-1] < 1.0):
            raise ConfigError("alpha_bar[T] must lie in (0, 1)")
        diffs = np.diff(ab)
        if np.any(diffs > 0) or (strict and np.any(diffs == 0)):
            raise ConfigError("alpha_bar must be strictly decreasing in t")
        beta = 1.0 - ab[1:] / ab[:-1]
        return cls(alpha_bar=ab, beta=beta)

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1

    @cached_property
    def gamma(self) -> np.ndarray:
        return np.sqrt(self.alpha_bar)

    @cached_property
    def sigma(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar)

    @cached_property
    def rho(self) -> np.ndarray:
        return self.sigma / self.gamma


def linear_beta_schedule(T: int, beta_min: float = 0.1, beta_max: float = 20.0) -> NoiseSchedule:
    """Linear-beta schedule over a fixed diffusion horizon.

    Uses the continuous-time form of the linear schedule, ``beta(s)`` rising
    linearly from ``beta_min`` to ``beta_max`` over ``s in [0, 1]``, so that
    ``alpha_bar(s) = exp(-(beta_min s + (beta_max - beta_min) s^2 / 2))`` is
    sampled at ``s = t / T``.  At ``T = 1000`` the per-step betas run from about
    1e-4 to 0.02; every ``T`` discretizes the same curve and ``alpha_bar[T]``
    is ~4.3e-5.
    """
    if int(T) != T or T < 4:
        raise ConfigError(f"T must be an integer >= 4, got {T}")
    s = np.arange(int(T) + 1) / int(T)
    alpha_bar = np.exp(-(beta_min * s + 0.5 * (beta_max - beta_min) * s * s))
    alpha_bar[0] = 1.0
    return NoiseSchedule(alpha_bar=alpha_bar, beta=1.0 - alpha_bar[1:] / alpha_bar[:-1])


def q_sample(x0, t, eps, sched: NoiseSchedule):
    """Forward noising ``x_t = gamma_t x0 + sigma_t eps``; ``t`` scalar or per-row."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise ConfigError(f"timestep outside [1, {sched.T}]")
    return sched.gamma[t_arr] * np.asarray(x0, dtype=np.float64) + sched.sigma[t_arr] * np.asarray(eps, dtype=np.float64)


def cfg_mix(eps_cond, eps_uncond, w):
    """Classifier-free guidance: ``(1 + w) eps_cond - w eps_uncond``."""
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise DimensionError(f"shape mismatch {eps_cond.shape} vs {eps_uncond.shape}")
    if w == 0:
        return eps_cond
    return (1.0 + w) * eps_cond - w * eps_uncond


def simple_loss_terms(eps, eps_hat):
    """Mean squared noise-prediction error and its gradient w.r.t. ``eps_hat``."""
    r = eps_hat - eps
    return float(np.mean(r * r)), 2.0 * r / r.size


def denoised_estimate(xt, eps_hat, t, sched: NoiseSchedule):
    """One-step clean estimate ``(x_t - sigma_t eps_hat) / gamma_t``."""
    return (xt - sched.sigma[t] * eps_hat) / sched.gamma[t]


def task_loss_terms(x0, xt, eps_hat, t, sched: NoiseSchedule, target_kind="continuous", n_classes=None, tau=CATEGORICAL_TAU):
    """Auxiliary task loss on the one-step clean estimate and its ``eps_hat`` gradient.

    Continuous targets use mean squared error.  Categorical targets (label
    codes ``0..K-1``) use cross-entropy over logits ``-(x0_hat - k)^2 / tau``.
    """
    x0_hat = denoised_estimate(xt, eps_hat, t, sched)
    n = x0_hat.size
    if target_kind == "continuous":
        d = x0_hat - x0
        loss, g_x0 = float(np.mean(d * d)), 2.0 * d / n
    elif target_kind == "categorical":
        loss, g_x0 = categorical_task_loss(x0_hat, x0, n_classes, tau)
    else:
        raise ConfigError(f"unknown target_kind {target_kind!r}")
    return loss, g_x0 * (-sched.sigma[t] / sched.gamma[t])


def categorical_task_loss(x0_hat, labels, n_classes, tau=CATEGORICAL_TAU):
    """Cross-entropy of distance logits; returns ``(loss, dloss/dx0_hat)``."""
    if n_classes is None or n_classes < 2:
        raise ConfigError("categorical task loss needs n_classes >= 2")
    codes = np.arange(n_classes, dtype=np.float64)
    diff = x0_hat[:, None] - codes[None, :]
    logits = -(diff * diff) / tau
    logits -= logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(logits).sum(axis=1, keepdims=True))
    log_p = logits - log_z
    labels = np.asarray(labels).astype(int)
    n = x0_hat.size
    loss = float(-np.mean(log_p[np.arange(n), labels]))
    dlogits = np.exp(log_p)
    dlogits[np.arange(n), labels] -= 1.0
    g = np.sum(dlogits * (-2.0 * diff / tau), axis=1) / n
    return loss, g


@dataclass
class DiffusionMechanismConfig:
    timesteps: int = 200
    hidden_dim: int = 256
    num_blocks: int = 2
    learning_rate: float = 1e-4
    epochs: int = 500
    batch_size: int = 128
    hybrid_weight: float = 0.0
    guidance_weight: float = 0.0
    sampler: str = "belm"
    condition_dropout: float = 0.1
    target_kind: str = "continuous"
    embed_dim: int = 32
    activation: str = "silu"

    def validate(self) -> "DiffusionMechanismConfig":
        if int(self.timesteps) != self.timesteps or self.timesteps < 4:
            raise ConfigError(f"timesteps must be an integer >= 4, got {self.timesteps}")
        if self.hybrid_weight < 0:
            raise ConfigError(f"hybrid_weight must be >= 0, got {self.hybrid_weight}")
        if self.guidance_weight < 0:
            raise ConfigError(f"guidance_weight must be >= 0, got {self.guidance_weight}")
        if not 0 <= self.condition_dropout < 1:
            raise ConfigError(f"condition_dropout must lie in [0, 1), got {self.condition_dropout}")
        if self.sampler not in ("belm", "ddim"):
            raise ConfigError(f"sampler must be 'belm' or 'ddim', got {self.sampler!r}")
        if self.target_kind not in ("continuous", "categorical"):
            raise ConfigError(f"target_kind must be 'continuous' or 'categorical', got {self.target_kind!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("hidden_dim", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ConfigError(f"embed_dim must be a positive even number, got {self.embed_dim}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class TrainedDenoiser:
    """Noise predictor ``eps(x_t, embed(t), c, null_flag)`` with its schedule.

    Network input columns are ``[x_t, time embedding, condition, null flag]``.
    The network learns a residual on top of ``sigma_t x_t``, the optimal
    prediction for standardized Gaussian targets; without it the long
    diffusion horizon amplifies small high-noise errors in decoded values.
    """

    spec: MlpSpec
    params: Params
    schedule: NoiseSchedule
    embed_dim: int
    condition_dim: int
    guidance_weight: float = 0.0
    target_kind: str = "continuous"
    n_classes: Optional[int] = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        expected = 1 + self.embed_dim + self.condition_dim + 1
        if self.spec.input_dim != expected:
            raise DimensionError(f"network input_dim {self.spec.input_dim} != {expected}")

    @cached_property
    def time_table(self) -> np.ndarray:
        return sinusoidal_embed(np.arange(self.schedule.T + 1), self.embed_dim, self.schedule.T)

    def network_input(self, x, t, cond, null):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        n = x.size
        emb = self.time_table[t]
        if emb.ndim == 1:
            emb = np.broadcast_to(emb, (n, self.embed_dim))
        cond = np.zeros((n, 0)) if cond is None else np.asarray(cond, dtype=np.float64).reshape(n, -1)
        if cond.shape[1] != self.condition_dim:
            raise DimensionError(f"condition has {cond.shape[1]} columns, expected {self.condition_dim}")
        null = np.broadcast_to(np.asarray(null, dtype=np.float64), (n,))
        return np.column_stack([x, emb, cond, null])

    def predict_eps(self, x, t, cond, null=0.0) -> np.ndarray:
        inp = self.network_input(x, t, cond, null)
        return self.precondition(_forward(self.params, self.spec, inp)[0][:, 0], inp[:, 0], t)

    def precondition(self, out, x, t):
        """``sigma_t x_t + gamma_t out``.

        ``sigma_t x_t`` is the exact noise prediction for standard-normal
        targets; the ``gamma_t`` factor keeps the learned part from being
        amplified at high noise.
        """
        return self.schedule.sigma[t] * x + self.schedule.gamma[t] * out

    def guided_eps(self, x, t, cond) -> np.ndarray:
        """Guided prediction used by every sampler, encoding and decoding alike."""
        eps_c = self.predict_eps(x, t, cond, 0.0)
        if self.guidance_weight == 0 or self.condition_dim == 0:
            return eps_c
        n = eps_c.size
        eps_u = self.predict_eps(x, t, np.zeros((n, self.condition_dim)), 1.0)
        return cfg_mix(eps_c, eps_u, self.guidance_weight)


def _loss_and_grads(den: TrainedDenoiser, params, x0, cond, null, t, eps, hybrid_weight):
    sched = den.schedule
    xt = sched.gamma[t] * x0 + sched.sigma[t] * eps
    inp = den.network_input(xt, t, cond, null)
    out, cache = _forward(params, den.spec, inp)
    eps_hat = den.precondition(out[:, 0], xt, t)
    l_simple, g = simple_loss_terms(eps, eps_hat)
    parts = {"simple": l_simple}
    total = l_simple
    if hybrid_weight != 0:
        l_task, g_task = task_loss_terms(x0, xt, eps_hat, t, sched, den.target_kind, den.n_classes)
        parts["task"] = l_task
        total = l_simple + hybrid_weight * l_task
        g = g + hybrid_weight * g_task
    if not np.isfinite(total):
        raise DivergenceError(f"non-finite loss {total!r}")
    grads, _ = _backward(params, den.spec, inp, cache, (g * sched.gamma[t])[:, None])
    return total, grads, parts


def loss_simple(den: TrainedDenoiser, x0, cond, t, eps, null=None):
    """Noise-prediction MSE on given draws of ``t`` and ``eps``; returns ``(loss, grads)``."""
    x0, cond, null, t, eps = _batch_arrays(den, x0, cond, null, t, eps)
    total, grads, _ = _loss_and_grads(den, den.params, x0, cond, null, t, eps, 0.0)
    return total, grads


def loss_hybrid(den: TrainedDenoiser, x0, cond, t, eps, hybrid_weight, null=None):
    """``L_simple + hybrid_weight * L_task`` on given draws; returns ``(loss, grads, parts)``."""
    if hybrid_weight < 0:
        raise ConfigError(f"hybrid_weight must be >= 0, got {hybrid_weight}")
    x0, cond, null, t, eps = _batch_arrays(den, x0, cond, null, t, eps)
    return _loss_and_grads(den, den.params, x0, cond, null, t, eps, hybrid_weight)


def _batch_arrays(den, x0, cond, null, t, eps):
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    n = x0.size
    if n == 0:
        raise DimensionError("empty batch")
    cond = np.zeros((n, den.condition_dim)) if cond is None else np.asarray(cond, dtype=np.float64).reshape(n, -1)
    null = np.zeros(n) if null is None else np.asarray(null, dtype=np.float64)
    return x0, cond, null, np.asarray(t, dtype=int).reshape(-1), np.asarray(eps, dtype=np.float64).reshape(-1)


def build_denoiser(config: DiffusionMechanismConfig, condition_dim: int, rng, n_classes=None) -> TrainedDenoiser:
    spec = MlpSpec(
        input_dim=1 + config.embed_dim + condition_dim + 1,
        hidden_dim=config.hidden_dim,
        num_blocks=config.num_blocks,
        output_dim=1,
        activation=config.activation,
    )
    return TrainedDenoiser(
        spec=spec,
        params=init_params(spec, rng),
        schedule=linear_beta_schedule(config.timesteps),
        embed_dim=config.embed_dim,
        condition_dim=condition_dim,
        guidance_weight=config.guidance_weight,
        target_kind=config.target_kind,
        n_classes=n_classes,
    )


def train_mechanism(x0, cond, config: DiffusionMechanismConfig, seed: int, n_classes=None) -> TrainedDenoiser:
    """Fit a conditional denoiser to preprocessed targets ``x0`` given conditions ``cond``.

    Each minibatch draws ``t ~ U{1..T}``, ``eps ~ N(0, 1)`` and, when the
    mechanism has a condition, replaces the condition by zeros with
    ``null_flag = 1`` for a ``condition_dropout`` fraction of rows.  All draws
    come from one generator seeded by ``seed``.
    """
    config.validate()
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    n = x0.size
    if n < 2:
        raise ConfigError("need at least 2 samples to train a mechanism")
    cond = np.zeros((n, 0)) if cond is None else np.asarray(cond, dtype=np.float64).reshape(n, -1)
    if config.target_kind == "categorical" and n_classes is None:
        n_classes = int(x0.max()) + 1
    rng = np.random.default_rng(seed)
    den = build_denoiser(config, cond.shape[1], rng, n_classes)
    T = den.schedule.T
    params = den.params
    state = AdamState.for_params(params, config.learning_rate)
    batch = min(config.batch_size, n)
    has_cond = cond.shape[1] > 0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        n_batches = 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            b = idx.size
            t = rng.integers(1, T + 1, size=b)
            eps = rng.standard_normal(b)
            c = cond[idx]
            null = np.zeros(b)
            if has_cond and config.condition_dropout > 0:
                drop = rng.random(b) < config.condition_dropout
                if drop.any():
                    c = c.copy()
                    c[drop] = 0.0
                    null[drop] = 1.0
            try:
                loss, grads, _ = _loss_and_grads(den, params, x0[idx], c, null, t, eps, config.hybrid_weight)
                params, state = adam_update(params, grads, state)
            except DivergenceError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}, step {state.step_count + 1}: {exc}") from exc
            total += loss
            n_batches += 1
        history.append(total / n_batches)
        if epoch % 100 == 0:
            logger.debug("epoch %d loss %.5f", epoch, history[-1])
    den.params = params
    den.history = history
    return den


def heldout_loss_simple(den: TrainedDenoiser, x0, cond, seed: int = 0, repeats: int = 4) -> float:
    """Average noise-prediction MSE over fresh ``(t, eps)`` draws on held-out rows."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    n = x0.size
    losses = []
    for _ in range(repeats):
        t = rng.integers(1, den.schedule.T + 1, size=n)
        eps = rng.standard_normal(n)
        losses.append(loss_simple(den, x0, cond, t, eps)[0])
    return float(np.mean(losses))
