"""Neural Sobolev-Fisher critic trained with an augmented Lagrangian.

The critic is a small MLP  d -> h_0 -> ... -> h_k -> 1  with a bias-free
linear output layer. Gradients are derived by hand, including the second
order pass needed for the parameter gradient of the Sobolev penalty
sum_j w_j |grad_x f(x_j)|^2.

Objective maximized over the parameters (weights enter as plain sums):

    m     = sum_j w_j f(y_j)
    E     = sum_i a_i f(x_i) - m
    F     = sum_j w_j f(y_j)^2 - gamma m^2
    S     = sum_j w_j |grad f(y_j)|^2
    c     = S + alpha F - 1
    obj   = E - lambda c - rho/2 c^2

and the multiplier follows lambda <- lambda - rho (1 - S - alpha F).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .descent import (
    DescentConfig,
    DescentState,
    DescentTrace,
    Snapshot,
    advect,
    reaction_step,
    _record,
    _wants_snapshot,
)
from .embeddings import WeightedParticles, mean_embedding
from .errors import ConfigError, DimensionMismatchError, DivergenceError, USDError

DIVERGENCE_LIMIT = 1e8
CHECKPOINT_MAGIC = b"USDNC"
CHECKPOINT_VERSION = 1


def _tanh(z):
    t = np.tanh(z)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


def _softplus(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return np.logaddexp(0.0, z), s, s * (1.0 - s)


def _relu(z):
    d1 = (z > 0).astype(float)
    return np.maximum(z, 0.0), d1, np.zeros_like(z)


ACTIVATIONS = {"tanh": _tanh, "softplus": _softplus, "relu": _relu}


@dataclass
class NeuralCritic:
    weights: list  # W_k, shape (out, in)
    biases: list
    v: np.ndarray  # output weights, no bias
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases):
            raise ValueError("one bias vector per hidden layer")

    @classmethod
    def init(cls, d: int, hidden=(64, 1024, 64), activation: str = "tanh", seed: int = 0, zero: bool = False):
        """Uniform fan-in initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        rng = np.random.default_rng(seed)
        widths = [int(d), *[int(h) for h in hidden]]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, fan_out))
        bound = 1.0 / np.sqrt(widths[-1])
        v = rng.uniform(-bound, bound, widths[-1])
        critic = cls(weights, biases, v, activation)
        if zero:
            critic = critic.with_params(np.zeros(critic.n_params))
        return critic

    @property
    def dim_in(self) -> int:
        return self.weights[0].shape[1] if self.weights else self.v.shape[0]

    @property
    def hidden(self) -> tuple:
        return tuple(w.shape[0] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases)) + self.v.size

    def params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        parts.append(self.v)
        return np.concatenate(parts)

    def with_params(self, flat) -> "NeuralCritic":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(flat[pos:pos + b.size].copy())
            pos += b.size
        return NeuralCritic(weights, biases, flat[pos:].copy(), self.activation)

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = x.reshape(1, -1) if single else x
        if x2.ndim != 2 or x2.shape[1] != self.dim_in:
            raise DimensionMismatchError(f"critic expects dimension {self.dim_in}, got shape {x.shape}")
        return x2, single

    def _forward(self, x2, masks=None):
        act = ACTIVATIONS[self.activation]
        hs, d1s, d2s = [x2], [], []
        h = x2
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            a, d1, d2 = act(h @ w.T + b)
            if masks is not None and masks[k] is not None:
                a, d1, d2 = a * masks[k], d1 * masks[k], d2 * masks[k]
            hs.append(a)
            d1s.append(d1)
            d2s.append(d2)
            h = a
        return hs, d1s, d2s

    def forward(self, x):
        x2, single = self._points(x)
        f = self._forward(x2)[0][-1] @ self.v
        return float(f[0]) if single else f

    def input_grad(self, x):
        x2, single = self._points(x)
        _, d1s, _ = self._forward(x2)
        s = np.broadcast_to(self.v, (x2.shape[0], self.v.shape[0]))
        for w, d1 in zip(reversed(self.weights), reversed(d1s)):
            s = (d1 * s) @ w
        return s[0] if single else s

    value = forward
    grad = input_grad

    def _backprop(self, x2, f_cot, r_cot, masks=None):
        """Gradient in the flat parameter layout of

            sum_j f_cot_j f(x_j) + sum_j r_cot_j |grad_x f(x_j)|^2.

        Returns (flat gradient, f values, input gradients).
        """
        hs, d1s, d2s = self._forward(x2, masks)
        n_layers = len(self.weights)
        f = hs[-1] @ self.v

        # input-gradient pass: s_L = v, t_k = d1_k * s_k, s_{k-1} = t_k W_k
        s = [None] * (n_layers + 1)
        t = [None] * (n_layers + 1)
        s[n_layers] = np.broadcast_to(self.v, (x2.shape[0], self.v.shape[0]))
        for k in range(n_layers, 0, -1):
            t[k] = d1s[k - 1] * s[k]
            s[k - 1] = t[k] @ self.weights[k - 1]
        gx = s[0]

        gw = [np.zeros_like(w) for w in self.weights]
        gb = [np.zeros_like(b) for b in self.biases]
        zbar = [None] * (n_layers + 1)

        # reverse through the input-gradient pass
        sbar = 2.0 * r_cot[:, None] * gx
        for k in range(1, n_layers + 1):
            w = self.weights[k - 1]
            tbar = sbar @ w.T
            gw[k - 1] += t[k].T @ sbar
            zbar[k] = d2s[k - 1] * s[k] * tbar
            sbar = d1s[k - 1] * tbar
        gv = sbar.sum(axis=0)

        # reverse through the forward pass
        gv = gv + hs[-1].T @ f_cot
        hbar = f_cot[:, None] * self.v[None, :]
        for k in range(n_layers, 0, -1):
            z = zbar[k] + d1s[k - 1] * hbar
            gw[k - 1] += z.T @ hs[k - 1]
            gb[k - 1] += z.sum(axis=0)
            hbar = z @ self.weights[k - 1]

        parts = []
        for w, b in zip(gw, gb):
            parts += [w.ravel(), b]
        parts.append(gv)
        return np.concatenate(parts), f, gx


@dataclass
class AlmTerms:
    objective: float
    constraint: float  # S + alpha F - 1
    E: float
    S: float
    F: float
    m: float

    @property
    def omega(self) -> float:
        return self.constraint + 1.0

    @property
    def sf2(self) -> float:
        """Squared IPM value of the normalized critic f / sqrt(Omega)."""
        return self.E ** 2 / self.omega if self.omega > 0 else 0.0


def _terms(fp, fq, gq, a, w, lam_aug, rho, alpha, gamma) -> AlmTerms:
    m = float(w @ fq)
    E = float(a @ fp) - m
    F = float(w @ fq ** 2) - gamma * m * m
    S = float(w @ np.sum(gq * gq, axis=1))
    c = S + alpha * F - 1.0
    obj = E - lam_aug * c - 0.5 * rho * c * c
    return AlmTerms(obj, c, E, S, F, m)


def _check_terms(t: AlmTerms):
    if not np.isfinite(t.objective) or not np.isfinite(t.constraint):
        raise DivergenceError("non-finite augmented Lagrangian objective")


def alm_objective(c: NeuralCritic, target: WeightedParticles, source: WeightedParticles,
                  lam_aug: float, rho: float, alpha: float, gamma: int) -> AlmTerms:
    fp = c.forward(target.points)
    fq = c.forward(source.points)
    gq = c.input_grad(source.points)
    t = _terms(fp, fq, gq, target.weights, source.weights, lam_aug, rho, alpha, gamma)
    _check_terms(t)
    return t


def _alm_grad_arrays(c, xp, a, xq, w, lam_aug, rho, alpha, gamma, masks_p=None, masks_q=None):
    _, fq, gq = c._backprop(xq, np.zeros_like(w), np.zeros_like(w), masks_q)
    fp = c._forward(xp, masks_p)[0][-1] @ c.v
    t = _terms(fp, fq, gq, a, w, lam_aug, rho, alpha, gamma)
    _check_terms(t)
    k = -(lam_aug + rho * t.constraint)  # d obj / d Omega
    f_cot_q = -w + k * alpha * 2.0 * w * (fq - gamma * t.m)
    gp, _, _ = c._backprop(xp, np.asarray(a, dtype=float), np.zeros(xp.shape[0]), masks_p)
    gq_, _, _ = c._backprop(xq, f_cot_q, k * w, masks_q)
    return gp + gq_, 1.0 - t.omega, t


def alm_param_grad(c: NeuralCritic, target: WeightedParticles, source: WeightedParticles,
                   lam_aug: float, rho: float, alpha: float, gamma: int):
    """Returns (gradient of the objective w.r.t. the flat parameters, g_lambda = 1 - Omega, terms)."""
    grad, g_lam, t = _alm_grad_arrays(
        c, target.points, target.weights, source.points, source.weights, lam_aug, rho, alpha, gamma
    )
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite critic parameter gradient")
    return grad, g_lam, t


@dataclass
class AlmState:
    lambda_aug: float = 1e-5
    rho: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    v_max: np.ndarray | None = None
    t: int = 0
    omega_history: list = field(default_factory=list)
    objective_history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.rho >= 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")

    def reset_moments(self):
        self.m = self.v = self.v_max = None
        self.t = 0

    def adam_step(self, grad: np.ndarray) -> np.ndarray:
        """AMSGrad direction for ascent along ``grad`` (unit learning rate)."""
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
            self.v_max = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        self.v_max = np.maximum(self.v_max, self.v)
        m_hat = self.m / (1 - self.beta1 ** self.t)
        denom = np.sqrt(self.v_max) / np.sqrt(1 - self.beta2 ** self.t) + self.eps
        return m_hat / denom


def _batch(P: WeightedParticles, batch_size, rng):
    n = P.n
    if batch_size is None or batch_size >= n:
        return P.points, P.weights
    idx = rng.choice(n, size=batch_size, replace=False)
    return P.points[idx], P.weights[idx] * (n / batch_size)


def _dropout_masks(c: NeuralCritic, n: int, p: float, rng):
    if p <= 0 or len(c.weights) < 2:
        return None
    masks = [None] * len(c.weights)
    keep = rng.random((n, c.weights[1].shape[0])) >= p
    masks[1] = keep / (1.0 - p)
    return masks


def critic_update(c: NeuralCritic, state: AlmState, target: WeightedParticles, source: WeightedParticles,
                  n_c: int, lr: float, alpha: float, gamma: int, batch_size=None, rng=None,
                  wdecay: float = 0.0, dropout: float = 0.0, reset_optimizer: bool = False):
    """``n_c`` ascent steps on the critic plus multiplier updates.

    Mini-batch weights are rescaled by n / batch_size so the sums stay
    unbiased. Dropout, when enabled, masks the second hidden layer.
    """
    if n_c < 1:
        raise ValueError(f"n_c must be >= 1, got {n_c}")
    if rng is None:
        rng = np.random.default_rng(0)
    if reset_optimizer:
        state.reset_moments()
    params = c.params()
    for _ in range(n_c):
        xp, a = _batch(target, batch_size, rng)
        xq, w = _batch(source, batch_size, rng)
        masks_p = _dropout_masks(c, xp.shape[0], dropout, rng)
        masks_q = _dropout_masks(c, xq.shape[0], dropout, rng)
        g, g_lam, t = _alm_grad_arrays(
            c, xp, a, xq, w, state.lambda_aug, state.rho, alpha, gamma, masks_p, masks_q
        )
        if abs(t.objective) > DIVERGENCE_LIMIT or not np.all(np.isfinite(g)):
            raise DivergenceError(f"critic objective diverged ({t.objective:.3e})")
        state.objective_history.append(t.objective)
        state.omega_history.append(t.omega)
        if wdecay:
            params = params * (1.0 - lr * wdecay)
        params = params + lr * state.adam_step(g)
        state.lambda_aug = state.lambda_aug - state.rho * g_lam
        c = c.with_params(params)
    return c, state


@dataclass
class NeuralConfig(DescentConfig):
    hidden: tuple = (64, 1024, 64)
    activation: str = "tanh"
    n_c_startup: int = 200
    n_c: int = 20
    lr_critic: float = 1e-4
    batch_size: int | None = 512
    wdecay: float = 1e-5
    lambda_aug_init: float = 1e-5
    rho: float = 1e-6
    dropout: float = 0.0
    reset_optimizer: bool = True
    zero_init: bool = False
    critic_seed: int | None = None

    def validate(self) -> "NeuralConfig":
        super().validate()
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {tuple(ACTIVATIONS)}")
        if self.n_c < 0 or self.n_c_startup < 0:
            raise ConfigError("critic update counts must be >= 0")
        if not self.lr_critic > 0:
            raise ConfigError("critic learning rate must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.rho < 0:
            raise ConfigError("rho must be >= 0")
        return self


def run_neural_usd(target: WeightedParticles, source: WeightedParticles, cfg: NeuralConfig,
                   fm_eval, mode: str | None = None, critic: NeuralCritic | None = None,
                   callback=None) -> DescentTrace:
    """Neural USD: critic updates interleaved with advection and reaction.

    The critic is warm-started across steps (and across calls through
    ``critic``). In weighted mode the reaction uses the critic at the
    pre-advection positions, in birth-death mode at the post-advection ones.
    The recorded ``sf2`` is E^2 / Omega over the full clouds. The final critic
    is stored on ``trace.critic``.
    """
    if mode is not None:
        cfg = replace(cfg, reaction_mode=mode)
    cfg.validate()
    if target.dim != source.dim:
        raise ValueError(f"target dimension {target.dim} != source dimension {source.dim}")
    rng = np.random.default_rng(cfg.seed)
    if critic is None:
        seed = cfg.seed if cfg.critic_seed is None else cfg.critic_seed
        critic = NeuralCritic.init(source.dim, cfg.hidden, cfg.activation, seed=seed, zero=cfg.zero_init)
    alm = AlmState(lambda_aug=cfg.lambda_aug_init, rho=cfg.rho)
    state = DescentState.from_particles(source, uniform=cfg.reaction_mode == "birth_death")
    trace = DescentTrace()
    eval_ref = (fm_eval, mean_embedding(target, fm_eval))
    try:
        for ell in range(cfg.n_steps + 1):
            state = replace(state, step=ell)
            P = state.particles()
            n_c = cfg.n_c_startup if ell == 0 else cfg.n_c
            if n_c > 0:
                critic, alm = critic_update(
                    critic, alm, target, P, n_c, cfg.lr_critic, cfg.alpha, cfg.gamma,
                    batch_size=cfg.batch_size, rng=rng, wdecay=cfg.wdecay, dropout=cfg.dropout,
                    reset_optimizer=cfg.reset_optimizer,
                )
            terms = alm_objective(critic, target, P, alm.lambda_aug, alm.rho, cfg.alpha, cfg.gamma)
            _record(trace, ell, P, terms.sf2, eval_ref)
            if _wants_snapshot(cfg, ell):
                trace.snapshots.append(Snapshot(ell, P.points.copy(), P.weights.copy()))
            if callback is not None:
                callback(ell, state, critic)
            if ell == cfg.n_steps:
                break
            old_values = critic.forward(state.points)
            moved = advect(state, critic, cfg.step_size)
            state = reaction_step(moved, critic, cfg, rng, old_values)
            if state.clamped:
                trace.clamped_steps.append(ell + 1)
    except USDError as exc:
        exc.trace = trace
        raise
    trace.critic = critic
    return trace


def save_checkpoint(c: NeuralCritic, path) -> None:
    """Binary checkpoint: magic, version, activation, layer shapes, then
    little-endian float64 parameters in row-major order."""
    act = c.activation.encode()
    shapes = [w.shape for w in c.weights]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IB", CHECKPOINT_VERSION, len(act)))
        fh.write(act)
        fh.write(struct.pack("<II", c.dim_in, len(shapes)))
        for out_dim, in_dim in shapes:
            fh.write(struct.pack("<II", out_dim, in_dim))
        fh.write(c.params().astype("<f8").tobytes())


def load_checkpoint(path) -> NeuralCritic:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a critic checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    version, n_act = struct.unpack_from("<IB", data, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 5
    activation = data[pos:pos + n_act].decode()
    pos += n_act
    d, n_layers = struct.unpack_from("<II", data, pos)
    pos += 8
    hidden = []
    for _ in range(n_layers):
        out_dim, _in_dim = struct.unpack_from("<II", data, pos)
        hidden.append(out_dim)
        pos += 8
    template = NeuralCritic.init(d, hidden, activation, zero=True)
    flat = np.frombuffer(data, dtype="<f8", offset=pos)
    return template.with_params(flat.astype(float))
