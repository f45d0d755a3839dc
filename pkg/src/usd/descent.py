"""Discrete-time unbalanced kernel Sobolev descent.

One step, starting from particles x_j with weights w_j:

1. solve the kernel critic u between the target and the current cloud;
2. advection: x_j <- x_j + eps * grad u(x_j);
3. reaction, one of

   * ``weighted``: a_j = log w_j + tau (u(x_j) - gamma m), m = sum_j w_j u(x_j),
     with u evaluated at the pre-advection positions; gamma = 1 normalizes
     with a softmax, gamma = 0 keeps w_j = exp(a_j);
   * ``birth_death``: with beta_j = u(x_j) - gamma m at the post-advection
     positions, duplicate with probability 1 - exp(-alpha tau beta_j) when
     beta_j > 0 and kill with probability 1 - exp(-alpha tau |beta_j|) when
     beta_j < 0, then restore the population to exactly n;
   * ``none``: advection only (Sobolev descent when alpha = 0).

Note the two reaction modes use different rates: the weighted update uses
``tau`` alone while birth-death probabilities use ``alpha * tau``.

Any object with ``value(points)`` and ``grad(points)`` can act as critic,
which is how the neural engine reuses these steps.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .embeddings import WeightedParticles, mean_embedding
from .errors import ConfigError, DivergenceError, NoSnapshotsError, PopulationExtinctError, USDError
from .features import FeatureMap
from .mmd import mmd2
from .sobolev_fisher import solve_critic

REACTION_MODES = ("weighted", "birth_death", "none")
LOG_WEIGHT_CLAMP = 50.0
TRACE_HEADER = ("step", "mmd2", "sf2", "total_mass", "n_particles")


@dataclass
class DescentConfig:
    alpha: float = 0.5
    lam: float = 1e-3
    gamma: int = 1
    step_size: float = 0.05
    reaction_rate: float = 1e-3
    n_steps: int = 100
    reaction_mode: str = "weighted"
    seed: int = 0
    snapshot_every: int = 0
    # birth-death only: Algorithm-2 style running mean instead of one mean per step
    sequential_mean: bool = False

    def validate(self) -> "DescentConfig":
        if self.reaction_mode not in REACTION_MODES:
            raise ConfigError(f"reaction_mode must be one of {REACTION_MODES}, got {self.reaction_mode!r}")
        if self.gamma not in (0, 1):
            raise ConfigError(f"gamma must be 0 or 1, got {self.gamma}")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ConfigError(f"lambda must be finite and > 0, got {self.lam}")
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ConfigError(f"step size must be finite and > 0, got {self.step_size}")
        if not (np.isfinite(self.reaction_rate) and self.reaction_rate >= 0):
            raise ConfigError(f"reaction rate must be finite and >= 0, got {self.reaction_rate}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ConfigError(f"n_steps must be a nonnegative integer, got {self.n_steps}")
        if int(self.snapshot_every) != self.snapshot_every or self.snapshot_every < 0:
            raise ConfigError(f"snapshot_every must be a nonnegative integer, got {self.snapshot_every}")
        if self.reaction_mode == "birth_death" and not (self.alpha > 0 and self.reaction_rate > 0):
            raise ConfigError("birth-death reaction requires alpha > 0 and tau > 0")
        return self


@dataclass(frozen=True, eq=False)
class DescentState:
    points: np.ndarray
    log_weights: np.ndarray
    step: int = 0
    clamped: bool = False

    @classmethod
    def from_particles(cls, P: WeightedParticles, uniform: bool = False) -> "DescentState":
        if uniform:
            logw = np.full(P.n, -np.log(P.n))
        else:
            with np.errstate(divide="ignore"):
                logw = np.log(P.weights)
        return cls(points=np.array(P.points), log_weights=logw)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def total_mass(self) -> float:
        return float(np.exp(self.log_weights).sum())

    def particles(self) -> WeightedParticles:
        return WeightedParticles(self.points, self.weights)


@dataclass
class StepRecord:
    step: int
    mmd2: float
    sf2: float
    total_mass: float
    n_particles: int
    mmd2_descent: float = float("nan")


@dataclass
class Snapshot:
    step: int
    points: np.ndarray
    weights: np.ndarray

    def particles(self) -> WeightedParticles:
        return WeightedParticles(self.points, self.weights)


@dataclass
class DescentTrace:
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    clamped_steps: list = field(default_factory=list)
    critic: object = None  # final critic of a neural run

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def mmd2(self) -> np.ndarray:
        return self.column("mmd2")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(TRACE_HEADER) + "\n")
            for r in self.records:
                fh.write(f"{r.step},{r.mmd2!r},{r.sf2!r},{r.total_mass!r},{r.n_particles}\n")

    @classmethod
    def from_csv(cls, path) -> "DescentTrace":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != TRACE_HEADER:
                raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
            records = [
                StepRecord(int(row["step"]), float(row["mmd2"]), float(row["sf2"]),
                           float(row["total_mass"]), int(row["n_particles"]))
                for row in reader
            ]
        return cls(records=records)


def advect(state: DescentState, critic, step_size: float) -> DescentState:
    if not step_size > 0:
        raise ValueError(f"step size must be > 0, got {step_size}")
    grads = np.asarray(critic.grad(state.points))
    if not np.all(np.isfinite(grads)):
        raise DivergenceError(f"non-finite critic gradient at step {state.step}")
    return replace(state, points=state.points + step_size * grads)


def react_weights(state: DescentState, critic, tau: float, gamma: int, values=None) -> DescentState:
    """Mirror-descent reweighing in log space.

    ``values`` are the critic values to use (defaults to the critic at the
    state's current positions).
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if not np.all(np.isfinite(state.log_weights)):
        raise ValueError("weighted reaction needs strictly positive weights")
    u = np.asarray(critic.value(state.points) if values is None else values, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DivergenceError(f"non-finite critic value at step {state.step}")
    w = np.exp(state.log_weights)
    m = float(w @ u)
    a = state.log_weights + tau * (u - gamma * m)
    clamped = False
    if gamma == 1:
        a = a - logsumexp(a)
    else:
        if np.any(np.abs(a) > LOG_WEIGHT_CLAMP):
            warnings.warn("log-weights clamped to [-50, 50]", RuntimeWarning, stacklevel=2)
            a = np.clip(a, -LOG_WEIGHT_CLAMP, LOG_WEIGHT_CLAMP)
            clamped = True
    return replace(state, log_weights=a, clamped=clamped)


def birth_death_events(beta, alpha: float, tau: float, rng):
    """Draw duplicate/kill decisions, one uniform per particle in index order."""
    beta = np.asarray(beta, dtype=float)
    p = -np.expm1(-alpha * tau * np.abs(beta))
    draws = rng.random(beta.shape[0])
    hit = draws < p
    return hit & (beta > 0), hit & (beta < 0)


def _running_mean(new_values, old_values):
    # m_j = (sum_{i<=j} f(x_new_i) + sum_{i>j} f(x_old_i)) / n
    n = new_values.shape[0]
    head = np.cumsum(new_values)
    tail = old_values.sum() - np.cumsum(old_values)
    return (head + tail) / n


def react_birth_death(
    state: DescentState,
    critic,
    alpha: float,
    tau: float,
    gamma: int,
    rng,
    values=None,
    old_values=None,
    sequential_mean: bool = False,
) -> DescentState:
    n = state.n
    if not np.allclose(state.log_weights, -np.log(n), rtol=0, atol=1e-9):
        raise ValueError("birth-death reaction needs uniform weights 1/n")
    f = np.asarray(critic.value(state.points) if values is None else values, dtype=float)
    if not np.all(np.isfinite(f)):
        raise DivergenceError(f"non-finite critic value at step {state.step}")
    if sequential_mean:
        if old_values is None:
            raise ValueError("sequential mean needs the pre-advection critic values")
        m = _running_mean(f, np.asarray(old_values, dtype=float))
    else:
        m = f.mean()
    beta = f - gamma * m
    dup, kill = birth_death_events(beta, alpha, tau, rng)

    keep = np.flatnonzero(~kill)
    idx = np.sort(np.concatenate([keep, np.flatnonzero(dup)]))
    n_now = idx.shape[0]
    if n_now == 0:
        raise PopulationExtinctError(f"all particles killed at step {state.step}; lower alpha or tau")
    if n_now > n:
        drop = rng.choice(n_now, size=n_now - n, replace=False)
        idx = np.delete(idx, drop)
    elif n_now < n:
        k = n - n_now
        extra = idx[rng.choice(n_now, size=k, replace=k > n_now)]
        idx = np.sort(np.concatenate([idx, extra]))
    return replace(state, points=state.points[idx], log_weights=np.full(n, -np.log(n)))


def _sq_dist(mu_target, P, fm):
    diff = mu_target - mean_embedding(P, fm)
    return float(diff @ diff)


def _record(trace, step, P, sf2, eval_ref, descent_mmd2=float("nan")):
    """``eval_ref`` is a (feature map, target mean embedding) pair."""
    trace.records.append(StepRecord(
        step=step,
        mmd2=_sq_dist(eval_ref[1], P, eval_ref[0]),
        sf2=float(sf2),
        total_mass=P.total_mass,
        n_particles=P.n,
        mmd2_descent=float(descent_mmd2),
    ))


def _wants_snapshot(cfg, step):
    k = cfg.snapshot_every
    return k > 0 and (step % k == 0 or step == cfg.n_steps)


def reaction_step(state, critic, cfg: DescentConfig, rng, old_values, new_values=None):
    """Apply the configured reaction after advection has produced ``state``."""
    if cfg.reaction_mode == "weighted":
        return react_weights(state, critic, cfg.reaction_rate, cfg.gamma, values=old_values)
    if cfg.reaction_mode == "birth_death":
        return react_birth_death(
            state, critic, cfg.alpha, cfg.reaction_rate, cfg.gamma, rng,
            values=new_values, old_values=old_values, sequential_mean=cfg.sequential_mean,
        )
    return state


def run_kernel_usd(
    target: WeightedParticles,
    source: WeightedParticles,
    fm_descent: FeatureMap,
    fm_eval: FeatureMap,
    cfg: DescentConfig,
    callback=None,
) -> DescentTrace:
    """Run ``cfg.n_steps`` steps; the trace has n_steps + 1 records.

    On failure the partial trace is attached to the raised error as ``.trace``.
    """
    cfg.validate()
    if target.dim != source.dim:
        raise ValueError(f"target dimension {target.dim} != source dimension {source.dim}")
    rng = np.random.default_rng(cfg.seed)
    state = DescentState.from_particles(source, uniform=cfg.reaction_mode == "birth_death")
    trace = DescentTrace()
    eval_ref = (fm_eval, mean_embedding(target, fm_eval))
    mu_target = mean_embedding(target, fm_descent)
    try:
        for ell in range(cfg.n_steps + 1):
            state = replace(state, step=ell)
            P = state.particles()
            critic = solve_critic(
                target, P, fm_descent, cfg.alpha, cfg.lam, cfg.gamma, target_mean=mu_target
            )
            # MMD^2 in the descent feature space is |delta|^2
            _record(trace, ell, P, critic.sf2, eval_ref, critic.delta @ critic.delta)
            if _wants_snapshot(cfg, ell):
                trace.snapshots.append(Snapshot(ell, P.points.copy(), P.weights.copy()))
            if callback is not None:
                callback(ell, state, critic)
            if ell == cfg.n_steps:
                break
            old_values = critic.value(state.points)
            moved = advect(state, critic, cfg.step_size)
            state = reaction_step(moved, critic, cfg, rng, old_values)
            if state.clamped:
                trace.clamped_steps.append(ell + 1)
    except USDError as exc:
        exc.trace = trace
        raise
    return trace


def midpoint_gaps(trace: DescentTrace, source: WeightedParticles, target: WeightedParticles, fm_eval: FeatureMap):
    """Per-snapshot (MMD to source, MMD to target)."""
    if not trace.snapshots:
        raise NoSnapshotsError("trace has no particle snapshots; set snapshot_every > 0")
    to_src = np.array([np.sqrt(mmd2(s.particles(), source, fm_eval)) for s in trace.snapshots])
    to_tgt = np.array([np.sqrt(mmd2(s.particles(), target, fm_eval)) for s in trace.snapshots])
    return to_src, to_tgt


def find_midpoint(trace: DescentTrace, source: WeightedParticles, target: WeightedParticles, fm_eval: FeatureMap) -> int:
    """Step of the snapshot most nearly MMD-equidistant from source and target.

    Ties go to the earliest snapshot.
    """
    to_src, to_tgt = midpoint_gaps(trace, source, target, fm_eval)
    return trace.snapshots[int(np.argmin(np.abs(to_src - to_tgt)))].step
