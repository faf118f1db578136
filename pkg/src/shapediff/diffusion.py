"""Variance schedules, forward noising, closed-form posteriors, training losses.

Positions diffuse with Gaussian noise under a sigmoid beta schedule; one-hot
atom features diffuse with uniform categorical noise under a cosine schedule.
Tables are indexed 0..T where index 0 is the noise-free state (beta=0,
alpha_bar=1).
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import torch


class ScheduleError(ValueError):
    pass


SIGMOID_X_DEFAULTS = {"w1": 6.0, "w2": 1e-7, "w3": 0.01}
COSINE_V_DEFAULTS = {"s": 0.01}


@dataclass
class ScheduleTable:
    kind: str
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    def beta_tilde(self, t: int) -> float:
        """Posterior variance (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t."""
        self._check_step(t)
        return float((1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t])

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ScheduleError(f"step t={t} outside [1, {self.T}]")


def _validate_table(table: ScheduleTable) -> ScheduleTable:
    beta, alpha_bar, T = table.beta, table.alpha_bar, table.T
    if beta[0] != 0.0 or alpha_bar[0] != 1.0:
        raise ScheduleError("index 0 must be the noise-free state")
    interior = beta[1:T]
    if np.any(interior <= 0.0) or np.any(interior >= 1.0):
        raise ScheduleError(f"{table.kind}: beta outside (0,1) for some step t < T")
    if not 0.0 < beta[T] <= 1.0:
        raise ScheduleError(f"{table.kind}: beta_T={beta[T]} outside (0,1]")
    if np.any(np.diff(alpha_bar) >= 0.0):
        raise ScheduleError(f"{table.kind}: alpha_bar is not strictly decreasing")
    return table


def make_schedule(kind: str, params: dict | None = None, T: int = 1000) -> ScheduleTable:
    """Build one schedule family; kind is "sigmoid_x" or "cosine_v"."""
    if T < 2:
        raise ScheduleError("need at least two steps")
    if kind == "sigmoid_x":
        p = {**SIGMOID_X_DEFAULTS, **(params or {})}
        t = np.arange(T + 1, dtype=np.float64)
        raw = 1.0 / (1.0 + np.exp(-p["w1"] * (2.0 * t / T - 1.0)))
        beta = raw * (p["w2"] - p["w3"]) + p["w3"]
        beta[0] = 0.0
        return _validate_table(ScheduleTable(kind, beta))
    if kind == "cosine_v":
        p = {**COSINE_V_DEFAULTS, **(params or {})}
        t = np.arange(T + 1, dtype=np.float64)
        theta = (t / T + p["s"]) / (1.0 + p["s"]) * (np.pi / 2.0)
        # cos(theta)^2 via the double angle so the t=T endpoint is exactly zero
        f = (1.0 + np.cos(2.0 * theta)) / 2.0
        alpha_bar = f / f[0]
        beta = np.zeros(T + 1)
        beta[1:] = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
        table = ScheduleTable(kind, beta)
        # install the closed-form cumulative product to keep the endpoint exact
        table.alpha_bar = alpha_bar
        return _validate_table(table)
    raise ScheduleError(f"unknown schedule kind {kind!r}")


@dataclass
class Schedule:
    """Paired position (x) and feature (v) schedules sharing a step count."""

    x: ScheduleTable
    v: ScheduleTable

    def __post_init__(self):
        if self.x.T != self.v.T:
            raise ScheduleError("x and v schedules disagree on T")

    @property
    def T(self) -> int:
        return self.x.T

    @classmethod
    def default(cls, T: int = 1000, x_params: dict | None = None, v_params: dict | None = None) -> "Schedule":
        return cls(x=make_schedule("sigmoid_x", x_params, T), v=make_schedule("cosine_v", v_params, T))

    def position_loss_weight(self, t: int, delta: float = 10.0) -> float:
        """min(snr, delta) with snr = alpha_bar / (1 - alpha_bar)."""
        self.x._check_step(t)
        ab = self.x.alpha_bar[t]
        return float(min(ab / (1.0 - ab), delta))

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("t,beta_x,alpha_bar_x,beta_v,alpha_bar_v,beta_tilde_x\n")
        for t in range(self.T + 1):
            bt = self.x.beta_tilde(t) if t >= 1 else 0.0
            out.write(
                f"{t},{self.x.beta[t]:.10g},{self.x.alpha_bar[t]:.10g},"
                f"{self.v.beta[t]:.10g},{self.v.alpha_bar[t]:.10g},{bt:.10g}\n"
            )
        return out.getvalue()


# ---------------------------------------------------------------------------
# forward noising


def q_sample_positions(
    x0: torch.Tensor,
    t: int,
    sched: Schedule,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Draw x_t ~ N(sqrt(ab) x0, (1 - ab) I); returns (x_t, the noise used)."""
    sched.x._check_step(t)
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    ab = sched.x.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise, noise


def feature_mixture(v0: torch.Tensor, alpha_bar: float) -> torch.Tensor:
    """Marginal class probabilities ab * v0 + (1 - ab) / K."""
    K = v0.shape[-1]
    return alpha_bar * v0 + (1.0 - alpha_bar) / K


def sample_categorical(probs: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """One-hot draws from rows of a probability matrix."""
    idx = torch.multinomial(probs, 1, generator=generator).squeeze(-1)
    out = torch.zeros_like(probs)
    out[torch.arange(probs.shape[0]), idx] = 1.0
    return out


def q_sample_features(
    v0: torch.Tensor,
    t: int,
    sched: Schedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Draw one-hot v_t from the closed-form categorical marginal."""
    sched.v._check_step(t)
    return sample_categorical(feature_mixture(v0, float(sched.v.alpha_bar[t])), generator)


# ---------------------------------------------------------------------------
# posteriors


def posterior_positions(
    x_t: torch.Tensor, x0_ref: torch.Tensor, t: int, sched: Schedule
) -> tuple[torch.Tensor, float]:
    """Closed-form Gaussian posterior mean and (scalar) variance for step t."""
    sched.x._check_step(t)
    if t == 1:
        return x0_ref.clone(), 0.0
    ab_t = sched.x.alpha_bar[t]
    ab_prev = sched.x.alpha_bar[t - 1]
    beta_t = sched.x.beta[t]
    alpha_t = sched.x.alpha[t]
    coef0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_t = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    return coef0 * x0_ref + coef_t * x_t, sched.x.beta_tilde(t)


def posterior_features(
    v_t: torch.Tensor, v0_ref: torch.Tensor, t: int, sched: Schedule
) -> torch.Tensor:
    """Categorical posterior over classes; v0_ref may be one-hot or soft."""
    sched.v._check_step(t)
    K = v_t.shape[-1]
    alpha_t = sched.v.alpha[t]
    ab_prev = sched.v.alpha_bar[t - 1]
    left = alpha_t * v_t + (1.0 - alpha_t) / K
    right = ab_prev * v0_ref + (1.0 - ab_prev) / K
    c = left * right
    return c / c.sum(-1, keepdim=True)


# ---------------------------------------------------------------------------
# losses


class ClampCounter:
    """Counts probability clamps applied while evaluating KL terms."""

    def __init__(self):
        self.count = 0


def loss_positions(
    x0_pred: torch.Tensor, x0: torch.Tensor, t: int, sched: Schedule, delta: float = 10.0
) -> torch.Tensor:
    if x0_pred.shape != x0.shape:
        raise ValueError(f"shape mismatch {tuple(x0_pred.shape)} vs {tuple(x0.shape)}")
    w = sched.position_loss_weight(t, delta)
    return w * (x0_pred - x0).pow(2).sum()


def loss_features(
    v_t: torch.Tensor,
    v0: torch.Tensor,
    v0_pred: torch.Tensor,
    t: int,
    sched: Schedule,
    counter: ClampCounter | None = None,
    clamp: float = 1e-12,
) -> torch.Tensor:
    """Sum over atoms of KL(true posterior || approximate posterior), in nats."""
    c_true = posterior_features(v_t, v0, t, sched)
    c_pred = posterior_features(v_t, v0_pred, t, sched)
    needs_clamp = (c_pred < clamp) & (c_true > 0.0)
    if counter is not None:
        counter.count += int(needs_clamp.sum().item())
    # additive floor: unlike a hard clamp it keeps the restoring gradient
    # alive when the approximate posterior underflows
    c_pred = torch.where(c_pred < clamp, c_pred + clamp, c_pred)
    ratio = torch.where(c_true > 0.0, c_true / c_pred, torch.ones_like(c_true))
    terms = torch.where(c_true > 0.0, c_true * torch.log(ratio), torch.zeros_like(c_true))
    return terms.sum()


def kl_categorical(p: torch.Tensor, q: torch.Tensor, clamp: float = 1e-12) -> torch.Tensor:
    """KL(p || q) in nats over the last axis, with 0 log 0 = 0."""
    q = torch.clamp(q, min=clamp)
    terms = torch.where(p > 0.0, p * torch.log(p / q), torch.zeros_like(p))
    return terms.sum(-1)


def cross_entropy_sum(logits: torch.Tensor, target_one_hot: torch.Tensor) -> torch.Tensor:
    """Sum of per-row cross entropies between logits and one-hot targets."""
    log_probs = torch.log_softmax(logits, dim=-1)
    return -(target_one_hot * log_probs).sum()


def loss_bonds(
    per_layer_logits: list[torch.Tensor],
    bond_targets: torch.Tensor,
    t: int,
    sched: Schedule,
    delta: float = 10.0,
) -> torch.Tensor:
    """Cross-entropy bond loss aggregated over layers.

    The final layer carries the full step weight; earlier layers share it.
    """
    L = len(per_layer_logits)
    if L < 2:
        raise ValueError("bond loss aggregation needs at least two layers")
    w = sched.position_loss_weight(t, delta)
    early = sum(cross_entropy_sum(lg, bond_targets) for lg in per_layer_logits[:-1])
    last = cross_entropy_sum(per_layer_logits[-1], bond_targets)
    return w / (L - 1) * early + w * last


def total_loss(l_pos, l_feat, l_bond, xi: float = 100.0, zeta: float = 100.0):
    for name, value in (("position", l_pos), ("feature", l_feat), ("bond", l_bond)):
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not np.isfinite(v):
            raise FloatingPointError(f"non-finite {name} loss component: {v}")
    return l_pos + xi * l_feat + zeta * l_bond
