"""Linear-beta diffusion schedule and the acceleration step.

Arrays are stored 1-based: index 0 holds the "before the first step" values
(beta=0, alpha=1, alpha_bar=1) so that ``alpha_bar[t - 1]`` is valid at t=1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BETA_START = 1e-4
BETA_END = 2e-2


@dataclass(frozen=True)
class Schedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    tilde_beta: np.ndarray
    t_prime: int = field(default=0)
    # 1 - alpha_bar to full relative precision; 1.0 - alpha_bar cancels badly at small t
    one_minus_alpha_bar: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.one_minus_alpha_bar is None:
            object.__setattr__(self, "one_minus_alpha_bar", 1.0 - np.asarray(self.alpha_bar))

    @property
    def sqrt_alpha_bar(self) -> np.ndarray:
        return np.sqrt(self.alpha_bar)

    def check_step(self, t: int, lo: int = 1) -> int:
        t = int(t)
        if not lo <= t <= self.T:
            raise ValueError(f"step t={t} outside [{lo}, {self.T}]")
        return t


def linear_betas(T: int) -> np.ndarray:
    t = np.arange(1, T + 1, dtype=np.float64)
    return (BETA_START * (T - t) + BETA_END * (t - 1)) / (T - 1)


def build_schedule(T: int) -> Schedule:
    """Build all per-step constants for ``T`` steps, including ``t_prime``."""
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    T = int(T)
    beta = np.concatenate([[0.0], linear_betas(T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    comp = -np.expm1(np.cumsum(np.log1p(-beta)))
    tilde_beta = np.zeros(T + 1)
    tilde_beta[2:] = comp[1:-1] / comp[2:] * beta[2:]
    for a in (beta, alpha, alpha_bar, tilde_beta, comp):
        a.setflags(write=False)
    s = Schedule(T, beta, alpha, alpha_bar, tilde_beta, one_minus_alpha_bar=comp)
    object.__setattr__(s, "t_prime", compute_t_prime(s))
    return s


def compute_t_prime(s: Schedule) -> int:
    """Step whose sqrt(alpha_bar) is closest to 1/2; ties go to the smaller step."""
    gap = np.abs(np.sqrt(s.alpha_bar[1:]) - 0.5)
    return int(np.argmin(gap)) + 1


def acceleration_bias(s: Schedule) -> float:
    """|2 sqrt(alpha_bar[t']) - 1|: weight of the x0 term dropped at initialization."""
    return float(abs(2.0 * np.sqrt(s.alpha_bar[s.t_prime]) - 1.0))


def schedule_rows(s: Schedule) -> list[dict]:
    sab = s.sqrt_alpha_bar
    return [
        {
            "t": t,
            "beta": s.beta[t],
            "alpha": s.alpha[t],
            "alpha_bar": s.alpha_bar[t],
            "sqrt_alpha_bar": sab[t],
            "tilde_beta": s.tilde_beta[t],
        }
        for t in range(1, s.T + 1)
    ]
