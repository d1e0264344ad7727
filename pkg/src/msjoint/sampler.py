"""Adaptive random-walk Metropolis-Hastings over random effects, per
individual, with parallel chains and Robbins-Monro step-size adaptation
toward the 0.234 acceptance target."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TARGET_ACCEPT = 0.234

LogDensity = Callable[[np.ndarray], np.ndarray]
"""Maps b of shape (chains, n, q) to per-(chain, individual) log densities."""


@dataclass
class SamplerConfig:
    n_chains: int = 5
    warmup: int = 500
    target_accept: float = TARGET_ACCEPT
    rm_scale: float = 1.0  # c0 in eta_t = c0 / (t+1)^kappa
    rm_decay: float = 2.0 / 3.0  # kappa; needs sum(eta) = inf, sum(eta^2) < inf
    init_scale: float = 1.0
    thin: int = 1

    def __post_init__(self):
        if not 0.5 < self.rm_decay <= 1.0:
            raise ValueError("rm_decay must lie in (1/2, 1] for Robbins-Monro convergence")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class ChainState:
    """Current random-effect samples with cached posterior log-densities.

    ``b`` has shape (chains, n, q); ``step_scale`` and the acceptance
    statistics are per individual (shared across chains, as adaptation acts
    at the individual level). Each chain owns an independent RNG stream.
    """

    b: np.ndarray
    log_post: np.ndarray
    step_scale: np.ndarray
    accept_stat: np.ndarray
    rngs: list[np.random.Generator]
    config: SamplerConfig
    sweeps: int = 0
    adapt_steps: int = 0
    post_warmup_accepts: np.ndarray = field(default=None)
    post_warmup_sweeps: int = 0

    def __post_init__(self):
        if self.post_warmup_accepts is None:
            self.post_warmup_accepts = np.zeros(self.b.shape[1])

    @property
    def n_chains(self) -> int:
        return self.b.shape[0]

    @property
    def in_warmup(self) -> bool:
        return self.sweeps < self.config.warmup

    def realized_acceptance(self) -> np.ndarray:
        """Per-individual post-warmup empirical acceptance rate."""
        if self.post_warmup_sweeps == 0:
            return np.full(self.b.shape[1], np.nan)
        return self.post_warmup_accepts / (self.post_warmup_sweeps * self.n_chains)

    def refresh(self, log_density: LogDensity) -> None:
        """Recompute the cached log-density (needed after parameter updates)."""
        self.log_post = np.asarray(log_density(self.b))


def init_chains(
    n_individuals: int,
    n_effects: int,
    log_density: LogDensity,
    config: SamplerConfig | None = None,
    seed: int | np.random.Generator = 0,
) -> ChainState:
    """Chains initialized at b = 0 (the prior mode) with unit scales."""
    config = config or SamplerConfig()
    master = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rngs = master.spawn(config.n_chains)
    b = np.zeros((config.n_chains, n_individuals, n_effects))
    return ChainState(
        b=b,
        log_post=np.asarray(log_density(b)),
        step_scale=np.full(n_individuals, float(config.init_scale)),
        accept_stat=np.zeros(n_individuals),
        rngs=rngs,
        config=config,
    )


def mh_step(chains: ChainState, log_density: LogDensity) -> np.ndarray:
    """One random-walk proposal/accept update of every (chain, individual).

    Proposals are isotropic, b' = b + s_i * eps; acceptance uses the
    complete-data log-density as a function of b_i with parameters fixed.
    Non-finite proposal densities are auto-rejected.

    Returns the (chains, n) array of acceptance indicators.
    """
    C, n, q = chains.b.shape
    eps = np.empty((C, n, q))
    log_u = np.empty((C, n))
    for c, rng in enumerate(chains.rngs):
        eps[c] = rng.standard_normal((n, q))
        log_u[c] = np.log(rng.random(n))
    proposal = chains.b + chains.step_scale[:, None] * eps
    lp_prop = np.asarray(log_density(proposal))
    delta = lp_prop - chains.log_post
    accepted = (log_u < delta) & np.isfinite(lp_prop)
    chains.b = np.where(accepted[..., None], proposal, chains.b)
    chains.log_post = np.where(accepted, lp_prop, chains.log_post)
    chains.accept_stat = accepted.mean(axis=0)
    return accepted


def adapt_step(chains: ChainState, accepted: np.ndarray) -> None:
    """Robbins-Monro update of the per-individual proposal scales toward the
    target acceptance; to be called during warmup only."""
    cfg = chains.config
    rate = accepted.mean(axis=0)
    eta = cfg.rm_scale / (chains.adapt_steps + 1) ** cfg.rm_decay
    chains.step_scale = chains.step_scale * np.exp(eta * (rate - cfg.target_accept))
    chains.adapt_steps += 1


def sweep(chains: ChainState, log_density: LogDensity) -> np.ndarray:
    """One MH step plus warmup-phase adaptation and acceptance accounting."""
    adapting = chains.in_warmup
    accepted = mh_step(chains, log_density)
    if adapting:
        adapt_step(chains, accepted)
    else:
        chains.post_warmup_accepts += accepted.sum(axis=0)
        chains.post_warmup_sweeps += 1
    chains.sweeps += 1
    return accepted


def warmup(chains: ChainState, log_density: LogDensity) -> None:
    """Advance through any remaining warmup sweeps (adaptation enabled)."""
    while chains.in_warmup:
        sweep(chains, log_density)


def run(
    chains: ChainState,
    log_density: LogDensity,
    n_steps: int,
    thin: int = 1,
) -> np.ndarray:
    """Warm up if needed, then advance n_steps retaining every thin-th state.

    Returns an array of shape (floor(n_steps/thin), chains, n, q).
    """
    if thin < 1:
        raise ValueError("thin must be >= 1")
    warmup(chains, log_density)
    retained = []
    for step in range(1, n_steps + 1):
        sweep(chains, log_density)
        if step % thin == 0:
            retained.append(chains.b.copy())
    if not retained:
        return np.zeros((0,) + chains.b.shape)
    return np.stack(retained)
