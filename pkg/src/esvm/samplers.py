"""Markov kernels over a differentiable target density exp(-U).

Three kernels: the Euler discretization of the overdamped Langevin diffusion
(ULA), its Metropolis-corrected version (MALA), and Gaussian random-walk
Metropolis (RWM). Acceptance ratios are always formed in log space; the ratio
is never exponentiated before the comparison with log(uniform).

Randomness layout: a chain's noise comes from per-role substreams of its
SeedKey - one stream of standard normals (d per step, coordinate order) and
one stream of uniforms (one per step, MALA/RWM only). Blocks of either kind
can therefore be drawn up front without changing the chain, which lets many
chains advance in lock-step as (C, d) array operations while each remains a
pure function of its own key. Rejected proposals consume exactly the same
draws as accepted ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chains import ROLE_NORMAL, ROLE_UNIFORM, SeedKey, Trajectory, TrajectoryMeta
from .errors import NumericError

SAMPLER_KINDS = ("ula", "mala", "rwm")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str
    gamma: float
    n_steps: int
    seed: SeedKey

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if not self.gamma > 0:
            raise ValueError("step size must be positive")
        if self.n_steps < 1:
            raise ValueError("need at least one step")


@dataclass
class AcceptanceStats:
    proposed: int = 0
    accepted: int = 0
    nonfinite_log_alpha: int = 0

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 1.0


def ula_step(x: np.ndarray, grad_u, gamma: float, noise: np.ndarray) -> np.ndarray:
    """One unadjusted Langevin move: x - gamma * grad U(x) + sqrt(2 gamma) * z."""
    x = np.asarray(x, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x.shape:
        raise ValueError("noise must match state dimension")
    g = np.asarray(grad_u(x), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient in Langevin step")
    return x - gamma * g + np.sqrt(2.0 * gamma) * noise


def mala_log_acceptance(x, y, u_x, u_y, g_x, g_y, gamma: float):
    """Log Metropolis ratio for the Langevin proposal, vectorized over
    leading axes. The Gaussian proposal normalizers cancel."""
    fwd = np.sum((y - x + gamma * g_x) ** 2, axis=-1)
    bwd = np.sum((x - y + gamma * g_y) ** 2, axis=-1)
    return u_x - u_y + (fwd - bwd) / (4.0 * gamma)


def rwm_log_acceptance(u_x, u_y):
    """Log Metropolis ratio for a symmetric proposal: U(x) - U(y)."""
    return u_x - u_y


def mala_step(x: np.ndarray, target, gamma: float, rng: np.random.Generator):
    """One MALA transition. Returns (next state, accepted). Draws d normals
    then one uniform, whether or not the proposal is accepted."""
    x = np.asarray(x, dtype=np.float64)
    z = rng.standard_normal(x.size)
    u_x, g_x = target.value_and_grad(x)
    y = x - gamma * g_x + np.sqrt(2.0 * gamma) * z
    u_y, g_y = target.value_and_grad(y)
    log_alpha = mala_log_acceptance(x, y, u_x, u_y, g_x, g_y, gamma)
    u = rng.random()
    if not np.isfinite(log_alpha):
        return x.copy(), False
    with np.errstate(divide="ignore"):
        accepted = np.log(u) < log_alpha
    return (y, True) if accepted else (x.copy(), False)


def rwm_step(x: np.ndarray, target, gamma: float, rng: np.random.Generator):
    """One random-walk Metropolis transition: y = x + sqrt(gamma) * z."""
    x = np.asarray(x, dtype=np.float64)
    z = rng.standard_normal(x.size)
    y = x + np.sqrt(gamma) * z
    log_alpha = rwm_log_acceptance(target.potential(x), target.potential(y))
    u = rng.random()
    if not np.isfinite(log_alpha):
        return x.copy(), False
    with np.errstate(divide="ignore"):
        accepted = np.log(u) < log_alpha
    return (y, True) if accepted else (x.copy(), False)


def _simulate(kind: str, target, gamma: float, n_steps: int, x0: np.ndarray,
              keys: Sequence[SeedKey]):
    """Advance len(keys) chains in lock-step. Returns states (n, C, d),
    per-chain accept counts and per-chain non-finite-ratio counts.

    Time-major layout keeps every per-step slice contiguous; noise is drawn
    in per-chain blocks and pre-scaled once.
    """
    n_chains = len(keys)
    d = x0.shape[-1]
    m = n_steps - 1
    states = np.empty((n_steps, n_chains, d))
    states[0] = np.broadcast_to(x0, (n_chains, d))
    accepted = np.zeros(n_chains, dtype=np.int64)
    nonfinite = np.zeros(n_chains, dtype=np.int64)
    if m == 0:
        return states, accepted, nonfinite

    # (m, C, d): step-major so noise[k] is one contiguous read.
    noise = np.empty((m, n_chains, d))
    for i, key in enumerate(keys):
        noise[:, i, :] = key.generator(ROLE_NORMAL).standard_normal((m, d))
    noise *= np.sqrt(2.0 * gamma) if kind != "rwm" else np.sqrt(gamma)
    if kind != "ula":
        uniforms = np.empty((m, n_chains))
        for i, key in enumerate(keys):
            uniforms[:, i] = key.generator(ROLE_UNIFORM).random(m)
        with np.errstate(divide="ignore"):
            log_u = np.log(uniforms)

    # Non-finite intermediates are an expected, handled condition here:
    # Metropolis kernels reject them, the unadjusted kernel turns them into
    # an error below. Keep the arithmetic quiet either way.
    if kind == "ula":
        buf = np.empty((n_chains, d))
        x = states[0]
        with np.errstate(over="ignore", invalid="ignore"):
            # Chunked stepping keeps the per-step work to a handful of array
            # ops; non-finite values are sticky in this recursion, so one
            # check per chunk still pins down the first bad window.
            start = 0
            while start < m:
                stop = min(start + 1024, m)
                for nxt, nz in zip(states[start + 1 : stop + 1], noise[start:stop]):
                    np.multiply(target.gradient(x), gamma, out=buf)
                    np.subtract(x, buf, out=nxt)
                    nxt += nz
                    x = nxt
                if not np.all(np.isfinite(states[stop])):
                    raise NumericError(
                        f"non-finite gradient within steps {start}..{stop} "
                        "(diverging chain?)"
                    )
                start = stop
    elif kind == "mala":
        x = states[0]
        cur_u, cur_g = target.value_and_grad(x)
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(m):
                prop = x - gamma * cur_g + noise[k]
                prop_u, prop_g = target.value_and_grad(prop)
                log_alpha = mala_log_acceptance(x, prop, cur_u, prop_u, cur_g, prop_g, gamma)
                ok = np.isfinite(log_alpha)
                acc = ok & (log_u[k] < np.where(ok, log_alpha, 0.0))
                nonfinite += ~ok
                accepted += acc
                mask = acc[:, None]
                nxt = states[k + 1]
                np.copyto(nxt, np.where(mask, prop, x))
                cur_u = np.where(acc, prop_u, cur_u)
                cur_g = np.where(mask, prop_g, cur_g)
                x = nxt
    else:  # rwm
        x = states[0]
        cur_u = target.potential(x)
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(m):
                prop = x + noise[k]
                prop_u = target.potential(prop)
                log_alpha = rwm_log_acceptance(cur_u, prop_u)
                ok = np.isfinite(log_alpha)
                acc = ok & (log_u[k] < np.where(ok, log_alpha, 0.0))
                nonfinite += ~ok
                accepted += acc
                nxt = states[k + 1]
                np.copyto(nxt, np.where(acc[:, None], prop, x))
                cur_u = np.where(acc, prop_u, cur_u)
                x = nxt
    return states, accepted, nonfinite


def _check_x0(target, x0) -> np.ndarray:
    if x0 is None:
        x0 = np.zeros(target.dim)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (target.dim,):
        raise ValueError(f"starting point must have dimension {target.dim}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("starting point must be finite")
    return x0


def sample_chain(config: SamplerConfig, target, x0=None):
    """Run one chain of config.n_steps states (x0 included as state 0).

    Deterministic given (config, target, x0): rerunning with the same SeedKey
    reproduces the trajectory bit for bit.
    """
    x0 = _check_x0(target, x0)
    states, accepted, nonfinite = _simulate(
        config.kind, target, config.gamma, config.n_steps, x0, [config.seed]
    )
    m = config.n_steps - 1
    stats = AcceptanceStats(
        proposed=m,
        accepted=m if config.kind == "ula" else int(accepted[0]),
        nonfinite_log_alpha=int(nonfinite[0]),
    )
    meta = TrajectoryMeta(
        sampler=config.kind,
        gamma=config.gamma,
        seed_master=config.seed.master,
        seed_stream=config.seed.stream,
    )
    return Trajectory(states[:, 0, :], meta), stats


def sample_chains(config: SamplerConfig, target, streams: Sequence[int], x0=None):
    """Run one chain per stream index, identical in law and in outcome to
    calling `sample_chain` per stream, but advanced together for speed."""
    x0 = _check_x0(target, x0)
    keys = [config.seed.with_stream(s) for s in streams]
    states, accepted, nonfinite = _simulate(
        config.kind, target, config.gamma, config.n_steps, x0, keys
    )
    m = config.n_steps - 1
    out = []
    for i, stream in enumerate(streams):
        stats = AcceptanceStats(
            proposed=m,
            accepted=m if config.kind == "ula" else int(accepted[i]),
            nonfinite_log_alpha=int(nonfinite[i]),
        )
        meta = TrajectoryMeta(
            sampler=config.kind,
            gamma=config.gamma,
            seed_master=config.seed.master,
            seed_stream=stream,
        )
        out.append((Trajectory(states[:, i, :], meta), stats))
    return out
