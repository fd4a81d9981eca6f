"""Denoising-diffusion machinery for action generation.

A schedule of I diffusion rates drives a conditional reverse chain: starting
from isotropic Gaussian noise, a denoiser net predicts the noise to subtract
at each step given (current vector, one-hot step index, state); the final
vector is squashed once by tanh into [-1, 1]. Step indices are 1-based
(arrays store index i at position i-1). The forward-process helpers exist for
testing the algebra; training differentiates through the reverse chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neural import DenseNet, ParamGrads, Tape, backward, forward, forward_only, zero_grads


@dataclass(frozen=True)
class DiffusionSchedule:
    """Diffusion rates and derived arrays; entry j holds step i = j + 1.

    beta_bar[0] is 0 by the phi_bar_0 := 1 convention, so the last denoising
    step is deterministic.
    """

    steps: int
    beta_min: float
    beta_max: float
    beta: np.ndarray
    phi: np.ndarray
    phi_bar: np.ndarray
    beta_bar: np.ndarray


def build_schedule(steps: int, beta_min: float = 0.1, beta_max: float = 10.0) -> DiffusionSchedule:
    """beta_i = 1 - exp(-beta_min/I - (2i-1)/(2I^2)*(beta_max-beta_min)), i = 1..I."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0.0 < beta_min < beta_max:
        raise ValueError(f"need 0 < beta_min < beta_max, got ({beta_min}, {beta_max})")
    i = np.arange(1, steps + 1, dtype=np.float64)
    beta = 1.0 - np.exp(-beta_min / steps - (2.0 * i - 1.0) / (2.0 * steps**2) * (beta_max - beta_min))
    phi = 1.0 - beta
    phi_bar = np.cumprod(phi)
    phi_bar_prev = np.concatenate(([1.0], phi_bar[:-1]))
    beta_bar = (1.0 - phi_bar_prev) / (1.0 - phi_bar) * beta
    if not (np.all(beta > 0.0) and np.all(beta < 1.0) and np.all(np.diff(beta) > 0.0)):
        raise ValueError("schedule produced rates outside (0,1) or non-increasing")
    return DiffusionSchedule(
        steps=steps,
        beta_min=beta_min,
        beta_max=beta_max,
        beta=beta,
        phi=phi,
        phi_bar=phi_bar,
        beta_bar=beta_bar,
    )


def forward_marginal(pi_0: np.ndarray, i: int, schedule: DiffusionSchedule, noise: np.ndarray) -> np.ndarray:
    """Closed-form noising to step i: sqrt(phi_bar_i)*pi_0 + sqrt(1-phi_bar_i)*noise."""
    pi_0 = np.asarray(pi_0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != pi_0.shape:
        raise ValueError("noise shape must match pi_0")
    pb = schedule.phi_bar[i - 1]
    return math.sqrt(pb) * pi_0 + math.sqrt(1.0 - pb) * noise


def posterior_mean(pi_i: np.ndarray, eps_hat: np.ndarray, i: int, schedule: DiffusionSchedule) -> np.ndarray:
    """Reverse-step mean (pi_i - (1-phi_i)/sqrt(1-phi_bar_i)*eps_hat)/sqrt(phi_i)."""
    pi_i = np.asarray(pi_i, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != pi_i.shape:
        raise ValueError("eps_hat shape must match pi_i")
    phi_i = schedule.phi[i - 1]
    coeff = (1.0 - phi_i) / math.sqrt(1.0 - schedule.phi_bar[i - 1])
    return (pi_i - coeff * eps_hat) / math.sqrt(phi_i)


def step_one_hot(i: int, steps: int) -> np.ndarray:
    enc = np.zeros(steps)
    enc[i - 1] = 1.0
    return enc


def _denoiser_input(pi: np.ndarray, i: int, state: np.ndarray, steps: int) -> np.ndarray:
    return np.concatenate([pi, step_one_hot(i, steps), state])


def action_dim_of(denoiser: DenseNet) -> int:
    return denoiser.n_out


def sample_action(
    denoiser: DenseNet,
    state: np.ndarray,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    *,
    deterministic_final: bool = True,
    evaluation: bool = False,
) -> np.ndarray:
    """Run the reverse chain from Gaussian noise; returns tanh(pi_0) in [-1,1].

    In evaluation mode only the initial pi_I is drawn and every reverse step
    uses its mean; in training mode intermediate steps add sqrt(beta_bar_i)
    noise (the final step adds none when deterministic_final, and beta_bar_1
    is zero regardless).
    """
    dim = denoiser.n_out
    pi = rng.standard_normal(dim)
    for i in range(schedule.steps, 0, -1):
        eps_hat = forward_only(denoiser, _denoiser_input(pi, i, state, schedule.steps))
        mu = posterior_mean(pi, eps_hat, i, schedule)
        sigma = math.sqrt(schedule.beta_bar[i - 1])
        if evaluation or sigma == 0.0 or (i == 1 and deterministic_final):
            pi = mu
        else:
            pi = mu + sigma * rng.standard_normal(dim)
    return np.tanh(pi)


@dataclass
class ChainTape:
    """Record of one differentiable reverse chain (noise draws held constant)."""

    tapes: list[Tape]  # denoiser tapes, outermost step I first
    pis: list[np.ndarray]  # pi_I .. pi_0
    pi_0: np.ndarray
    action: np.ndarray


def sample_action_with_tape(
    denoiser: DenseNet,
    state: np.ndarray,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    *,
    deterministic_final: bool = True,
) -> tuple[np.ndarray, ChainTape]:
    """Like sample_action but records tapes so chain_backward can run."""
    dim = denoiser.n_out
    pi = rng.standard_normal(dim)
    tapes: list[Tape] = []
    pis = [pi]
    for i in range(schedule.steps, 0, -1):
        eps_hat, tape = forward(denoiser, _denoiser_input(pi, i, state, schedule.steps))
        tapes.append(tape)
        mu = posterior_mean(pi, eps_hat, i, schedule)
        sigma = math.sqrt(schedule.beta_bar[i - 1])
        if sigma == 0.0 or (i == 1 and deterministic_final):
            pi = mu
        else:
            pi = mu + sigma * rng.standard_normal(dim)
        pis.append(pi)
    action = np.tanh(pi)
    return action, ChainTape(tapes=tapes, pis=pis, pi_0=pi, action=action)


def chain_backward(
    denoiser: DenseNet,
    schedule: DiffusionSchedule,
    chain: ChainTape,
    d_action: np.ndarray,
) -> ParamGrads:
    """Backpropagate d_action through tanh and all reverse steps to the
    denoiser parameters (reparameterized; noise draws are constants)."""
    dim = denoiser.n_out
    grads = zero_grads(denoiser)
    d_pi = np.asarray(d_action, dtype=np.float64) * (1.0 - chain.action * chain.action)
    # chain.tapes[idx] corresponds to step i = steps - idx; walk back up.
    for idx in range(len(chain.tapes) - 1, -1, -1):
        i = schedule.steps - idx
        phi_i = schedule.phi[i - 1]
        sqrt_phi = math.sqrt(phi_i)
        coeff = (1.0 - phi_i) / math.sqrt(1.0 - schedule.phi_bar[i - 1])
        d_eps = -(coeff / sqrt_phi) * d_pi
        step_grads, d_input = backward(denoiser, chain.tapes[idx], d_eps)
        grads.add_(step_grads)
        d_pi = d_pi / sqrt_phi + d_input[:dim]
    return grads
