"""Learning agents and the training loop.

Four policies share one harness: the diffusion-actor deterministic policy
gradient learner (optionally fed delay-blind observations by the env), its
plain MLP-actor ancestor, a Hungarian-assignment + factored double-DQN
baseline over discretized powers and altitude steps, and a uniform-random
reference. All agents consume raw [-1,1] action vectors through the same env
surface; batches are processed sample by sample with gradient accumulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from time import perf_counter

import numpy as np
from scipy.optimize import linear_sum_assignment

from .channel import ChannelParams
from .diffusion import (
    DiffusionSchedule,
    build_schedule,
    chain_backward,
    sample_action,
    sample_action_with_tape,
)
from .env import NetworkScenario, VehicularEnv
from .neural import (
    AdamState,
    DenseNet,
    adam_step,
    backward,
    clone,
    forward,
    forward_only,
    init_dense,
    load_checkpoint,
    save_checkpoint,
    soft_update,
    zero_grads,
)

AGENT_KINDS = ("d3pg", "d3pg_wcsi", "ddpg", "h_ddqn", "random")


@dataclass
class AgentHyperparams:
    """Training knobs. Defaults are full-scale values; desk_scale_hyperparams()
    returns a preset tuned for short runs."""

    lr_actor: float = 3e-6
    lr_critic: float = 1e-5
    discount: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    buffer_capacity: int = 50_000
    warmup_steps: int = 1000
    update_every: int = 1
    hidden_width: int = 256
    hidden_layers: int = 3
    denoise_steps: int = 4
    beta_min: float = 0.1
    beta_max: float = 10.0
    exploration_sigma: float = 0.2
    exploration_decay_steps: int = 50_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 25_000
    power_levels: int = 4
    altitude_levels: int = 5
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must be in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def desk_scale_hyperparams(**overrides) -> AgentHyperparams:
    """Preset for toy scenarios: smaller nets, faster learning rates, scaled
    rewards. Full-scale learning rates move parameters too little over a few
    thousand steps to measure anything."""
    base = dict(
        lr_actor=3e-5,
        lr_critic=1e-3,
        discount=0.9,
        batch_size=32,
        warmup_steps=500,
        hidden_width=64,
        exploration_decay_steps=4000,
        epsilon_decay_steps=3000,
        reward_scale=1e-3,
    )
    base.update(overrides)
    return AgentHyperparams(**base)


class ReplayBuffer:
    """Capacity-bounded FIFO ring with uniform seeded sampling."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._rng = rng
        self._items: list = []
        self._pos = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._pos] = item
        self._pos = (self._pos + 1) % self.capacity

    def sample(self, batch_size: int) -> list:
        idx = self._rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


def hungarian_assign(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-total-cost injective assignment of rows to columns.

    Returns (assignment, total) where assignment[k] is the column given to
    row k. Requires K <= M and finite costs.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if cost.shape[0] > cost.shape[1]:
        raise ValueError(f"need rows <= cols, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(cost.shape[0], dtype=np.int64)
    assignment[rows] = cols
    return assignment, float(cost[rows, cols].sum())


# -- update rules ----------------------------------------------------------


def critic_td_update(
    critic: DenseNet,
    critic_adam: AdamState,
    target_critic: DenseNet,
    target_policy,
    batch: list,
    hp: AgentHyperparams,
) -> float:
    """One Adam descent step on the mean squared TD error; returns the
    pre-step loss. target_policy maps a next state to a next action."""
    if not batch:
        raise ValueError("batch must be non-empty")
    n = len(batch)
    grads = zero_grads(critic)
    loss = 0.0
    for s, a, r, s2 in batch:
        a2 = target_policy(s2)
        q2 = forward_only(target_critic, np.concatenate([s2, a2]))[0]
        y = r * hp.reward_scale + hp.discount * q2
        q, tape = forward(critic, np.concatenate([s, a]))
        err = q[0] - y
        loss += err * err
        g, _ = backward(critic, tape, np.array([2.0 * err / n]))
        grads.add_(g)
    adam_step(critic, grads, critic_adam)
    return loss / n


def actor_pg_update(policy, critic: DenseNet, states: list, hp: AgentHyperparams) -> float:
    """One Adam ascent step on mean Q(s, pi(s)) through the policy's own
    differentiable sampler; returns the pre-step mean Q. The critic's
    parameters are left untouched."""
    if not states:
        raise ValueError("states must be non-empty")
    n = len(states)
    grads = zero_grads(policy.net)
    q_mean = 0.0
    for s in states:
        a, backfn = policy.sample_for_training(s)
        q, tape = forward(critic, np.concatenate([s, a]))
        q_mean += q[0]
        _, d_input = backward(critic, tape, np.array([1.0 / n]))
        grads.add_(backfn(d_input[len(s):]))
    adam_step(policy.net, grads, policy.adam, maximize=True)
    return q_mean / n


def ddqn_update(
    qnet: DenseNet,
    qnet_adam: AdamState,
    target_qnet: DenseNet,
    batch: list,
    hp: AgentHyperparams,
    heads: list[tuple[int, int]],
) -> float:
    """Factored double-Q update: each head picks argmax with the online net and
    evaluates it with the target net. One descent step on the mean squared
    error across heads; returns the pre-step loss."""
    if not batch:
        raise ValueError("batch must be non-empty")
    n = len(batch)
    n_heads = len(heads)
    grads = zero_grads(qnet)
    loss = 0.0
    for s, idxs, r, s2 in batch:
        q_next_online = forward_only(qnet, s2)
        q_next_target = forward_only(target_qnet, s2)
        q, tape = forward(qnet, s)
        dy = np.zeros(qnet.n_out)
        for h, (offset, size) in enumerate(heads):
            a_star = offset + int(np.argmax(q_next_online[offset : offset + size]))
            y = r * hp.reward_scale + hp.discount * q_next_target[a_star]
            sel = offset + int(idxs[h])
            err = q[sel] - y
            loss += err * err
            dy[sel] = 2.0 * err / (n * n_heads)
        g, _ = backward(qnet, tape, dy)
        grads.add_(g)
    adam_step(qnet, grads, qnet_adam)
    return loss / (n * n_heads)


# -- policies and agents ----------------------------------------------------


def _mlp_sizes(n_in: int, n_out: int, hp: AgentHyperparams) -> tuple[int, ...]:
    return (n_in, *([hp.hidden_width] * hp.hidden_layers), n_out)


class DiffusionPolicy:
    """Denoiser net plus schedule; exposes the differentiable sampler."""

    def __init__(self, net: DenseNet, schedule: DiffusionSchedule, adam: AdamState, rng: np.random.Generator):
        self.net = net
        self.schedule = schedule
        self.adam = adam
        self.rng = rng

    def act(self, state: np.ndarray, rng: np.random.Generator, *, evaluation: bool = False) -> np.ndarray:
        return sample_action(self.net, state, self.schedule, rng, evaluation=evaluation)

    def sample_for_training(self, state: np.ndarray):
        action, chain = sample_action_with_tape(self.net, state, self.schedule, self.rng)
        return action, lambda d_action: chain_backward(self.net, self.schedule, chain, d_action)


class MlpPolicy:
    """Plain tanh-output actor."""

    def __init__(self, net: DenseNet, adam: AdamState):
        self.net = net
        self.adam = adam

    def act(self, state: np.ndarray) -> np.ndarray:
        return forward_only(self.net, state)

    def sample_for_training(self, state: np.ndarray):
        action, tape = forward(self.net, state)
        return action, lambda d_action: backward(self.net, tape, d_action)[0]


class D3PGAgent:
    """Diffusion-policy deterministic policy gradient learner.

    Exploration comes from the stochastic reverse chain; evaluation actions
    re-seed the chain start per call, making the policy a pure function of
    (parameters, state).
    """

    kind = "d3pg"

    def __init__(self, scenario: NetworkScenario, hp: AgentHyperparams, seed: int):
        self.hp = hp
        self.seed = seed
        state_dim, action_dim = scenario.state_dim, scenario.action_dim
        self.schedule = build_schedule(hp.denoise_steps, hp.beta_min, hp.beta_max)
        init_rng = np.random.default_rng((seed, 2001))
        denoiser = init_dense(
            _mlp_sizes(action_dim + hp.denoise_steps + state_dim, action_dim, hp),
            init_rng,
            final_scale=0.01,
        )
        self.critic = init_dense(_mlp_sizes(state_dim + action_dim, 1, hp), init_rng)
        self.target_denoiser = clone(denoiser)
        self.target_critic = clone(self.critic)
        self.rng = np.random.default_rng((seed, 2002))
        self.policy = DiffusionPolicy(denoiser, self.schedule, AdamState.for_net(denoiser, hp.lr_actor), self.rng)
        self.critic_adam = AdamState.for_net(self.critic, hp.lr_critic)
        self.buffer = ReplayBuffer(hp.buffer_capacity, np.random.default_rng((seed, 2003)))
        self.train_steps = 0

    def act(self, state: np.ndarray, info: dict | None = None, *, evaluation: bool = False) -> np.ndarray:
        if evaluation:
            eval_rng = np.random.default_rng((self.seed, 2004))
            return self.policy.act(state, eval_rng, evaluation=True)
        return self.policy.act(state, self.rng)

    def observe(self, s, a, r, s2) -> None:
        self.buffer.push((s, a, r, s2))
        self.train_steps += 1

    def _target_policy(self, s2: np.ndarray) -> np.ndarray:
        return sample_action(self.target_denoiser, s2, self.schedule, self.rng, evaluation=True)

    def update(self) -> None:
        if len(self.buffer) == 0:
            return
        batch = self.buffer.sample(self.hp.batch_size)
        critic_td_update(self.critic, self.critic_adam, self.target_critic, self._target_policy, batch, self.hp)
        actor_pg_update(self.policy, self.critic, [s for s, _, _, _ in batch], self.hp)
        soft_update(self.target_denoiser, self.policy.net, self.hp.tau)
        soft_update(self.target_critic, self.critic, self.hp.tau)

    def save_checkpoint(self, directory, name: str = "d3pg") -> None:
        save_checkpoint(self.policy.net, f"{directory}/{name}_denoiser.npz")
        save_checkpoint(self.critic, f"{directory}/{name}_critic.npz")

    def load_checkpoint(self, directory, name: str = "d3pg") -> None:
        self.policy.net = load_checkpoint(f"{directory}/{name}_denoiser.npz")
        self.critic = load_checkpoint(f"{directory}/{name}_critic.npz")
        self.target_denoiser = clone(self.policy.net)
        self.target_critic = clone(self.critic)
        self.policy.adam = AdamState.for_net(self.policy.net, self.hp.lr_actor)
        self.critic_adam = AdamState.for_net(self.critic, self.hp.lr_critic)


class DDPGAgent:
    """MLP-actor deterministic policy gradient with linearly decayed Gaussian
    exploration noise on the raw actions."""

    kind = "ddpg"

    def __init__(self, scenario: NetworkScenario, hp: AgentHyperparams, seed: int):
        self.hp = hp
        self.seed = seed
        state_dim, action_dim = scenario.state_dim, scenario.action_dim
        init_rng = np.random.default_rng((seed, 2001))
        actor = init_dense(
            _mlp_sizes(state_dim, action_dim, hp), init_rng, output_activation="tanh", final_scale=0.01
        )
        self.critic = init_dense(_mlp_sizes(state_dim + action_dim, 1, hp), init_rng)
        self.target_actor = clone(actor)
        self.target_critic = clone(self.critic)
        self.policy = MlpPolicy(actor, AdamState.for_net(actor, hp.lr_actor))
        self.critic_adam = AdamState.for_net(self.critic, hp.lr_critic)
        self.rng = np.random.default_rng((seed, 2002))
        self.buffer = ReplayBuffer(hp.buffer_capacity, np.random.default_rng((seed, 2003)))
        self.train_steps = 0

    def _sigma(self) -> float:
        progress = min(1.0, self.train_steps / max(1, self.hp.exploration_decay_steps))
        return self.hp.exploration_sigma * (1.0 - progress)

    def act(self, state: np.ndarray, info: dict | None = None, *, evaluation: bool = False) -> np.ndarray:
        action = self.policy.act(state)
        if evaluation:
            return action
        noise = self._sigma() * self.rng.standard_normal(action.shape)
        return np.clip(action + noise, -1.0, 1.0)

    def observe(self, s, a, r, s2) -> None:
        self.buffer.push((s, a, r, s2))
        self.train_steps += 1

    def _target_policy(self, s2: np.ndarray) -> np.ndarray:
        return forward_only(self.target_actor, s2)

    def update(self) -> None:
        if len(self.buffer) == 0:
            return
        batch = self.buffer.sample(self.hp.batch_size)
        critic_td_update(self.critic, self.critic_adam, self.target_critic, self._target_policy, batch, self.hp)
        actor_pg_update(self.policy, self.critic, [s for s, _, _, _ in batch], self.hp)
        soft_update(self.target_actor, self.policy.net, self.hp.tau)
        soft_update(self.target_critic, self.critic, self.hp.tau)

    def save_checkpoint(self, directory, name: str = "ddpg") -> None:
        save_checkpoint(self.policy.net, f"{directory}/{name}_actor.npz")
        save_checkpoint(self.critic, f"{directory}/{name}_critic.npz")

    def load_checkpoint(self, directory, name: str = "ddpg") -> None:
        self.policy.net = load_checkpoint(f"{directory}/{name}_actor.npz")
        self.critic = load_checkpoint(f"{directory}/{name}_critic.npz")
        self.target_actor = clone(self.policy.net)
        self.target_critic = clone(self.critic)
        self.policy.adam = AdamState.for_net(self.policy.net, self.hp.lr_actor)
        self.critic_adam = AdamState.for_net(self.critic, self.hp.lr_critic)


class HDDQNAgent:
    """Hungarian channel assignment plus a factored double-DQN over discrete
    power levels (one head per transmitter) and altitude steps.

    The assignment cost of putting V2V link k on channel m is the negative
    pre-delay SINR estimate at reference power p_max/2, built from the
    observed gain families.
    """

    kind = "h_ddqn"

    def __init__(
        self, scenario: NetworkScenario, hp: AgentHyperparams, seed: int, channel_params: ChannelParams
    ):
        self.hp = hp
        self.seed = seed
        self.scenario = scenario
        self.channel_params = channel_params
        k, m = scenario.k_links, scenario.m_links
        self.heads: list[tuple[int, int]] = []
        offset = 0
        for _ in range(k + m):  # p_k heads then p_m heads
            self.heads.append((offset, hp.power_levels))
            offset += hp.power_levels
        self.heads.append((offset, hp.altitude_levels))
        offset += hp.altitude_levels
        init_rng = np.random.default_rng((seed, 2001))
        self.qnet = init_dense(_mlp_sizes(scenario.state_dim, offset, hp), init_rng)
        self.target_qnet = clone(self.qnet)
        self.qnet_adam = AdamState.for_net(self.qnet, hp.lr_critic)
        self.rng = np.random.default_rng((seed, 2002))
        self.buffer = ReplayBuffer(hp.buffer_capacity, np.random.default_rng((seed, 2003)))
        self.train_steps = 0
        self._last_idxs: np.ndarray | None = None
        self._altitude_raws = np.linspace(-1.0, 1.0, hp.altitude_levels)

    def _epsilon(self) -> float:
        progress = min(1.0, self.train_steps / max(1, self.hp.epsilon_decay_steps))
        return self.hp.epsilon_start + (self.hp.epsilon_end - self.hp.epsilon_start) * progress

    def _channel_scores(self, gains) -> np.ndarray:
        k_links, m_links = self.scenario.k_links, self.scenario.m_links
        p_ref = self.scenario.p_max / 2.0
        noise = self.channel_params.noise_power
        desired = p_ref * gains.h_v_k_hat  # (K,)
        interference = p_ref * gains.h_v_mk_hat  # (M, K)
        sinr = desired[None, :] / (interference + noise)  # (M, K)
        assignment, _ = hungarian_assign(-sinr.T)  # cost[k, m] = -sinr estimate
        scores = -np.ones((k_links, m_links))
        scores[np.arange(k_links), assignment] = 1.0
        return scores

    def act(self, state: np.ndarray, info: dict, *, evaluation: bool = False) -> np.ndarray:
        scores = self._channel_scores(info["gains"])
        q = forward_only(self.qnet, state)
        eps = 0.0 if evaluation else self._epsilon()
        idxs = np.empty(len(self.heads), dtype=np.int64)
        for h, (offset, size) in enumerate(self.heads):
            if eps > 0.0 and self.rng.random() < eps:
                idxs[h] = self.rng.integers(size)
            else:
                idxs[h] = int(np.argmax(q[offset : offset + size]))
        self._last_idxs = idxs
        k, m = self.scenario.k_links, self.scenario.m_links
        p_fracs = idxs[: k + m] / (self.hp.power_levels - 1)
        raw = np.concatenate(
            [scores.ravel(), 2.0 * p_fracs - 1.0, [self._altitude_raws[idxs[-1]]]]
        )
        return raw

    def observe(self, s, a, r, s2) -> None:
        self.buffer.push((s, self._last_idxs, r, s2))
        self.train_steps += 1

    def update(self) -> None:
        if len(self.buffer) == 0:
            return
        batch = self.buffer.sample(self.hp.batch_size)
        ddqn_update(self.qnet, self.qnet_adam, self.target_qnet, batch, self.hp, self.heads)
        soft_update(self.target_qnet, self.qnet, self.hp.tau)

    def save_checkpoint(self, directory, name: str = "h_ddqn") -> None:
        save_checkpoint(self.qnet, f"{directory}/{name}_qnet.npz")

    def load_checkpoint(self, directory, name: str = "h_ddqn") -> None:
        self.qnet = load_checkpoint(f"{directory}/{name}_qnet.npz")
        self.target_qnet = clone(self.qnet)
        self.qnet_adam = AdamState.for_net(self.qnet, self.hp.lr_critic)


class RandomAgent:
    """Uniform random raw actions; the no-learning reference policy."""

    kind = "random"

    def __init__(self, scenario: NetworkScenario, seed: int):
        self.action_dim = scenario.action_dim
        self.rng = np.random.default_rng((seed, 2002))
        self.train_steps = 0

    def act(self, state: np.ndarray, info: dict | None = None, *, evaluation: bool = False) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, self.action_dim)

    def observe(self, s, a, r, s2) -> None:
        self.train_steps += 1

    def update(self) -> None:
        pass


def make_agent(
    kind: str, scenario: NetworkScenario, channel_params: ChannelParams, hp: AgentHyperparams, seed: int
):
    """Agent factory. d3pg_wcsi shares the D3PG learner; only the env's
    observation mode differs, so identical seeds give identical machinery."""
    if kind in ("d3pg", "d3pg_wcsi"):
        return D3PGAgent(scenario, hp, seed)
    if kind == "ddpg":
        return DDPGAgent(scenario, hp, seed)
    if kind == "h_ddqn":
        return HDDQNAgent(scenario, hp, seed, channel_params)
    if kind == "random":
        return RandomAgent(scenario, seed)
    raise ValueError(f"unknown agent kind {kind!r}; choose from {AGENT_KINDS}")


# -- training loop -----------------------------------------------------------


@dataclass
class SlotRecord:
    """One slot's emitted metrics (episode == n_episodes marks evaluation)."""

    run_id: str
    seed: int
    episode: int
    slot: int
    reward: float
    mean_v2u_rate_mbps: float
    energy_j: float
    moving_avg_energy_j: float
    queue_j: float
    outage_violations: int
    inference_ms: float


@dataclass
class TrainResult:
    episode_rewards: list[float]
    records: list[SlotRecord]
    agent: object
    eval_records: list[SlotRecord] = field(default_factory=list)


def train(
    agent_kind: str,
    env: VehicularEnv,
    hp: AgentHyperparams,
    seed: int,
    episodes: int,
    *,
    sink=None,
    run_id: str = "run",
    eval_episode: bool = True,
) -> TrainResult:
    """Run episodes x slots of act / step / store / (after warmup) update, with
    soft target updates inside each agent update, then one deterministic
    evaluation episode (recorded with episode index == episodes).

    Timing covers policy inference only. Identical (env seed, agent seed,
    config) reproduce the metric series exactly.
    """
    if agent_kind == "d3pg_wcsi" and env.observe_aged:
        raise ValueError("d3pg_wcsi requires an env constructed with observe_aged=False")
    agent = make_agent(agent_kind, env.scenario, env.channel_params, hp, seed)
    dt = env.scenario.slot_duration
    records: list[SlotRecord] = []
    eval_records: list[SlotRecord] = []
    episode_rewards: list[float] = []
    global_step = 0

    def run_episode(ep: int, evaluation: bool) -> float:
        nonlocal global_step
        state, info = env.reset(ep)
        cum_energy = 0.0
        ep_reward = 0.0
        for t in range(env.n_slots):
            t0 = perf_counter()
            action = agent.act(state, info, evaluation=evaluation)
            inference_ms = (perf_counter() - t0) * 1e3
            next_state, rb, done, info = env.step(action)
            if not evaluation:
                agent.observe(state, action, rb.reward, next_state)
                global_step += 1
                if global_step >= hp.warmup_steps and global_step % hp.update_every == 0:
                    agent.update()
            cum_energy += rb.power * dt
            record = SlotRecord(
                run_id=run_id,
                seed=seed,
                episode=ep,
                slot=t,
                reward=rb.reward,
                mean_v2u_rate_mbps=rb.mean_v2u_rate * 1e-6,
                energy_j=rb.power * dt,
                moving_avg_energy_j=cum_energy / (t + 1),
                queue_j=info["queue"],
                outage_violations=rb.outage_violations,
                inference_ms=inference_ms,
            )
            (eval_records if evaluation else records).append(record)
            if sink is not None:
                sink(record)
            ep_reward += rb.reward
            state = next_state
        return ep_reward

    for ep in range(episodes):
        episode_rewards.append(run_episode(ep, evaluation=False))
    if eval_episode:
        run_episode(episodes, evaluation=True)
    return TrainResult(episode_rewards=episode_rewards, records=records, agent=agent, eval_records=eval_records)
