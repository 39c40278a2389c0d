"""Proximal policy optimization for the microgrid dispatch task.

The trainer is deliberately self-contained: rollouts come from a small
ensemble of simulator instances, advantages use generalized advantage
estimation, and updates apply the clipped surrogate objective with
analytic gradients through the numpy networks in :mod:`mgrl.neural`.

Training optimizes the per-step reward stream only; the episode-level
resilience bonus enters the normalized episode score that is *reported*
per update, not the return the critic regresses.
"""

from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig, EpisodeSummary, MicrogridEnv, N_ACTIONS, N_FEATURES
from .neural import (
    LOG_2PI,
    LOG_STD_MAX,
    LOG_STD_MIN,
    GaussianPolicy,
    ValueNet,
    adam_init,
    adam_step,
    forward_policy,
    forward_value,
    gaussian_entropy,
    make_policy,
    make_value,
    mlp_backward,
    policy_mean_cached,
    policy_params,
    sample_action,
    value_cached,
    value_params,
)
from .scenario import Scenario
from .seeding import derive_rng
from .trajectory import Trajectory


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or gradient stops being finite.

    ``diagnostic`` carries enough context (update index, loss parts) to
    write a post-mortem record.
    """

    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    c1: float = 0.5
    c2: float = 0.01
    learning_rate: float = 3e-4
    rollout_steps: int = 2048
    epochs_per_update: int = 10
    minibatch_size: int = 256
    total_updates: int = 150
    n_envs: int = 8
    hidden_sizes: tuple[int, ...] = (64, 64)
    init_log_std: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError(
                f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.clip_eps <= 0.0:
            raise ValueError(f"clip_eps must be positive, got {self.clip_eps}")
        if self.learning_rate <= 0.0:
            raise ValueError(
                f"learning_rate must be positive, got {self.learning_rate}")
        if self.c1 < 0.0 or self.c2 < 0.0:
            raise ValueError("loss coefficients c1, c2 must be non-negative")
        if self.rollout_steps <= 0 or self.n_envs <= 0:
            raise ValueError("rollout_steps and n_envs must be positive")
        if self.rollout_steps % self.n_envs != 0:
            raise ValueError(
                f"rollout_steps ({self.rollout_steps}) must be divisible by "
                f"n_envs ({self.n_envs})")
        if self.epochs_per_update <= 0 or self.minibatch_size <= 0:
            raise ValueError(
                "epochs_per_update and minibatch_size must be positive")
        if self.total_updates < 0:
            raise ValueError(
                f"total_updates must be non-negative, got {self.total_updates}")
        if not self.hidden_sizes or any(h <= 0 for h in self.hidden_sizes):
            raise ValueError(f"bad hidden_sizes {self.hidden_sizes!r}")
        if not np.isfinite(self.init_log_std):
            raise ValueError("init_log_std must be finite")


@dataclass
class RolloutBuffer:
    """One rollout worth of transitions, time-major over the env ensemble.

    Shapes are ``(T, n_envs, ...)`` until :meth:`flattened`, which returns
    C-order flattened views suitable for minibatching.  ``bootstrap`` holds
    the critic value of each env's state after the final stored step, used
    to close off truncated episodes in the advantage recursion.
    """

    states: np.ndarray        # (T, n_envs, N_FEATURES)
    actions: np.ndarray       # (T, n_envs, N_ACTIONS) pre-clip samples
    log_probs: np.ndarray     # (T, n_envs)
    rewards: np.ndarray       # (T, n_envs)
    values: np.ndarray        # (T, n_envs)
    dones: np.ndarray         # (T, n_envs) 1.0 where the episode ended
    bootstrap: np.ndarray     # (n_envs,)
    episode_summaries: list[EpisodeSummary] = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n_transitions(self) -> int:
        return self.rewards.size

    def flattened(self) -> dict[str, np.ndarray]:
        if self.advantages is None or self.returns is None:
            raise ValueError("advantages not computed yet")
        return {
            "states": self.states.reshape(-1, N_FEATURES),
            "actions": self.actions.reshape(-1, N_ACTIONS),
            "log_probs": self.log_probs.reshape(-1),
            "advantages": self.advantages.reshape(-1),
            "returns": self.returns.reshape(-1),
        }


@dataclass(frozen=True)
class TrainStats:
    update: int
    mean_reward_norm: float
    ri: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_frac: float


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value: ValueNet
    stats: list[TrainStats]


@dataclass
class EvalResult:
    mean_reward_norm: float
    ri: float
    trajectory: Trajectory
    summaries: list[EpisodeSummary]


def obs_stats_from_scenario(
        env_cfg: EnvConfig, scn: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Fixed observation mean/scale derived from the scenario series.

    SOC is centred on the allowed band; the exogenous features use the
    scenario's own mean and standard deviation.  Scales are floored so a
    constant series cannot produce a degenerate normalizer.
    """
    soc_lo, soc_hi = env_cfg.soc_min, env_cfg.soc_max
    p_net = scn.p_re - scn.loads.sum(axis=1)
    cols = [scn.loads[:, 0], scn.loads[:, 1], scn.loads[:, 2],
            scn.p_re, p_net]
    mean = np.array([0.5 * (soc_lo + soc_hi)] + [c.mean() for c in cols])
    scale = np.array([max(0.5 * (soc_hi - soc_lo), 1e-6)]
                     + [max(float(c.std()), 1e-6) for c in cols])
    return mean, scale


def collect_rollouts(policy: GaussianPolicy, value: ValueNet,
                     envs: list[MicrogridEnv], n_steps: int,
                     rng: np.random.Generator) -> RolloutBuffer:
    """Advance every env in lockstep until exactly n_steps transitions exist.

    Envs that finish an episode are reset in place and their summary kept,
    so a buffer may span several (possibly partial) episodes per env.
    """
    n_envs = len(envs)
    if n_envs == 0:
        raise ValueError("need at least one environment")
    if n_steps % n_envs != 0:
        raise ValueError(
            f"n_steps ({n_steps}) must be divisible by n_envs ({n_envs})")
    steps = n_steps // n_envs

    for env in envs:
        if env.state is None:
            env.reset()

    states = np.empty((steps, n_envs, N_FEATURES))
    actions = np.empty((steps, n_envs, N_ACTIONS))
    log_probs = np.empty((steps, n_envs))
    rewards = np.empty((steps, n_envs))
    values = np.empty((steps, n_envs))
    dones = np.zeros((steps, n_envs))
    summaries: list[EpisodeSummary] = []

    for t in range(steps):
        obs = np.stack([env.state.features() for env in envs])
        sample = sample_action(policy, obs, rng)
        values[t] = forward_value(value, obs)
        states[t] = obs
        actions[t] = sample.preclip
        log_probs[t] = sample.log_prob
        for i, env in enumerate(envs):
            outcome = env.step(sample.action[i])
            rewards[t, i] = outcome.reward
            if outcome.done:
                dones[t, i] = 1.0
                summaries.append(env.episode_summary())
                env.reset()

    obs = np.stack([env.state.features() for env in envs])
    bootstrap = forward_value(value, obs)
    return RolloutBuffer(states=states, actions=actions, log_probs=log_probs,
                         rewards=rewards, values=values, dones=dones,
                         bootstrap=np.asarray(bootstrap, dtype=np.float64),
                         episode_summaries=summaries)


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                bootstrap, gamma: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over a (possibly batched) rollout.

    Accepts 1-D arrays or time-major ``(T, n_envs)`` arrays.  ``dones``
    gates both the bootstrap term and the recursion so advantages never
    leak across episode boundaries.  Returns (advantages, returns) where
    returns are the value-function regression targets.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if not (r.shape == v.shape == d.shape):
        raise ValueError("rewards, values and dones must share a shape")
    steps = r.shape[0]
    adv = np.zeros_like(r)
    gae = np.zeros(r.shape[1:])
    boot = np.asarray(bootstrap, dtype=np.float64)
    for t in reversed(range(steps)):
        next_v = boot if t == steps - 1 else v[t + 1]
        not_done = 1.0 - d[t]
        delta = r[t] + gamma * next_v * not_done - v[t]
        gae = delta + gamma * lam * not_done * gae
        adv[t] = gae
    return adv, adv + v


def clipped_policy_loss(log_probs_new: np.ndarray, log_probs_old: np.ndarray,
                        advantages: np.ndarray, clip_eps: float) -> float:
    """PPO clipped surrogate; advantages are assumed already normalized."""
    ratio = np.exp(log_probs_new - log_probs_old)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    return float(-np.mean(np.minimum(surr1, surr2)))


def value_loss(values_pred: np.ndarray, returns: np.ndarray) -> float:
    return float(np.mean((values_pred - returns) ** 2))


def total_loss(policy_loss_: float, value_loss_: float, entropy: float,
               c1: float, c2: float) -> float:
    return policy_loss_ + c1 * value_loss_ - c2 * entropy


@dataclass
class LossReport:
    total: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_frac: float
    policy_grads: list[np.ndarray] | None = None
    value_grads: list[np.ndarray] | None = None


def ppo_loss_and_grads(policy: GaussianPolicy, value: ValueNet,
                       batch: dict[str, np.ndarray], cfg: PpoConfig,
                       with_grads: bool = True) -> LossReport:
    """Evaluate the PPO objective on a minibatch, with analytic gradients.

    Gradients follow the same parameter order as ``policy_params`` /
    ``value_params``.  The min() in the surrogate routes gradient to the
    unclipped branch on ties, and the log-std gradient is gated to zero
    wherever the clamp is active.
    """
    obs = batch["states"]
    act = batch["actions"]
    lp_old = batch["log_probs"]
    adv = batch["advantages"]
    ret = batch["returns"]
    n = obs.shape[0]

    mean, cache = policy_mean_cached(policy, obs)
    log_std = policy.clamped_log_std()
    sigma = np.exp(log_std)
    z = (act - mean) / sigma
    lp_new = (-0.5 * np.sum(z * z, axis=1) - np.sum(log_std)
              - 0.5 * len(log_std) * LOG_2PI)
    ratio = np.exp(lp_new - lp_old)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
    pol_loss = float(-np.mean(np.minimum(surr1, surr2)))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps))

    vals, vcache = value_cached(value, obs)
    val_loss = value_loss(vals, ret)
    entropy = gaussian_entropy(log_std)
    total = total_loss(pol_loss, val_loss, entropy, cfg.c1, cfg.c2)
    report = LossReport(total=total, policy_loss=pol_loss,
                        value_loss=val_loss, entropy=entropy,
                        clip_frac=clip_frac)
    if not with_grads:
        return report

    unclipped = (surr1 <= surr2).astype(np.float64)
    g_lp = -(adv * ratio * unclipped) / n          # d total / d lp_new
    g_mean = g_lp[:, None] * (z / sigma)
    g_log_std = np.sum(g_lp[:, None] * (z * z - 1.0), axis=0) - cfg.c2
    clamp_open = ((policy.log_std > LOG_STD_MIN)
                  & (policy.log_std < LOG_STD_MAX)).astype(np.float64)
    g_log_std = g_log_std * clamp_open
    gw, gb, _ = mlp_backward(policy.trunk, cache, g_mean)
    report.policy_grads = [*gw, *gb, g_log_std]

    g_val = (cfg.c1 * 2.0 * (vals - ret) / n)[:, None]
    vgw, vgb, _ = mlp_backward(value.net, vcache, g_val)
    report.value_grads = [*vgw, *vgb]
    return report


def make_envs(env_cfg: EnvConfig, scn: Scenario, n_envs: int,
              seed: int) -> list[MicrogridEnv]:
    return [MicrogridEnv(env_cfg, scn, derive_rng(seed, f"env-{i}"))
            for i in range(n_envs)]


def train(cfg: PpoConfig, env_cfg: EnvConfig, scn: Scenario,
          checkpoint_fn=None) -> TrainResult:
    """Run PPO for cfg.total_updates and return the trained networks.

    ``checkpoint_fn(update, policy, value, stats)`` is invoked after each
    completed update when given.  Raises TrainingDivergedError the moment
    any loss component stops being finite.
    """
    cfg.validate()
    env_cfg.validate()
    obs_mean, obs_scale = obs_stats_from_scenario(env_cfg, scn)
    policy = make_policy(N_FEATURES, N_ACTIONS, cfg.hidden_sizes,
                         derive_rng(cfg.seed, "policy-init"),
                         obs_mean, obs_scale, init_log_std=cfg.init_log_std)
    value = make_value(N_FEATURES, cfg.hidden_sizes,
                       derive_rng(cfg.seed, "value-init"),
                       obs_mean, obs_scale)
    envs = make_envs(env_cfg, scn, cfg.n_envs, cfg.seed)
    rollout_rng = derive_rng(cfg.seed, "rollout")
    shuffle_rng = derive_rng(cfg.seed, "minibatch")

    p_params = policy_params(policy)
    v_params = value_params(value)
    p_opt = adam_init(p_params, cfg.learning_rate)
    v_opt = adam_init(v_params, cfg.learning_rate)

    stats: list[TrainStats] = []
    last_reward_norm = float("nan")
    last_ri = float("nan")
    for update in range(cfg.total_updates):
        buf = collect_rollouts(policy, value, envs, cfg.rollout_steps,
                               rollout_rng)
        adv, ret = compute_gae(buf.rewards, buf.values, buf.dones,
                               buf.bootstrap, cfg.gamma, cfg.gae_lambda)
        buf.advantages = (adv - adv.mean()) / (adv.std() + 1e-8)
        buf.returns = ret
        flat = buf.flattened()
        n = buf.n_transitions

        parts = np.zeros(5)  # total, policy, value, entropy, clip_frac
        n_batches = 0
        for _ in range(cfg.epochs_per_update):
            perm = shuffle_rng.permutation(n)
            for lo in range(0, n, cfg.minibatch_size):
                idx = perm[lo:lo + cfg.minibatch_size]
                batch = {k: a[idx] for k, a in flat.items()}
                rep = ppo_loss_and_grads(policy, value, batch, cfg)
                if not np.isfinite(rep.total):
                    raise TrainingDivergedError(
                        f"non-finite loss at update {update}",
                        diagnostic={"update": update,
                                    "policy_loss": rep.policy_loss,
                                    "value_loss": rep.value_loss,
                                    "entropy": rep.entropy})
                adam_step(p_params, rep.policy_grads, p_opt)
                adam_step(v_params, rep.value_grads, v_opt)
                parts += (rep.total, rep.policy_loss, rep.value_loss,
                          rep.entropy, rep.clip_frac)
                n_batches += 1
        parts /= n_batches

        if buf.episode_summaries:
            last_reward_norm = float(np.mean(
                [s.reward_final_norm for s in buf.episode_summaries]))
            last_ri = float(np.mean(
                [s.ri for s in buf.episode_summaries]))
        st = TrainStats(update=update, mean_reward_norm=last_reward_norm,
                        ri=last_ri, policy_loss=float(parts[1]),
                        value_loss=float(parts[2]), entropy=float(parts[3]),
                        clip_frac=float(parts[4]))
        stats.append(st)
        if checkpoint_fn is not None:
            checkpoint_fn(update, policy, value, st)
    return TrainResult(policy=policy, value=value, stats=stats)


def run_episode(policy: GaussianPolicy, env: MicrogridEnv,
                deterministic: bool = True,
                rng: np.random.Generator | None = None,
                ) -> tuple[EpisodeSummary, Trajectory]:
    """Play one full episode and record it step by step."""
    if not deterministic and rng is None:
        raise ValueError("stochastic rollout needs an rng")
    state = env.reset()
    cols: dict[str, list] = {k: [] for k in
                             ("soc", "p_re", "loads", "p_ch", "p_dis",
                              "p_supply", "alloc", "imb", "sh", "reward")}
    done = False
    while not done:
        if deterministic:
            mean, _ = forward_policy(policy, state.features())
            action = np.clip(mean, -1.0, 1.0)
        else:
            action = sample_action(policy, state.features(), rng).action
        out = env.step(action)
        cols["soc"].append(state.soc)
        cols["p_re"].append(state.p_re_now)
        cols["loads"].append(state.loads_now)
        cols["p_ch"].append(out.p_ch)
        cols["p_dis"].append(out.p_dis)
        cols["p_supply"].append(out.p_supply)
        cols["alloc"].append(out.allocations)
        cols["imb"].append(out.imbalances)
        cols["sh"].append(out.shortages)
        cols["reward"].append(out.reward)
        state = out.next_state
        done = out.done
    traj = Trajectory(
        soc=np.array(cols["soc"]), p_re=np.array(cols["p_re"]),
        loads=np.array(cols["loads"]), p_ch=np.array(cols["p_ch"]),
        p_dis=np.array(cols["p_dis"]), p_supply=np.array(cols["p_supply"]),
        allocations=np.array(cols["alloc"]),
        imbalances=np.array(cols["imb"]), shortages=np.array(cols["sh"]),
        reward=np.array(cols["reward"]))
    return env.episode_summary(), traj


def evaluate_policy(policy: GaussianPolicy, env_cfg: EnvConfig,
                    scn: Scenario, n_episodes: int = 1,
                    deterministic: bool = True, seed: int = 0) -> EvalResult:
    """Score a policy over n_episodes; the first episode is kept in full."""
    if n_episodes <= 0:
        raise ValueError(f"n_episodes must be positive, got {n_episodes}")
    summaries = []
    first_traj = None
    for ep in range(n_episodes):
        env = MicrogridEnv(env_cfg, scn, derive_rng(seed, f"eval-reset-{ep}"))
        rng = derive_rng(seed, f"eval-action-{ep}")
        summary, traj = run_episode(policy, env, deterministic, rng)
        summaries.append(summary)
        if first_traj is None:
            first_traj = traj
    return EvalResult(
        mean_reward_norm=float(np.mean([s.reward_final_norm
                                        for s in summaries])),
        ri=float(np.mean([s.ri for s in summaries])),
        trajectory=first_traj, summaries=summaries)
