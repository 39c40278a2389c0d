"""Microgrid dispatch environment.

Hourly decision process over a fixed scenario: the agent picks normalized
battery charge/discharge requests plus three raw allocation weights; the
environment applies battery limits, splits the resulting supply across the
priority tiers via a softmax of the weights, and pays a reward equal to one
minus the priority-weighted shortage fraction.

Conventions (documented, not configurable):
  * Negative charge/discharge action halves mean "no request"; only the
    positive part maps to power.  A signed single-action encoding was
    rejected because the two requests are separate action dimensions.
  * Capacity caps are expressed at the SOC terminal (charge cap divided by
    eta_ch, discharge cap multiplied by eta_dis) so the SOC update can
    never leave [soc_min, soc_max].
  * Charging is additionally capped at the renewable surplus and
    discharging at the deficit: the grid is islanded, so stored energy can
    neither come from shed load nor vanish as unpenalized over-supply.
  * A step whose loads are all zero pays reward 1 (no demand, no unmet
    demand).
"""

import math
from dataclasses import dataclass

import numpy as np

from .scenario import Scenario

N_FEATURES = 6
N_ACTIONS = 5

FEATURE_NAMES = ("SOC", "Load_1", "Load_2", "Load_3",
                 "Renewable generation", "Net energy")
ACTION_NAMES = ("charge", "discharge", "w1", "w2", "w3")

# Shortage/load weighting of the three priority tiers (essential first).
PRIORITY_WEIGHTS = (7.0, 2.0, 1.0)


@dataclass(frozen=True)
class EnvConfig:
    soc_min: float = 0.2
    soc_max: float = 0.9
    eta_ch: float = 0.90
    eta_dis: float = 0.95
    e_max_kwh: float = 780.0
    p_conv_kw: float = 52.0
    reward_weights: tuple[float, float, float] = PRIORITY_WEIGHTS
    init_soc_range: tuple[float, float] | None = None  # None -> full SOC band

    def validate(self) -> None:
        if not 0.0 < self.soc_min < self.soc_max <= 1.0:
            raise ValueError(f"need 0 < soc_min < soc_max <= 1, "
                             f"got [{self.soc_min}, {self.soc_max}]")
        if not (0.0 < self.eta_ch <= 1.0 and 0.0 < self.eta_dis <= 1.0):
            raise ValueError("efficiencies must be in (0, 1]")
        if self.e_max_kwh <= 0 or self.p_conv_kw <= 0:
            raise ValueError("e_max_kwh and p_conv_kw must be > 0")
        w1, w2, w3 = self.reward_weights
        if not w1 > w2 > w3:
            raise ValueError(f"reward_weights must be strictly decreasing, "
                             f"got {self.reward_weights}")
        lo, hi = self.soc_range()
        if not self.soc_min <= lo <= hi <= self.soc_max:
            raise ValueError(f"init_soc_range {self.init_soc_range} must lie "
                             f"inside [{self.soc_min}, {self.soc_max}]")

    def soc_range(self) -> tuple[float, float]:
        if self.init_soc_range is None:
            return (self.soc_min, self.soc_max)
        return self.init_soc_range


@dataclass(frozen=True)
class EnvState:
    """Observation at one step: battery SOC, the three tier loads, renewable
    generation, and net power (generation minus total load)."""

    t: int
    soc: float
    loads_now: tuple[float, float, float]
    p_re_now: float
    p_net_now: float

    def features(self) -> np.ndarray:
        l1, l2, l3 = self.loads_now
        return np.array([self.soc, l1, l2, l3, self.p_re_now, self.p_net_now])


@dataclass(frozen=True)
class ActionVector:
    a_ch: float
    a_dis: float
    w_raw: tuple[float, float, float]

    @staticmethod
    def from_array(a) -> "ActionVector":
        """Clamp a length-5 vector into [-1, 1] and unpack it."""
        if len(a) != N_ACTIONS:
            raise ValueError(f"expected {N_ACTIONS} action components, got {len(a)}")
        c = [min(max(float(x), -1.0), 1.0) for x in a]
        return ActionVector(a_ch=c[0], a_dis=c[1], w_raw=(c[2], c[3], c[4]))


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    p_ch: float
    p_dis: float
    p_supply: float
    allocations: tuple[float, float, float]
    imbalances: tuple[float, float, float]
    shortages: tuple[float, float, float]
    done: bool


def _state_at(scn: Scenario, t: int, soc: float) -> EnvState:
    # Past the last row (terminal state) the exogenous series are frozen.
    row = min(t, scn.horizon - 1)
    l1, l2, l3 = scn.loads[row]
    p_re = float(scn.p_re[row])
    loads = (float(l1), float(l2), float(l3))
    return EnvState(t=t, soc=soc, loads_now=loads, p_re_now=p_re,
                    p_net_now=p_re - (loads[0] + loads[1] + loads[2]))


def reset(cfg: EnvConfig, scn: Scenario, seed: int) -> EnvState:
    """Start an episode: SOC uniform over the init range, clock at step 0."""
    if scn.horizon < 1:
        raise ValueError("cannot reset on an empty scenario")
    lo, hi = cfg.soc_range()
    soc = float(np.random.default_rng(seed).uniform(lo, hi)) if hi > lo else lo
    return _state_at(scn, 0, soc)


def normalize_weights(w_raw) -> tuple[float, float, float]:
    """Softmax of the three raw weights, max-subtracted for stability."""
    w = [float(x) for x in w_raw]
    if not all(math.isfinite(x) for x in w):
        raise ValueError(f"non-finite allocation weights: {w}")
    m = max(w)
    e = [math.exp(x - m) for x in w]
    s = e[0] + e[1] + e[2]
    return (e[0] / s, e[1] / s, e[2] / s)


def apply_battery(state: EnvState, act: ActionVector,
                  cfg: EnvConfig) -> tuple[float, float, float]:
    """Resolve battery requests into feasible flows and the next SOC.

    Returns (p_ch, p_dis, soc_next).  Requests are clamped, never rejected:
    mutual exclusion by the sign of net power, then the converter rating,
    the SOC-headroom caps, and the surplus/deficit caps.
    """
    p_ch_req = max(0.0, act.a_ch) * cfg.p_conv_kw
    p_dis_req = max(0.0, act.a_dis) * cfg.p_conv_kw

    if state.p_net_now >= 0:
        p_dis_req = 0.0
    else:
        p_ch_req = 0.0

    headroom_ch = max(0.0, cfg.soc_max - state.soc) * cfg.e_max_kwh / cfg.eta_ch
    headroom_dis = max(0.0, state.soc - cfg.soc_min) * cfg.e_max_kwh * cfg.eta_dis
    p_ch = min(p_ch_req, cfg.p_conv_kw, headroom_ch, max(0.0, state.p_net_now))
    p_dis = min(p_dis_req, cfg.p_conv_kw, headroom_dis, max(0.0, -state.p_net_now))

    soc_next = state.soc + (cfg.eta_ch * p_ch - p_dis / cfg.eta_dis) / cfg.e_max_kwh
    # The caps already hold the update inside the band; the clip only absorbs
    # last-ULP rounding so the bound is exact.
    soc_next = min(max(soc_next, cfg.soc_min), cfg.soc_max)
    return p_ch, p_dis, soc_next


def allocate_power(p_supply: float, w_hat, loads
                   ) -> tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]]:
    """Split supply across tiers by weight; report imbalances and shortages."""
    allocations = tuple(w * p_supply for w in w_hat)
    imbalances = tuple(a - l for a, l in zip(allocations, loads))
    shortages = tuple(-min(0.0, d) for d in imbalances)
    return allocations, imbalances, shortages


def step_reward(shortages, loads, cfg: EnvConfig) -> float:
    """One minus the priority-weighted shortage fraction, in [0, 1]."""
    w1, w2, w3 = cfg.reward_weights
    demand = w1 * loads[0] + w2 * loads[1] + w3 * loads[2]
    if demand == 0.0:
        return 1.0
    unmet = w1 * shortages[0] + w2 * shortages[1] + w3 * shortages[2]
    return 1.0 - unmet / demand


def step(cfg: EnvConfig, scn: Scenario, state: EnvState,
         action: ActionVector) -> StepOutcome:
    """Advance one hour: battery, supply split, reward, next observation."""
    if state.t >= scn.horizon:
        raise ValueError(f"episode already finished at t={state.t} "
                         f"(horizon {scn.horizon})")
    w_hat = normalize_weights(action.w_raw)
    p_ch, p_dis, soc_next = apply_battery(state, action, cfg)
    p_supply = state.p_re_now + p_dis - p_ch
    allocations, imbalances, shortages = allocate_power(
        p_supply, w_hat, state.loads_now)
    reward = step_reward(shortages, state.loads_now, cfg)
    done = state.t + 1 == scn.horizon
    return StepOutcome(
        next_state=_state_at(scn, state.t + 1, soc_next),
        reward=reward, p_ch=p_ch, p_dis=p_dis, p_supply=p_supply,
        allocations=allocations, imbalances=imbalances, shortages=shortages,
        done=done)


@dataclass
class EpisodeSummary:
    """Aggregates computed when an episode terminates."""

    reward_sum: float
    ri: float
    reward_final_norm: float
    steps: int


class MicrogridEnv:
    """Stateful wrapper around the pure step functions for rollout loops.

    Tracks the running episode's reward and shortage/load totals so the
    termination summary (episode resilience index and normalized final
    reward, maximum T + 1) is available without re-walking the trajectory.
    """

    def __init__(self, cfg: EnvConfig, scn: Scenario,
                 rng: np.random.Generator | int):
        cfg.validate()
        self.cfg = cfg
        self.scn = scn
        self.rng = np.random.default_rng(rng)
        self.state: EnvState | None = None
        self._reset_accumulators()

    def _reset_accumulators(self) -> None:
        self._reward_sum = 0.0
        self._shortage_sums = [0.0, 0.0, 0.0]
        self._load_sums = [0.0, 0.0, 0.0]
        self._steps = 0

    def reset(self) -> EnvState:
        lo, hi = self.cfg.soc_range()
        soc = float(self.rng.uniform(lo, hi)) if hi > lo else lo
        self.state = _state_at(self.scn, 0, soc)
        self._reset_accumulators()
        return self.state

    def step(self, action) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        act = action if isinstance(action, ActionVector) \
            else ActionVector.from_array(action)
        out = step(self.cfg, self.scn, self.state, act)
        self._reward_sum += out.reward
        for i in range(3):
            self._shortage_sums[i] += out.shortages[i]
            self._load_sums[i] += self.state.loads_now[i]
        self._steps += 1
        self.state = out.next_state
        return out

    def episode_summary(self) -> EpisodeSummary:
        """Summary of the episode so far (call at done for full-episode RI)."""
        w1, w2, w3 = self.cfg.reward_weights
        demand = (w1 * self._load_sums[0] + w2 * self._load_sums[1]
                  + w3 * self._load_sums[2])
        unmet = (w1 * self._shortage_sums[0] + w2 * self._shortage_sums[1]
                 + w3 * self._shortage_sums[2])
        ri = 1.0 if demand == 0.0 else 1.0 - unmet / demand
        norm = (self._reward_sum + ri) / (self._steps + 1) if self._steps else 1.0
        return EpisodeSummary(reward_sum=self._reward_sum, ri=ri,
                              reward_final_norm=norm, steps=self._steps)
