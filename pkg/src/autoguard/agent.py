"""Tabular Q-learning remediation agent with experience replay.

The learner is deliberately table-based: observations are discretised into
a finite state space and action values live in a sparse lookup defaulting
to zero. Each training step runs the usual loop - epsilon-greedy action,
orchestrated execution in the environment, reward from uptime delta /
verified mitigation / disruption cost, transition into a bounded FIFO
replay buffer, and a batched value backup over a uniformly sampled batch
once the buffer is warm.

update rule:  Q(s,a) <- (1 - lr) * Q(s,a) + lr * (r + discount * max_a' Q(s',a'))
with the bootstrap term dropped on terminal transitions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Any, NamedTuple

import numpy as np

from .catalog import ActionId, StageId
from .config import (
    AgentConfig,
    BinBounds,
    HealingConfig,
    MonitorConfig,
    PipelineConfig,
    RewardCoefficients,
)
from .errors import SamplingError
from .healing import execute_healing, resolve_params
from .monitor import (
    ActionHistory,
    FeatureVector,
    RiskWeights,
    build_feature_vector,
    normalize,
    risk_score,
)
from .pipeline import PipelineEnv


class DiscreteState(NamedTuple):
    """Binned observation; the Q-table key."""

    rho_bin: int
    cpu_bin: int
    mem_bin: int
    drift_bin: int
    stage: int
    last_action: int


@dataclass(frozen=True)
class RewardComponents:
    """Raw outcome facts one step of remediation produced."""

    delta_u: float
    mitigation_success: int
    disruption_cost: float

    def __post_init__(self):
        if self.mitigation_success not in (0, 1):
            raise ValueError("mitigation_success must be 0 or 1")
        if self.disruption_cost < 0:
            raise ValueError("disruption_cost must be >= 0")


def compute_reward(components: RewardComponents, coeffs: RewardCoefficients) -> float:
    """Weighted mix of uptime change, verified mitigation, and disruption."""
    return (
        coeffs.alpha * components.delta_u
        + coeffs.beta * components.mitigation_success
        - coeffs.gamma_cost * components.disruption_cost
    )


class Transition(NamedTuple):
    s: Any
    a: int
    r: float
    s_next: Any
    terminal: bool


class QTable:
    """Sparse state-action value lookup; unseen pairs read as 0."""

    def __init__(self, num_actions: int = len(ActionId)):
        self.num_actions = num_actions
        self._rows: dict[Any, list[float]] = {}

    def value(self, state: Any, action: int) -> float:
        row = self._rows.get(state)
        return row[action] if row is not None else 0.0

    def row(self, state: Any) -> tuple[float, ...]:
        row = self._rows.get(state)
        return tuple(row) if row is not None else (0.0,) * self.num_actions

    def row_mut(self, state: Any) -> list[float]:
        row = self._rows.get(state)
        if row is None:
            row = [0.0] * self.num_actions
            self._rows[state] = row
        return row

    def best_value(self, state: Any) -> float:
        row = self._rows.get(state)
        return max(row) if row is not None else 0.0

    def best_action(self, state: Any) -> int:
        """Greedy action; ties break toward the lowest action ordinal."""
        row = self._rows.get(state)
        if row is None:
            return 0
        return row.index(max(row))

    def states(self) -> list[Any]:
        return list(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    # -- audit serialization -------------------------------------------------

    CSV_HEADER = ("rho_bin", "cpu_bin", "mem_bin", "drift_bin", "stage",
                  "last_action", "action", "value")

    def save_csv(self, path: str) -> None:
        """Flat dump, one (state, action, value) per row, sorted for diffs."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for state in sorted(self._rows):
                row = self._rows[state]
                for action, value in enumerate(row):
                    writer.writerow([*state, action, repr(value)])

    @classmethod
    def load_csv(cls, path: str, num_actions: int = len(ActionId)) -> "QTable":
        table = cls(num_actions=num_actions)
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != cls.CSV_HEADER:
                raise ValueError(f"unexpected Q-table header: {header}")
            for parts in reader:
                state = DiscreteState(*(int(x) for x in parts[:6]))
                table.row_mut(state)[int(parts[6])] = float(parts[7])
        return table


class ReplayBuffer:
    """Bounded FIFO of transitions; eviction is strictly oldest-first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._head = 0              # ring-buffer write position once full

    def add(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._head] = transition
            self._head = (self._head + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, idx: int) -> Transition:
        return self._items[idx]


def replay_sample(
    buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator
) -> list[Transition]:
    """Uniform sample without replacement from the buffer's current contents."""
    n = len(buffer)
    if n < batch_size:
        raise SamplingError(
            f"buffer holds {n} transitions, cannot sample {batch_size}"
        )
    # Partial Fisher-Yates over a sparse index map: O(batch) regardless of
    # buffer size, and fully determined by the rng stream. One vectorised
    # draw keeps the per-step rng overhead flat. Position i is never read
    # again after iteration i, so only the displaced value needs storing.
    u = rng.random(batch_size)
    swaps: dict[int, int] = {}
    items = buffer._items
    picked: list[Transition] = []
    get = swaps.get
    for i in range(batch_size):
        j = i + int(u[i] * (n - i))
        vj = get(j, j)
        swaps[j] = get(i, i)
        picked.append(items[vj])
    return picked


def select_action(
    q: QTable, state: Any, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy: explore uniformly with probability epsilon, else the
    greedy action with lowest-ordinal tie-breaking."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        idx = int(rng.integers(0, q.num_actions))
    else:
        idx = q.best_action(state)
    if q.num_actions == len(ActionId):
        return ActionId(idx)
    return idx


def q_update(
    q: QTable, t: Transition, learning_rate: float, discount: float
) -> QTable:
    """One value backup; the bootstrap term is zero on terminal transitions."""
    if not 0.0 < learning_rate <= 1.0:
        raise ValueError(f"learning_rate must lie in (0, 1], got {learning_rate}")
    target = t.r
    if not t.terminal:
        target += discount * q.best_value(t.s_next)
    row = q.row_mut(t.s)
    row[t.a] = (1.0 - learning_rate) * row[t.a] + learning_rate * target
    return q


def _q_update_batch(
    q: QTable, batch: list[Transition], learning_rate: float, discount: float
) -> None:
    """Same backup as q_update applied over a batch, with the dict access
    inlined; this sits on the training hot path."""
    rows = q._rows
    n = q.num_actions
    keep = 1.0 - learning_rate
    for t in batch:
        target = t.r
        if not t.terminal:
            nxt = rows.get(t.s_next)
            if nxt is not None:
                target += discount * max(nxt)
        row = rows.get(t.s)
        if row is None:
            row = [0.0] * n
            rows[t.s] = row
        row[t.a] = keep * row[t.a] + learning_rate * target


def discretize(fv: FeatureVector, bounds: BinBounds) -> DiscreteState:
    """Uniform binning of the observation onto the Q-table key space."""

    def bin_unit(x: float, n: int) -> int:
        return min(n - 1, max(0, int(x * n)))

    drift_bin = min(
        bounds.drift_bins - 1,
        max(0, int(fv.dep_drift / bounds.drift_cap * bounds.drift_bins)),
    )
    last_action, _ = fv.hist_acts[-1]
    return DiscreteState(
        rho_bin=bin_unit(fv.rho, bounds.rho_bins),
        cpu_bin=bin_unit(fv.cpu, bounds.cpu_bins),
        mem_bin=bin_unit(fv.mem, bounds.mem_bins),
        drift_bin=drift_bin,
        stage=int(fv.stage),
        last_action=int(last_action),
    )


@dataclass
class TrainResult:
    qtable: QTable
    rewards: list[float]        # total reward per episode
    epsilons: list[float]       # epsilon used per episode


def train(
    env_config: PipelineConfig,
    agent_config: AgentConfig,
    monitor_config: MonitorConfig | None = None,
    healing_config: HealingConfig | None = None,
) -> TrainResult:
    """Run the full training loop and return the table plus learning curve.

    Episodes replay deterministically from (env rng_seed, episode index);
    the agent's exploration and replay draws come from a separate stream
    derived from the same seed, so the whole run is reproducible
    bit-for-bit.
    """
    env_config.validate()
    agent_config.validate()
    mon_cfg = monitor_config or MonitorConfig()
    heal_cfg = healing_config or HealingConfig()
    weights = RiskWeights.from_config(mon_cfg)
    baselines = mon_cfg.metric_baselines
    default_baseline = mon_cfg.default_metric_baseline

    env = PipelineEnv(env_config)
    q = QTable()
    buffer = ReplayBuffer(agent_config.buffer_capacity)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=(int(env_config.rng_seed) & (2**64 - 1), 0xA6E17))
    ))

    coeffs = agent_config.reward
    bins = agent_config.bins
    lr = agent_config.learning_rate
    discount = agent_config.discount
    batch_size = agent_config.batch_size
    rewards: list[float] = []
    epsilons: list[float] = []

    for episode in range(agent_config.episodes):
        epsilon = agent_config.epsilon.value(episode)
        state, events = env.reset(episode=episode)
        history = ActionHistory(mon_cfg.history_len)
        rho = risk_score(normalize(events, baselines, default_baseline), weights)
        fv = build_feature_vector(rho, state, history)
        s = discretize(fv, bins)
        total = 0.0

        done = False
        while not done:
            action = select_action(q, s, epsilon, rng)
            if action is ActionId.NO_OP:
                outcome = env.step(ActionId.NO_OP)
                verified = False
                cost = 0.0
            else:
                params = resolve_params(env)
                record = execute_healing(
                    action, params, env, heal_cfg.policy, heal_cfg, risk=rho
                )
                if record.executed:
                    outcome = record.outcome
                    cost = outcome.disruption_cost
                else:
                    outcome = env.step(ActionId.NO_OP)
                    cost = 0.0
                verified = record.verified
            history.push(action, verified)

            reward = compute_reward(
                RewardComponents(
                    delta_u=outcome.uptime_after - outcome.uptime_before,
                    mitigation_success=1 if verified else 0,
                    disruption_cost=cost,
                ),
                coeffs,
            )
            total += reward
            done = outcome.done

            rho = risk_score(
                normalize(outcome.events, baselines, default_baseline), weights
            )
            fv = build_feature_vector(rho, outcome.state, history)
            s_next = discretize(fv, bins)
            buffer.add(Transition(s, int(action), reward, s_next, done))
            if len(buffer) >= batch_size:
                _q_update_batch(q, replay_sample(buffer, batch_size, rng), lr, discount)
            s = s_next

        rewards.append(total)
        epsilons.append(epsilon)

    return TrainResult(qtable=q, rewards=rewards, epsilons=epsilons)


def greedy_policy(q: QTable):
    """Extract the deterministic greedy policy from a trained table."""

    def policy(state: DiscreteState) -> ActionId:
        return ActionId(q.best_action(state))

    return policy


def moving_average(values: list[float], window: int) -> list[float]:
    """Trailing moving average; entry i averages values[max(0, i-w+1)..i]."""
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def policy_convergence_episode(
    rewards: list[float], window: int = 100, band: float = 0.05
) -> int | None:
    """First episode whose trailing moving average stays within `band` of
    the final-window average. None when the curve never settles (or is
    shorter than the window)."""
    if len(rewards) < window:
        return None
    ma = moving_average(rewards, window)
    final = sum(rewards[-window:]) / window
    tolerance = band * max(abs(final), 1e-9)
    for episode in range(window - 1, len(rewards)):
        if abs(ma[episode] - final) <= tolerance:
            return episode + 1          # episodes are counted from 1
    return None
