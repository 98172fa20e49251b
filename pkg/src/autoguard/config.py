"""Configuration objects, JSON loading, validation, and config digests.

Every numeric default used anywhere in the package is surfaced here so a
single JSON file can override it. `load_config` accepts a partial document
and merges it over the defaults; validation errors always name the
offending field.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Any

from .catalog import (
    DEFAULT_STAGE_SEQUENCE,
    ActionId,
    AttackKind,
    EffectEntry,
    METRIC_CPU,
    METRIC_MEM,
    StageId,
    default_effect_table,
)
from .errors import ConfigError


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

@dataclass
class TrafficProfile:
    """Benign background traffic rates; magnitudes come from seeded draws."""

    log_rate: float = 1.8              # Poisson rate of background log lines
    log_signature_prob: float = 0.10   # chance a benign log carries harmless chatter
    log_collision_prob: float = 0.13   # chance it carries rule-colliding chatter
    log_magnitude: tuple[float, float] = (0.1, 0.9)
    collision_magnitude: tuple[float, float] = (0.3, 1.1)
    scanner_prob: float = 0.10         # routine scan findings (low magnitude)
    scanner_magnitude: tuple[float, float] = (0.02, 0.30)
    network_prob: float = 0.50
    network_signature_prob: float = 0.03
    network_magnitude: tuple[float, float] = (0.05, 0.60)


@dataclass
class ScheduledAttack:
    """One explicit attack occurrence."""

    step: int
    kind: AttackKind
    target: int | None = None          # service index; drawn per episode if None
    duration_cap: int | None = None    # falls back to the kind's profile


@dataclass
class AttackPlan:
    """Either an explicit schedule (replayed every episode) or a seeded
    per-episode generator ("rate" mode)."""

    mode: str = "rate"                 # "rate" | "explicit"
    schedule: list[ScheduledAttack] = field(default_factory=list)
    # rate-mode knobs
    count_weights: tuple[float, ...] = (0.10, 0.50, 0.40)   # P(0), P(1), P(2) attacks
    min_onset: int = 6
    max_onset: int = 30
    min_gap: int = 16
    kinds: tuple[AttackKind, ...] = tuple(AttackKind)


@dataclass
class PipelineConfig:
    """Static description of one simulated pipeline."""

    num_services: int = 5
    episode_length: int = 64
    stage_sequence: tuple[StageId, ...] = DEFAULT_STAGE_SEQUENCE
    attack: AttackPlan = field(default_factory=AttackPlan)
    rng_seed: int = 7
    effect_table: dict[tuple[AttackKind, ActionId], EffectEntry] = field(
        default_factory=default_effect_table
    )
    traffic: TrafficProfile = field(default_factory=TrafficProfile)
    # service dynamics
    recovery_rate: float = 0.15
    cpu_base: float = 0.30
    mem_base: float = 0.40
    metric_noise: float = 0.03
    drift_decay: float = 0.80
    health_floor: float = 0.0

    def validate(self) -> None:
        if self.num_services < 1:
            raise ConfigError("env.num_services must be a positive count")
        if self.episode_length < 1:
            raise ConfigError("env.episode_length must be >= 1")
        if not self.stage_sequence:
            raise ConfigError("env.stage_sequence must be non-empty")
        if not (-(2**63) <= int(self.rng_seed) < 2**64):
            raise ConfigError("env.rng_seed must fit in 64 bits")
        if self.attack.mode not in ("rate", "explicit"):
            raise ConfigError("env.attack.mode must be 'rate' or 'explicit'")
        if self.attack.mode == "explicit":
            for i, sched in enumerate(self.attack.schedule):
                # Window 0 is the reset batch and starts attack-free, so the
                # earliest schedulable onset is step 1.
                if not 1 <= sched.step < self.episode_length:
                    raise ConfigError(
                        f"env.attack.schedule[{i}].step = {sched.step} is outside "
                        f"the episode (valid onsets are 1..{self.episode_length - 1})"
                    )
                if sched.target is not None and not 0 <= sched.target < self.num_services:
                    raise ConfigError(f"env.attack.schedule[{i}].target out of range")
        else:
            if not 1 <= self.attack.min_onset <= self.attack.max_onset:
                raise ConfigError("env.attack.min_onset must be <= max_onset and >= 1")
            if self.attack.max_onset >= self.episode_length:
                raise ConfigError(
                    f"env.attack.max_onset = {self.attack.max_onset} must be < "
                    f"episode_length = {self.episode_length}"
                )
            if abs(sum(self.attack.count_weights) - 1.0) > 1e-9:
                raise ConfigError("env.attack.count_weights must sum to 1")
        for (kind, action), entry in self.effect_table.items():
            if not 0.0 <= entry.success_prob <= 1.0:
                raise ConfigError(
                    f"env.effect_table[{kind.value},{action.name}].success_prob "
                    "must lie in [0, 1]"
                )
            if entry.disruption_cost < 0 or entry.uptime_penalty < 0:
                raise ConfigError(
                    f"env.effect_table[{kind.value},{action.name}] costs must be >= 0"
                )


# ---------------------------------------------------------------------------
# Monitor
# ---------------------------------------------------------------------------

@dataclass
class MonitorConfig:
    # Scanner findings weigh heaviest; thresholds sit above the logistic
    # midpoint because zero evidence maps to a score of exactly 0.5.
    w_v: float = 0.5
    w_m: float = 0.3
    w_l: float = 0.2
    detection_threshold: float = 0.60
    metric_baselines: dict[str, float] = field(
        default_factory=lambda: {METRIC_CPU: 0.45, METRIC_MEM: 0.55}
    )
    default_metric_baseline: float = 1.0
    history_len: int = 4

    def validate(self) -> None:
        for name in ("w_v", "w_m", "w_l"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"monitor.{name} must be finite")
        if not 0.0 < self.detection_threshold < 1.0:
            raise ConfigError("monitor.detection_threshold must lie in (0, 1)")
        if self.history_len < 1:
            raise ConfigError("monitor.history_len must be >= 1")


# ---------------------------------------------------------------------------
# Agent
# ---------------------------------------------------------------------------

@dataclass
class RewardCoefficients:
    """Weights of the per-step reward: uptime delta, verified mitigation,
    and the disruption-cost penalty.

    The mitigation bonus is deliberately large relative to action costs:
    with a 0.95 discount, postponing a verified fix by one step forfeits
    (1 - discount) * bonus, and that has to clearly outweigh the noise in
    sampled action values or the learner sits on its hands mid-incident.
    """

    alpha: float = 1.0
    beta: float = 5.0
    gamma_cost: float = 1.0

    def validate(self) -> None:
        for name in ("alpha", "beta", "gamma_cost"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"agent.reward.{name} must be finite and >= 0")


@dataclass
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_episodes: int = 500

    def value(self, episode: int) -> float:
        """Linear decay from start to end over decay_episodes, then flat."""
        if self.decay_episodes <= 0 or episode >= self.decay_episodes:
            return self.end
        frac = episode / self.decay_episodes
        return self.start + (self.end - self.start) * frac

    def validate(self) -> None:
        for name in ("start", "end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"agent.epsilon.{name} must lie in [0, 1]")
        if self.decay_episodes < 0:
            raise ConfigError("agent.epsilon.decay_episodes must be >= 0")


@dataclass
class BinBounds:
    """Bin counts for discretising the feature vector."""

    rho_bins: int = 10
    cpu_bins: int = 3
    mem_bins: int = 3
    drift_bins: int = 3
    drift_cap: float = 1.5

    def validate(self) -> None:
        for name in ("rho_bins", "cpu_bins", "mem_bins", "drift_bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"agent.bins.{name} must be >= 1")
        if self.drift_cap <= 0:
            raise ConfigError("agent.bins.drift_cap must be > 0")


@dataclass
class AgentConfig:
    learning_rate: float = 0.1
    discount: float = 0.95
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    buffer_capacity: int = 10_000
    batch_size: int = 32
    episodes: int = 5000
    reward: RewardCoefficients = field(default_factory=RewardCoefficients)
    bins: BinBounds = field(default_factory=BinBounds)

    def validate(self) -> None:
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError("agent.learning_rate must lie in (0, 1]")
        if not 0.0 <= self.discount < 1.0:
            raise ConfigError("agent.discount must lie in [0, 1)")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ConfigError("agent.batch_size must lie in [1, buffer_capacity]")
        if self.episodes < 0:
            raise ConfigError("agent.episodes must be >= 0")
        self.epsilon.validate()
        self.reward.validate()
        self.bins.validate()


# ---------------------------------------------------------------------------
# Healing orchestrator
# ---------------------------------------------------------------------------

@dataclass
class ApprovalPolicy:
    """How high-impact playbooks get approved when nobody is watching.

    Impact at or below the threshold auto-executes. Above it, the policy
    mode decides: always approve, always deny, or approve only when the
    estimated mitigation utility is positive. `literal_listing` flips the
    comparison so high impact auto-executes instead (compatibility mode for
    fidelity experiments; not a sane default).
    """

    impact_threshold: float = 1.0
    mode: str = "UTILITY_POSITIVE"     # ALWAYS_APPROVE | ALWAYS_DENY | UTILITY_POSITIVE
    literal_listing: bool = False

    def validate(self) -> None:
        if not (math.isfinite(self.impact_threshold) and self.impact_threshold >= 0):
            raise ConfigError("healing.impact_threshold must be finite and >= 0")
        if self.mode not in ("ALWAYS_APPROVE", "ALWAYS_DENY", "UTILITY_POSITIVE"):
            raise ConfigError(f"healing.mode '{self.mode}' is not a known policy mode")


@dataclass
class HealingConfig:
    policy: ApprovalPolicy = field(default_factory=ApprovalPolicy)
    security_benefit_scale: float = 10.0   # benefit = risk score * scale
    prior_success: float = 0.5             # used when no attack is known active
    # None disables the post-remediation health check; an attack may have
    # legitimately zeroed the target's health before it was cleared.
    verify_health_floor: float | None = None

    def validate(self) -> None:
        self.policy.validate()
        if self.security_benefit_scale < 0:
            raise ConfigError("healing.security_benefit_scale must be >= 0")
        if not 0.0 <= self.prior_success <= 1.0:
            raise ConfigError("healing.prior_success must lie in [0, 1]")
        if self.verify_health_floor is not None and not 0.0 <= self.verify_health_floor <= 1.0:
            raise ConfigError("healing.verify_health_floor must lie in [0, 1] or be null")


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

@dataclass
class IdsConfig:
    coverage: float = 0.9             # fraction of attack signatures with a rule
    rule_seed: int = 20210            # which 10% get dropped is seeded, not cherry-picked
    include_noisy_rules: bool = True  # overly-broad vendor rules (false-positive source)
    noisy_rule_floor: float = 0.55
    attack_rule_floor: float = 0.40
    rules_file: str | None = None     # load instead of generating when set

    def validate(self) -> None:
        if not 0.0 <= self.coverage <= 1.0:
            raise ConfigError("baselines.ids.coverage must lie in [0, 1]")


@dataclass
class TadmConfig:
    n_trees: int = 100
    subsample_size: int = 200
    theta_iforest: float = 0.60
    pca_components: int = 2
    warmup_steps: int = 200
    residual_percentile: float = 90.0

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ConfigError("baselines.tadm.n_trees must be >= 1")
        if self.subsample_size < 2:
            raise ConfigError("baselines.tadm.subsample_size must be >= 2")
        if not 0.0 < self.theta_iforest <= 1.0:
            raise ConfigError("baselines.tadm.theta_iforest must lie in (0, 1]")
        if self.pca_components < 1:
            raise ConfigError("baselines.tadm.pca_components must be >= 1")
        if self.warmup_steps < self.subsample_size:
            raise ConfigError(
                "baselines.tadm.warmup_steps must be >= subsample_size"
            )
        if not 0.0 < self.residual_percentile < 100.0:
            raise ConfigError("baselines.tadm.residual_percentile must lie in (0, 100)")


@dataclass
class BaselineConfig:
    ids: IdsConfig = field(default_factory=IdsConfig)
    tadm: TadmConfig = field(default_factory=TadmConfig)
    action_cooldown: int = 3          # steps between baseline remediation attempts

    def validate(self) -> None:
        self.ids.validate()
        self.tadm.validate()
        if self.action_cooldown < 0:
            raise ConfigError("baselines.action_cooldown must be >= 0")


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------

SYSTEM_AUTOGUARD = "AUTOGUARD"
SYSTEM_STATIC_IDS = "STATIC_IDS"
SYSTEM_TADM = "TADM"
ALL_SYSTEMS = (SYSTEM_AUTOGUARD, SYSTEM_STATIC_IDS, SYSTEM_TADM)

# Evaluation replays held-out attack sequences: the eval stream is the train
# seed shifted by a fixed offset so the two never overlap.
EVAL_SEED_OFFSET = 10_000


@dataclass
class ExperimentConfig:
    env: PipelineConfig = field(default_factory=PipelineConfig)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    healing: HealingConfig = field(default_factory=HealingConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    systems: tuple[str, ...] = ALL_SYSTEMS
    seeds: tuple[int, ...] = (101, 202, 303, 404, 505)
    eval_episodes: int = 20
    out_dir: str = "runs"
    observe_only: bool = False

    def validate(self) -> None:
        if not self.systems:
            raise ConfigError("experiment.systems must name at least one system")
        for s in self.systems:
            if s not in ALL_SYSTEMS:
                raise ConfigError(f"experiment.systems contains unknown system '{s}'")
        if not self.seeds:
            raise ConfigError("experiment.seeds must contain at least one seed")
        if self.eval_episodes < 1:
            raise ConfigError("experiment.eval_episodes must be >= 1")
        self.env.validate()
        self.monitor.validate()
        self.agent.validate()
        self.healing.validate()
        self.baselines.validate()


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------

def _merge(target: Any, doc: dict[str, Any], path: str) -> None:
    """Assign keys of `doc` onto dataclass `target`, recursing into nested
    dataclasses. Unknown keys raise so typos do not silently no-op."""
    for key, value in doc.items():
        if not hasattr(target, key):
            raise ConfigError(f"unknown config field '{path}{key}'")
        current = getattr(target, key)
        if isinstance(value, dict) and hasattr(current, "__dataclass_fields__"):
            _merge(current, value, f"{path}{key}.")
        else:
            setattr(target, key, _coerce(key, current, value, path))


def _coerce(key: str, current: Any, value: Any, path: str) -> Any:
    if key == "stage_sequence":
        try:
            return tuple(StageId[s] for s in value)
        except KeyError as exc:
            raise ConfigError(f"env.stage_sequence contains unknown stage {exc}") from None
    if key == "kinds":
        try:
            return tuple(AttackKind(k) for k in value)
        except ValueError as exc:
            raise ConfigError(f"env.attack.kinds: {exc}") from None
    if key == "schedule":
        out = []
        for i, item in enumerate(value):
            try:
                out.append(ScheduledAttack(
                    step=int(item["step"]),
                    kind=AttackKind(item["kind"]),
                    target=item.get("target"),
                    duration_cap=item.get("duration_cap"),
                ))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"env.attack.schedule[{i}]: {exc}") from None
        return out
    if key in ("systems", "seeds", "count_weights") or isinstance(current, tuple):
        return tuple(value) if isinstance(value, (list, tuple)) else value
    return value


def load_config(doc: dict[str, Any] | None = None) -> ExperimentConfig:
    """Build an ExperimentConfig from a (possibly partial) JSON document."""
    cfg = ExperimentConfig()
    if doc:
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        _merge(cfg, doc, "")
    cfg.validate()
    return cfg


def load_config_file(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return load_config(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """JSON-safe dump of the fully-resolved configuration."""
    raw = asdict(cfg)

    def clean(obj: Any) -> Any:
        if isinstance(obj, dict):
            return {
                (k.value if isinstance(k, AttackKind)
                 else k.name if isinstance(k, (StageId, ActionId))
                 else "|".join(p.value if isinstance(p, AttackKind) else p.name for p in k)
                 if isinstance(k, tuple) else k): clean(v)
                for k, v in obj.items()
            }
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, (StageId, ActionId)):
            return obj.name
        if isinstance(obj, AttackKind):
            return obj.value
        return obj

    return clean(raw)


def config_digest(cfg: ExperimentConfig) -> str:
    """Stable content hash of the resolved configuration."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def zero_day_differential_config(doc: dict[str, Any] | None = None) -> ExperimentConfig:
    """Preset for the zero-day differential: only zero-day attacks are
    scheduled and benign chatter never collides with a rule, so a rule hit
    can only come from a signature match."""
    cfg = load_config(doc)
    cfg.env.attack.kinds = (AttackKind.ZERO_DAY_VARIANT,)
    cfg.env.traffic.log_collision_prob = 0.0
    cfg.baselines.ids.include_noisy_rules = False
    cfg.validate()
    return cfg
