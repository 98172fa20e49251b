"""Domain catalog for the simulated DevSecOps pipeline.

Everything that defines the *vocabulary* of the simulation lives here:
pipeline stages, remediation actions, attack scenario kinds and their
behaviour profiles, the signature-id space shared by attacks / benign
noise / detection rules, the per-action playbook step templates, and the
hidden (scenario, action) effect table that remediation outcomes are
rolled against.

The effect table is the part the learning agent has to discover through
interaction; nothing outside the environment reads success probabilities
at decision time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class StageId(enum.IntEnum):
    """Pipeline stage the simulation is in at a given step."""

    COMMIT = 0
    BUILD = 1
    TEST = 2
    SCAN = 3
    DEPLOY = 4
    OPERATE = 5


class ActionId(enum.IntEnum):
    """Remediation actions available to every decision-making system.

    Ordinal order doubles as the deterministic tie-break order for greedy
    action selection, so NO_OP must stay at 0.
    """

    NO_OP = 0
    ISOLATE_CONTAINER = 1
    ROLLBACK_DEPLOYMENT = 2
    QUARANTINE_IMAGE = 3
    SCALE_DOWN_REPLICAS = 4
    RESTART_SERVICE = 5
    BLOCK_NETWORK_POLICY = 6
    TRIGGER_SCAN = 7


class AttackKind(enum.Enum):
    DEPENDENCY_POISONING = "DEPENDENCY_POISONING"
    CONTAINER_ESCAPE = "CONTAINER_ESCAPE"
    CREDENTIAL_EXFILTRATION = "CREDENTIAL_EXFILTRATION"
    CRYPTOMINER = "CRYPTOMINER"
    CONFIG_TAMPERING = "CONFIG_TAMPERING"
    ZERO_DAY_VARIANT = "ZERO_DAY_VARIANT"


class EventSource(enum.Enum):
    LOG = "LOG"
    METRIC = "METRIC"
    SCANNER = "SCANNER"
    NETWORK = "NETWORK"


DEFAULT_STAGE_SEQUENCE = (
    StageId.COMMIT,
    StageId.BUILD,
    StageId.TEST,
    StageId.SCAN,
    StageId.DEPLOY,
    StageId.OPERATE,
)


# ---------------------------------------------------------------------------
# Signature-id space
# ---------------------------------------------------------------------------
# Attack signatures sit in per-kind blocks. The zero-day block is reserved:
# no rule set shipped by this package may contain a signature from it, which
# is what makes the zero-day differential meaningful.

def _sig_block(base: int, count: int) -> tuple[str, ...]:
    return tuple(f"SIG-{base + i:04d}" for i in range(count))


SIGNATURES_BY_KIND: dict[AttackKind, tuple[str, ...]] = {
    AttackKind.DEPENDENCY_POISONING: _sig_block(1000, 10),
    AttackKind.CONTAINER_ESCAPE: _sig_block(1100, 10),
    AttackKind.CREDENTIAL_EXFILTRATION: _sig_block(1200, 10),
    AttackKind.CRYPTOMINER: _sig_block(1300, 10),
    AttackKind.CONFIG_TAMPERING: _sig_block(1400, 10),
    AttackKind.ZERO_DAY_VARIANT: _sig_block(9000, 20),
}

ZERO_DAY_RESERVED_SIGNATURES = frozenset(
    SIGNATURES_BY_KIND[AttackKind.ZERO_DAY_VARIANT]
)

# Signatures that only ever appear on benign traffic. The first block is
# harmless chatter (build warnings, flaky-test markers); the second block is
# chatter that noisy vendor rules also match, which is where the rule-based
# IDS gets its false positives from.
BENIGN_NOISE_SIGNATURES = _sig_block(100, 30)
RULE_COLLISION_SIGNATURES = _sig_block(200, 8)

METRIC_CPU = "metric.cpu"
METRIC_MEM = "metric.mem"


# ---------------------------------------------------------------------------
# Scenario behaviour profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioProfile:
    """How an active attack of one kind behaves per step.

    damage:       health drained from the target service per active step
    cpu_load:     added to the cpu reading while active
    mem_load:     added to the memory reading while active
    drift_rate:   dependency drift accumulated per active step
    duration_cap: steps after which the attack burns out on its own
    log_rate:     Poisson rate of signatured log events per step
    scanner_prob: chance per step of a scanner finding (high magnitude)
    network_prob: chance per step of a signatured network event
    severity:     ordering key; the orchestrator targets the most severe
    """

    damage: float
    cpu_load: float
    mem_load: float
    drift_rate: float
    duration_cap: int
    log_rate: float
    scanner_prob: float
    network_prob: float
    severity: int


SCENARIO_PROFILES: dict[AttackKind, ScenarioProfile] = {
    AttackKind.DEPENDENCY_POISONING: ScenarioProfile(
        damage=0.12, cpu_load=0.10, mem_load=0.16, drift_rate=0.35,
        duration_cap=26, log_rate=2.2, scanner_prob=0.75, network_prob=0.10,
        severity=3,
    ),
    AttackKind.CONTAINER_ESCAPE: ScenarioProfile(
        damage=0.15, cpu_load=0.20, mem_load=0.10, drift_rate=0.0,
        duration_cap=22, log_rate=2.4, scanner_prob=0.65, network_prob=0.30,
        severity=5,
    ),
    AttackKind.CREDENTIAL_EXFILTRATION: ScenarioProfile(
        damage=0.12, cpu_load=0.08, mem_load=0.05, drift_rate=0.0,
        duration_cap=24, log_rate=2.1, scanner_prob=0.55, network_prob=0.70,
        severity=4,
    ),
    AttackKind.CRYPTOMINER: ScenarioProfile(
        damage=0.15, cpu_load=0.55, mem_load=0.12, drift_rate=0.0,
        duration_cap=28, log_rate=1.9, scanner_prob=0.60, network_prob=0.20,
        severity=2,
    ),
    AttackKind.CONFIG_TAMPERING: ScenarioProfile(
        damage=0.15, cpu_load=0.05, mem_load=0.05, drift_rate=0.15,
        duration_cap=24, log_rate=2.3, scanner_prob=0.65, network_prob=0.10,
        severity=3,
    ),
    AttackKind.ZERO_DAY_VARIANT: ScenarioProfile(
        damage=0.18, cpu_load=0.25, mem_load=0.20, drift_rate=0.10,
        duration_cap=30, log_rate=2.3, scanner_prob=0.65, network_prob=0.30,
        severity=6,
    ),
}

ATTACK_LOG_MAGNITUDE = (0.6, 1.5)
ATTACK_SCANNER_MAGNITUDE = (1.2, 2.6)
ATTACK_NETWORK_MAGNITUDE = (0.8, 1.8)


# ---------------------------------------------------------------------------
# Playbook step templates
# ---------------------------------------------------------------------------

class StepKind(enum.Enum):
    """Mechanical operations a playbook step performs on the environment."""

    QUARANTINE_NETWORK = "QUARANTINE_NETWORK"    # per-service network policy
    SCALE_REPLICAS_TO_ZERO = "SCALE_REPLICAS_TO_ZERO"
    MARK_IMAGE_QUARANTINED = "MARK_IMAGE_QUARANTINED"
    RESTART_SERVICE = "RESTART_SERVICE"          # bumps the service generation
    VERSION_ROLLBACK = "VERSION_ROLLBACK"        # previous deploy counter, drift reset
    BLOCK_NETWORK = "BLOCK_NETWORK"              # cluster-wide egress block
    START_SCAN = "START_SCAN"                    # boosts scanner coverage briefly


# Operational disruption charged per step kind; a playbook's d_ops is the sum
# over its steps.
STEP_COSTS: dict[StepKind, float] = {
    StepKind.QUARANTINE_NETWORK: 0.40,
    StepKind.SCALE_REPLICAS_TO_ZERO: 0.60,
    StepKind.MARK_IMAGE_QUARANTINED: 0.15,
    StepKind.RESTART_SERVICE: 0.70,
    StepKind.VERSION_ROLLBACK: 0.90,
    StepKind.BLOCK_NETWORK: 0.85,
    StepKind.START_SCAN: 0.50,
}

# Step sequences per action. NO_OP deliberately has no template: there is
# nothing to orchestrate, and asking for one is a usage error.
PLAYBOOK_TEMPLATES: dict[ActionId, tuple[StepKind, ...]] = {
    ActionId.ISOLATE_CONTAINER: (
        StepKind.QUARANTINE_NETWORK,
        StepKind.SCALE_REPLICAS_TO_ZERO,
        StepKind.MARK_IMAGE_QUARANTINED,
    ),
    ActionId.ROLLBACK_DEPLOYMENT: (StepKind.VERSION_ROLLBACK,),
    ActionId.QUARANTINE_IMAGE: (StepKind.MARK_IMAGE_QUARANTINED,),
    ActionId.SCALE_DOWN_REPLICAS: (StepKind.SCALE_REPLICAS_TO_ZERO,),
    ActionId.RESTART_SERVICE: (StepKind.RESTART_SERVICE,),
    ActionId.BLOCK_NETWORK_POLICY: (StepKind.BLOCK_NETWORK,),
    ActionId.TRIGGER_SCAN: (StepKind.START_SCAN,),
}


def action_step_cost(action: ActionId) -> float:
    """Sum of the per-step disruption costs of an action's template."""
    if action is ActionId.NO_OP:
        return 0.0
    return sum(STEP_COSTS[s] for s in PLAYBOOK_TEMPLATES[action])


# One-shot health hit on the target service when the action executes
# (restarts drop requests, scaling to zero sheds load, etc.).
ACTION_UPTIME_PENALTY: dict[ActionId, float] = {
    ActionId.NO_OP: 0.0,
    ActionId.ISOLATE_CONTAINER: 0.25,
    ActionId.ROLLBACK_DEPLOYMENT: 0.20,
    ActionId.QUARANTINE_IMAGE: 0.05,
    ActionId.SCALE_DOWN_REPLICAS: 0.30,
    ActionId.RESTART_SERVICE: 0.30,
    ActionId.BLOCK_NETWORK_POLICY: 0.10,
    ActionId.TRIGGER_SCAN: 0.02,
}


# ---------------------------------------------------------------------------
# Effect table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EffectEntry:
    """Outcome model for applying one action against one scenario kind."""

    success_prob: float
    disruption_cost: float
    uptime_penalty: float


def _effects(kind: AttackKind, probs: dict[ActionId, float]) -> dict[tuple[AttackKind, ActionId], EffectEntry]:
    out = {}
    for action in ActionId:
        if action is ActionId.NO_OP:
            continue
        out[(kind, action)] = EffectEntry(
            success_prob=probs.get(action, 0.05),
            disruption_cost=action_step_cost(action),
            uptime_penalty=ACTION_UPTIME_PENALTY[action],
        )
    return out


def default_effect_table() -> dict[tuple[AttackKind, ActionId], EffectEntry]:
    """Hidden remediation dynamics: per (scenario, action) success odds.

    Each kind has one clearly-best counter so there is a policy worth
    learning; the rest range from mediocre to useless.
    """
    table: dict[tuple[AttackKind, ActionId], EffectEntry] = {}
    table.update(_effects(AttackKind.DEPENDENCY_POISONING, {
        ActionId.ROLLBACK_DEPLOYMENT: 0.92,
        ActionId.QUARANTINE_IMAGE: 0.50,
        ActionId.TRIGGER_SCAN: 0.30,
        ActionId.ISOLATE_CONTAINER: 0.20,
        ActionId.SCALE_DOWN_REPLICAS: 0.20,
        ActionId.RESTART_SERVICE: 0.12,
        ActionId.BLOCK_NETWORK_POLICY: 0.10,
    }))
    table.update(_effects(AttackKind.CONTAINER_ESCAPE, {
        ActionId.ISOLATE_CONTAINER: 0.90,
        ActionId.QUARANTINE_IMAGE: 0.55,
        ActionId.SCALE_DOWN_REPLICAS: 0.45,
        ActionId.BLOCK_NETWORK_POLICY: 0.35,
        ActionId.RESTART_SERVICE: 0.25,
        ActionId.ROLLBACK_DEPLOYMENT: 0.18,
    }))
    table.update(_effects(AttackKind.CREDENTIAL_EXFILTRATION, {
        ActionId.BLOCK_NETWORK_POLICY: 0.90,
        ActionId.ISOLATE_CONTAINER: 0.35,
        ActionId.SCALE_DOWN_REPLICAS: 0.30,
        ActionId.QUARANTINE_IMAGE: 0.22,
        ActionId.ROLLBACK_DEPLOYMENT: 0.15,
        ActionId.RESTART_SERVICE: 0.12,
        ActionId.TRIGGER_SCAN: 0.08,
    }))
    table.update(_effects(AttackKind.CRYPTOMINER, {
        ActionId.QUARANTINE_IMAGE: 0.88,
        ActionId.ISOLATE_CONTAINER: 0.35,
        ActionId.SCALE_DOWN_REPLICAS: 0.45,
        ActionId.RESTART_SERVICE: 0.35,
        ActionId.BLOCK_NETWORK_POLICY: 0.25,
        ActionId.ROLLBACK_DEPLOYMENT: 0.20,
        ActionId.TRIGGER_SCAN: 0.10,
    }))
    table.update(_effects(AttackKind.CONFIG_TAMPERING, {
        ActionId.RESTART_SERVICE: 0.88,
        ActionId.ROLLBACK_DEPLOYMENT: 0.60,
        ActionId.TRIGGER_SCAN: 0.30,
        ActionId.QUARANTINE_IMAGE: 0.25,
        ActionId.ISOLATE_CONTAINER: 0.15,
        ActionId.SCALE_DOWN_REPLICAS: 0.15,
        ActionId.BLOCK_NETWORK_POLICY: 0.10,
    }))
    table.update(_effects(AttackKind.ZERO_DAY_VARIANT, {
        ActionId.ISOLATE_CONTAINER: 0.65,
        ActionId.BLOCK_NETWORK_POLICY: 0.50,
        ActionId.QUARANTINE_IMAGE: 0.40,
        ActionId.SCALE_DOWN_REPLICAS: 0.35,
        ActionId.RESTART_SERVICE: 0.30,
        ActionId.ROLLBACK_DEPLOYMENT: 0.25,
    }))
    return table
