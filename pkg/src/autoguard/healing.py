"""Healing orchestrator: playbooks, impact estimates, approval, rollback.

Abstract remediation actions become parameterized playbooks here. Before
anything executes, the orchestrator attaches a justification, an impact
estimate, and a rollback path to the playbook; approval is decided by a
pluggable policy. Approved playbooks run against the environment, the
outcome is verified one step later (so effects are observable), failed
verifications roll back every state field the steps touched, and every
attempt lands in an append-only healing log.

The verified flag doubles as the mitigation-success signal the learning
agent is rewarded with.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .catalog import (
    ActionId,
    AttackKind,
    EffectEntry,
    PLAYBOOK_TEMPLATES,
    STEP_COSTS,
    StepKind,
)
from .config import ApprovalPolicy, HealingConfig
from .errors import UnrecoverableHealingError, UsageError
from .pipeline import PipelineEnv, EnvState, StepOutcome

APPROVAL_AUTO = "AUTO"
APPROVAL_POLICY_APPROVED = "POLICY_APPROVED"
APPROVAL_POLICY_DENIED = "POLICY_DENIED"


@dataclass(frozen=True)
class PlaybookParams:
    """Concrete targets a playbook template is instantiated with."""

    service: int
    incident: int | None = None        # active attack being countered, if any
    kind: AttackKind | None = None
    version_before: int | None = None


@dataclass(frozen=True)
class PlaybookStep:
    op: StepKind
    service: int
    cost: float

    def describe(self) -> str:
        name = self.op.value.lower().replace("_", " ")
        return f"{name} svc-{self.service}"


@dataclass(frozen=True)
class VerifyCheck:
    """Predicate descriptor evaluated against the post-execution state."""

    kind: str                          # "scenario_cleared" | "health_floor"
    service: int = 0
    incident: int | None = None
    floor: float = 0.0


@dataclass
class Playbook:
    action: ActionId
    params: PlaybookParams
    steps: tuple[PlaybookStep, ...]
    verify_checks: tuple[VerifyCheck, ...]
    rollback_steps: tuple[tuple, ...]   # field paths restored from the snapshot
    justification: str
    impact: "ImpactEstimate | None" = None


@dataclass(frozen=True)
class ImpactEstimate:
    """What executing a playbook is expected to do.

    p_succ: estimated success probability; b_sec: estimated security
    benefit; d_ops: operational disruption (sum of step costs). The
    approval flow gates on `impact`, which equals d_ops.
    """

    p_succ: float
    b_sec: float
    d_ops: float

    @property
    def impact(self) -> float:
        return self.d_ops


@dataclass(frozen=True)
class ApprovalDecision:
    status: str                        # AUTO | POLICY_APPROVED | POLICY_DENIED
    reason: str

    @property
    def approved(self) -> bool:
        return self.status != APPROVAL_POLICY_DENIED


@dataclass
class HealingRecord:
    """Audit entry for one attempted remediation."""

    step: int
    action: str
    params: dict
    approval: str
    executed: bool
    verified: bool
    rolled_back: bool
    utility: float
    justification: str
    episode: int = 0
    outcome: StepOutcome | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "episode": self.episode,
            "step": self.step,
            "action": self.action,
            "params": self.params,
            "approval": self.approval,
            "executed": self.executed,
            "verified": self.verified,
            "rolled_back": self.rolled_back,
            "utility": self.utility,
            "justification": self.justification,
        }


def map_action_to_playbook(
    action: ActionId, params: PlaybookParams, health_floor: float | None = None
) -> Playbook:
    """Instantiate the template for a non-trivial action.

    Total over the seven real actions; NO_OP has nothing to orchestrate and
    raises a usage error. The default verification asks exactly one thing:
    did the targeted scenario actually get cleared. A health-floor check is
    appended only when a floor is given (a long-running attack can
    legitimately drive the target's health to zero before anyone clears
    it, which says nothing about whether the clearing worked).
    """
    if action is ActionId.NO_OP:
        raise UsageError("NO_OP has no playbook; nothing to orchestrate")
    template = PLAYBOOK_TEMPLATES[action]
    steps = tuple(
        PlaybookStep(op=op, service=params.service, cost=STEP_COSTS[op])
        for op in template
    )
    checks: tuple[VerifyCheck, ...] = (
        VerifyCheck(kind="scenario_cleared", incident=params.incident),
    )
    if health_floor is not None:
        checks += (VerifyCheck(kind="health_floor", service=params.service,
                               floor=health_floor),)
    rollback = _rollback_paths(action, params)
    if params.kind is not None:
        why = (f"{action.name.lower()} on svc-{params.service}: counter active "
               f"{params.kind.value.lower()} (incident {params.incident})")
    else:
        why = (f"{action.name.lower()} on svc-{params.service}: no attack confirmed, "
               "acting on elevated risk")
    return Playbook(
        action=action,
        params=params,
        steps=steps,
        verify_checks=checks,
        rollback_steps=rollback,
        justification=why,
    )


def _rollback_paths(action: ActionId, params: PlaybookParams) -> tuple[tuple, ...]:
    paths: list[tuple] = []
    for op in PLAYBOOK_TEMPLATES[action]:
        if op is StepKind.QUARANTINE_NETWORK:
            paths.append(("network_quarantine", params.service))
        elif op is StepKind.SCALE_REPLICAS_TO_ZERO:
            paths.append(("replicas", params.service))
        elif op is StepKind.MARK_IMAGE_QUARANTINED:
            paths.append(("image_quarantined", params.service))
        elif op is StepKind.RESTART_SERVICE:
            paths.append(("service_generation", params.service))
        elif op is StepKind.VERSION_ROLLBACK:
            paths.append(("deployed_version",))
            paths.append(("dependency_drift",))
        elif op is StepKind.BLOCK_NETWORK:
            paths.append(("network_blocked",))
        elif op is StepKind.START_SCAN:
            paths.append(("scan_boost",))
    # restore in reverse step order
    return tuple(reversed(paths))


def simulate_impact(
    pb: Playbook,
    snapshot: EnvState,
    effect_table: dict[tuple[AttackKind, ActionId], EffectEntry],
    risk: float = 0.5,
    benefit_scale: float = 10.0,
    prior_success: float = 0.5,
) -> ImpactEstimate:
    """What-if estimate for a playbook; never mutates the live environment.

    Success probability comes from the effect table for the strongest
    scenario known active in the snapshot, or falls back to a flat prior
    when no attack is confirmed. The security benefit scales with the
    current risk score, and disruption is the sum of per-step costs.
    """
    kind = pb.params.kind
    if kind is not None and (kind, pb.action) in effect_table:
        p_succ = effect_table[(kind, pb.action)].success_prob
    else:
        p_succ = prior_success
    b_sec = risk * benefit_scale
    d_ops = sum(step.cost for step in pb.steps)
    return ImpactEstimate(p_succ=p_succ, b_sec=b_sec, d_ops=d_ops)


def mitigation_utility(est: ImpactEstimate) -> float:
    """Expected net benefit of a remediation: p_succ * b_sec - d_ops."""
    return est.p_succ * est.b_sec - est.d_ops


def approve(est: ImpactEstimate, policy: ApprovalPolicy) -> ApprovalDecision:
    """Gate a playbook on its estimated impact.

    Impact at or below the threshold auto-executes; above it the policy
    mode decides. `literal_listing` inverts the gate (high impact
    auto-executes) for compatibility experiments.
    """
    impact = est.impact
    low_impact = impact > policy.impact_threshold if policy.literal_listing \
        else impact <= policy.impact_threshold
    if low_impact:
        return ApprovalDecision(
            APPROVAL_AUTO,
            f"impact {impact:.3f} within threshold {policy.impact_threshold:.3f}",
        )
    if policy.mode == "ALWAYS_APPROVE":
        return ApprovalDecision(APPROVAL_POLICY_APPROVED, "policy approves all escalations")
    if policy.mode == "ALWAYS_DENY":
        return ApprovalDecision(APPROVAL_POLICY_DENIED, "policy denies all escalations")
    utility = mitigation_utility(est)
    if utility > 0:
        return ApprovalDecision(
            APPROVAL_POLICY_APPROVED, f"estimated mitigation utility {utility:.3f} > 0"
        )
    return ApprovalDecision(
        APPROVAL_POLICY_DENIED, f"estimated mitigation utility {utility:.3f} <= 0"
    )


def verify_outcome(pb: Playbook, env_state: EnvState) -> bool:
    """Conjunction of the playbook's checks over the post-execution state.

    An empty check tuple is vacuously true. A scenario_cleared check with
    no target incident fails: the playbook claimed to mitigate but there
    was nothing to mitigate, so the remediation is not confirmable.
    """
    for check in pb.verify_checks:
        if check.kind == "scenario_cleared":
            if check.incident is None:
                return False
            if any(a.incident == check.incident for a in env_state.active_attacks):
                return False
        elif check.kind == "health_floor":
            if env_state.health[check.service] < check.floor:
                return False
        else:
            raise UsageError(f"unknown verify check kind '{check.kind}'")
    return True


def resolve_params(env: PipelineEnv, service: int | None = None) -> PlaybookParams:
    """Fill in playbook targets from the live environment: the strongest
    active attack if any, otherwise the least healthy service."""
    focus = env.strongest_active()
    if service is None:
        service = focus.target if focus is not None else env.least_healthy_service()
    return PlaybookParams(
        service=service,
        incident=focus.incident if focus else None,
        kind=focus.kind if focus else None,
        version_before=env.state.deployed_version,
    )


def execute_healing(
    action: ActionId,
    params: PlaybookParams,
    env: PipelineEnv,
    policy: ApprovalPolicy,
    cfg: HealingConfig | None = None,
    risk: float = 0.5,
) -> HealingRecord:
    """Full orchestration flow for one action.

    map -> simulate -> approve -> (if approved) execute via env.step ->
    verify -> (if verification fails) roll back the touched fields. A
    denied action leaves the environment bit-identical; the caller owns
    advancing time with a NO_OP in that case. Rollback failure aborts
    loudly: the environment can no longer be trusted.
    """
    cfg = cfg or HealingConfig()
    pb = map_action_to_playbook(action, params, health_floor=cfg.verify_health_floor)
    est = simulate_impact(
        pb, env.state, env.config.effect_table,
        risk=risk,
        benefit_scale=cfg.security_benefit_scale,
        prior_success=cfg.prior_success,
    )
    pb.impact = est
    utility = mitigation_utility(est)
    decision = approve(est, policy)
    record = HealingRecord(
        step=env.state.step + 1,
        action=action.name,
        params={"service": params.service, "incident": params.incident,
                "kind": params.kind.value if params.kind else None},
        approval=decision.status,
        executed=False,
        verified=False,
        rolled_back=False,
        utility=utility,
        justification=f"{pb.justification}; {decision.reason}",
    )
    if not decision.approved:
        return record

    snapshot = env.snapshot_fields(pb.rollback_steps)
    try:
        outcome = env.step(action, target_service=params.service)
    except UsageError:
        raise
    except Exception:
        # Execution died midway: attempt the rollback path, then re-raise.
        record.executed = True
        _run_rollback(env, snapshot, record)
        raise
    record.executed = True
    record.outcome = outcome
    record.step = outcome.state.step
    record.verified = verify_outcome(pb, env.state)
    if not record.verified:
        _run_rollback(env, snapshot, record)
    return record


def _run_rollback(env: PipelineEnv, snapshot: dict, record: HealingRecord) -> None:
    try:
        env.restore_fields(snapshot)
    except Exception as exc:
        record.justification += "; UNRECOVERABLE: rollback failed"
        raise UnrecoverableHealingError(
            f"rollback failed at step {record.step} for {record.action}: {exc}"
        ) from exc
    record.rolled_back = True


class HealingOrchestrator:
    """Stateful wrapper tying the flow to one run's healing log."""

    def __init__(self, policy: ApprovalPolicy, cfg: HealingConfig | None = None):
        self.policy = policy
        self.cfg = cfg or HealingConfig()
        self.log: list[HealingRecord] = []

    def execute(
        self,
        action: ActionId,
        env: PipelineEnv,
        risk: float,
        service: int | None = None,
    ) -> HealingRecord:
        params = resolve_params(env, service)
        record = execute_healing(action, params, env, self.policy, self.cfg, risk=risk)
        self.log.append(record)
        return record

    def log_lines(self) -> list[str]:
        return [json.dumps(r.to_json(), sort_keys=True) for r in self.log]
