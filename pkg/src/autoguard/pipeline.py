"""Deterministic discrete-time simulation of a CI/CD pipeline under attack.

The environment is an episodic decision process with reset/step semantics.
One step is one second-equivalent of pipeline time, so recovery times read
directly as seconds. All randomness flows from the configured seed through
four independent substreams:

  benign   - background traffic (identical across systems for a given seed,
             regardless of what actions are taken)
  attack   - attack telemetry emission
  action   - remediation success rolls
  noise    - cpu/mem jitter
  schedule - per-episode attack schedules in rate mode

Actions are applied through playbook step operations (the same mechanical
mutations the healing orchestrator describes, snapshots, and rolls back);
whether an action actually clears an active attack is a Bernoulli roll
against the hidden effect table. Attacks that are never cleared burn out at
their duration cap.

Ground truth (which events and windows are malicious) is tracked for the
scoring harness only; decision-time consumers see just step, source,
signature and magnitude.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .catalog import (
    ACTION_UPTIME_PENALTY,
    ATTACK_LOG_MAGNITUDE,
    ATTACK_NETWORK_MAGNITUDE,
    ATTACK_SCANNER_MAGNITUDE,
    BENIGN_NOISE_SIGNATURES,
    METRIC_CPU,
    METRIC_MEM,
    PLAYBOOK_TEMPLATES,
    RULE_COLLISION_SIGNATURES,
    SCENARIO_PROFILES,
    SIGNATURES_BY_KIND,
    ActionId,
    AttackKind,
    EffectEntry,
    EventSource,
    StageId,
    StepKind,
    action_step_cost,
)
from .config import PipelineConfig, ScheduledAttack
from .errors import ConfigError, UsageError

LABEL_BENIGN = "BENIGN"
LABEL_MALICIOUS = "MALICIOUS"

# Extra scanner coverage granted per active attack while a triggered scan
# is running.
SCAN_BOOST_STEPS = 2
SCAN_BOOST_PROB = 0.40


@dataclass(frozen=True)
class TelemetryEvent:
    """One observable pipeline event.

    The truth_* fields are the hidden ground-truth label; they are written
    to the sidecar file, never to the public event log, and no detector or
    agent reads them.
    """

    step: int
    source: EventSource
    signature_id: str | None
    magnitude: float
    truth_label: str = LABEL_BENIGN
    truth_kind: AttackKind | None = None
    truth_incident: int | None = None
    background: bool = True            # drawn from the benign substream

    def public_fields(self) -> dict:
        return {
            "step": self.step,
            "source": self.source.value,
            "signature_id": self.signature_id,
            "magnitude": self.magnitude,
        }

    def truth_fields(self) -> dict:
        if self.truth_label == LABEL_BENIGN:
            return {"label": LABEL_BENIGN}
        return {
            "label": self.truth_label,
            "kind": self.truth_kind.value,
            "incident": self.truth_incident,
        }


@dataclass
class ActiveAttack:
    incident: int
    kind: AttackKind
    target: int
    onset: int
    duration_cap: int


@dataclass
class EnvState:
    """Full simulator state; uptime is always the mean of service health."""

    step: int
    stage: StageId
    health: list[float]
    cpu: float
    mem: float
    dependency_drift: float
    deployed_version: int
    active_attacks: list[ActiveAttack]
    # per-service remediation bookkeeping
    network_quarantine: list[bool]
    replicas: list[int]
    image_quarantined: list[bool]
    service_generation: list[int]
    network_blocked: bool = False
    scan_boost: int = 0

    @property
    def uptime(self) -> float:
        return sum(self.health) / len(self.health)

    def copy(self) -> "EnvState":
        return EnvState(
            step=self.step,
            stage=self.stage,
            health=list(self.health),
            cpu=self.cpu,
            mem=self.mem,
            dependency_drift=self.dependency_drift,
            deployed_version=self.deployed_version,
            active_attacks=[ActiveAttack(a.incident, a.kind, a.target, a.onset, a.duration_cap)
                            for a in self.active_attacks],
            network_quarantine=list(self.network_quarantine),
            replicas=list(self.replicas),
            image_quarantined=list(self.image_quarantined),
            service_generation=list(self.service_generation),
            network_blocked=self.network_blocked,
            scan_boost=self.scan_boost,
        )

    def canonical(self) -> tuple:
        """Hashable snapshot for bit-identity checks."""
        return (
            self.step,
            self.stage,
            tuple(self.health),
            self.cpu,
            self.mem,
            self.dependency_drift,
            self.deployed_version,
            tuple((a.incident, a.kind.value, a.target, a.onset, a.duration_cap)
                  for a in self.active_attacks),
            tuple(self.network_quarantine),
            tuple(self.replicas),
            tuple(self.image_quarantined),
            tuple(self.service_generation),
            self.network_blocked,
            self.scan_boost,
        )


@dataclass(frozen=True)
class WindowLabel:
    """Ground truth for one decision window."""

    episode: int
    step: int
    malicious: bool
    incidents: tuple[int, ...] = ()
    kinds: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "episode": self.episode,
            "step": self.step,
            "label": LABEL_MALICIOUS if self.malicious else LABEL_BENIGN,
            "incidents": list(self.incidents),
            "kinds": list(self.kinds),
        }

    @staticmethod
    def from_json(doc: dict) -> "WindowLabel":
        return WindowLabel(
            episode=doc["episode"],
            step=doc["step"],
            malicious=doc["label"] == LABEL_MALICIOUS,
            incidents=tuple(doc.get("incidents", ())),
            kinds=tuple(doc.get("kinds", ())),
        )


@dataclass(frozen=True)
class IncidentRecord:
    """One scheduled attack occurrence, for recovery-time scoring."""

    incident: int
    episode: int
    kind: str
    target: int
    onset: int
    duration_cap: int

    def to_json(self) -> dict:
        return {
            "incident": self.incident,
            "episode": self.episode,
            "kind": self.kind,
            "target": self.target,
            "onset": self.onset,
            "duration_cap": self.duration_cap,
        }


@dataclass
class StepOutcome:
    state: EnvState
    events: list[TelemetryEvent]
    done: bool
    uptime_before: float
    uptime_after: float
    action: ActionId
    action_executed: bool
    action_succeeded: bool
    disruption_cost: float
    cleared_incidents: tuple[int, ...]
    target_service: int | None


def _scenario_signatures(kind: AttackKind) -> tuple[str, ...]:
    return SIGNATURES_BY_KIND[kind]


class PipelineEnv:
    """Seedable pipeline simulator with reset/step semantics.

    A fresh `reset(episode=k)` rebuilds all substreams from
    (rng_seed, episode), so any (config, seed, episode) triple replays
    bit-identically.
    """

    def __init__(self, config: PipelineConfig, incident_base: int = 0):
        config.validate()
        self.config = config
        self._incident_counter = incident_base
        self.state: EnvState | None = None
        self.done = True
        self.window_labels: list[WindowLabel] = []
        self.incidents: list[IncidentRecord] = []
        self._episode = 0
        self._pending: list[ScheduledAttack] = []

    # -- lifecycle ---------------------------------------------------------

    def reset(self, episode: int = 0) -> tuple[EnvState, list[TelemetryEvent]]:
        """Start an episode; returns the initial state and the step-0 batch."""
        cfg = self.config
        root = np.random.SeedSequence(entropy=(int(cfg.rng_seed) & (2**64 - 1), episode))
        benign_ss, attack_ss, action_ss, noise_ss, sched_ss = root.spawn(5)
        self._rng_benign = np.random.Generator(np.random.PCG64(benign_ss))
        self._rng_attack = np.random.Generator(np.random.PCG64(attack_ss))
        self._rng_action = np.random.Generator(np.random.PCG64(action_ss))
        self._rng_noise = np.random.Generator(np.random.PCG64(noise_ss))
        self._rng_sched = np.random.Generator(np.random.PCG64(sched_ss))

        self._episode = episode
        self._pending = self._build_schedule()
        self.window_labels = []
        self.incidents = []
        self.done = False

        # Fixed-shape draws for the whole episode, one vectorised call each:
        # keeps benign traffic and metric jitter independent of the actions
        # taken and trims per-step generator overhead.
        horizon = cfg.episode_length + 1
        self._benign_counts = self._rng_benign.poisson(cfg.traffic.log_rate, horizon)
        self._benign_rolls = self._rng_benign.random((horizon, 2))
        self._noise = self._rng_noise.standard_normal((horizon, 2))

        n = cfg.num_services
        self.state = EnvState(
            step=0,
            stage=cfg.stage_sequence[0],
            health=[1.0] * n,
            cpu=cfg.cpu_base,
            mem=cfg.mem_base,
            dependency_drift=0.0,
            deployed_version=1,
            active_attacks=[],
            network_quarantine=[False] * n,
            replicas=[1] * n,
            image_quarantined=[False] * n,
            service_generation=[0] * n,
        )
        events = self._emit_background(0)
        events.extend(self._emit_metrics(0))
        return self.state, events

    def _build_schedule(self) -> list[ScheduledAttack]:
        cfg = self.config
        plan = cfg.attack
        if plan.mode == "explicit":
            sched = list(plan.schedule)
        else:
            count = int(self._rng_sched.choice(
                len(plan.count_weights), p=np.asarray(plan.count_weights)
            ))
            onsets: list[int] = []
            attempts = 0
            while len(onsets) < count and attempts < 64:
                onset = int(self._rng_sched.integers(plan.min_onset, plan.max_onset + 1))
                if all(abs(onset - o) >= plan.min_gap for o in onsets):
                    onsets.append(onset)
                attempts += 1
            sched = []
            for onset in sorted(onsets):
                kind = plan.kinds[int(self._rng_sched.integers(0, len(plan.kinds)))]
                sched.append(ScheduledAttack(step=onset, kind=kind))
        resolved = []
        for item in sched:
            target = item.target
            if target is None:
                target = int(self._rng_sched.integers(0, cfg.num_services))
            cap = item.duration_cap
            if cap is None:
                cap = SCENARIO_PROFILES[item.kind].duration_cap
            resolved.append(ScheduledAttack(item.step, item.kind, target, cap))
        return sorted(resolved, key=lambda s: s.step)

    # -- playbook mechanics --------------------------------------------------

    def read_field(self, path: tuple):
        value = getattr(self.state, path[0])
        return value[path[1]] if len(path) == 2 else value

    def write_field(self, path: tuple, value) -> None:
        if len(path) == 2:
            getattr(self.state, path[0])[path[1]] = value
        else:
            setattr(self.state, path[0], value)

    def snapshot_fields(self, paths: Iterable[tuple]) -> dict[tuple, object]:
        return {tuple(p): self.read_field(p) for p in paths}

    def restore_fields(self, snapshot: dict[tuple, object]) -> None:
        for path, value in snapshot.items():
            self.write_field(path, value)

    def _apply_playbook_mutations(self, action: ActionId, service: int) -> None:
        state = self.state
        if not 0 <= service < self.config.num_services:
            raise UsageError(f"playbook target service {service} does not exist")
        for step_kind in PLAYBOOK_TEMPLATES.get(action, ()):
            if step_kind is StepKind.QUARANTINE_NETWORK:
                state.network_quarantine[service] = True
            elif step_kind is StepKind.SCALE_REPLICAS_TO_ZERO:
                state.replicas[service] = 0
            elif step_kind is StepKind.MARK_IMAGE_QUARANTINED:
                state.image_quarantined[service] = True
            elif step_kind is StepKind.RESTART_SERVICE:
                state.service_generation[service] += 1
            elif step_kind is StepKind.VERSION_ROLLBACK:
                state.deployed_version = max(1, state.deployed_version - 1)
                state.dependency_drift = 0.0
            elif step_kind is StepKind.BLOCK_NETWORK:
                state.network_blocked = True
            elif step_kind is StepKind.START_SCAN:
                state.scan_boost = SCAN_BOOST_STEPS

    def strongest_active(self) -> ActiveAttack | None:
        if not self.state or not self.state.active_attacks:
            return None
        return max(
            self.state.active_attacks,
            key=lambda a: (SCENARIO_PROFILES[a.kind].severity, -a.onset),
        )

    def least_healthy_service(self) -> int:
        health = self.state.health
        return min(range(len(health)), key=lambda i: (health[i], i))

    # -- stepping ------------------------------------------------------------

    def step(self, action: ActionId, target_service: int | None = None) -> StepOutcome:
        """Advance one step: apply the action, evolve attacks, emit telemetry.

        The action's playbook mutations always apply when the action is not
        NO_OP; whether it clears the strongest active attack is a seeded
        Bernoulli roll against the effect table.
        """
        if self.done or self.state is None:
            raise UsageError("step() called after the episode finished; call reset()")
        cfg = self.config
        state = self.state
        uptime_before = state.uptime
        new_step = state.step + 1
        attacked_entering = {a.target for a in state.active_attacks}

        # Action phase.
        executed = False
        succeeded = False
        cost = 0.0
        cleared: list[int] = []
        target = None
        if action is not ActionId.NO_OP:
            target = target_service if target_service is not None else self.least_healthy_service()
            self._apply_playbook_mutations(action, target)
            executed = True
            focus = self.strongest_active()
            if focus is not None:
                entry = cfg.effect_table.get((focus.kind, action))
                if entry is None:
                    entry = EffectEntry(0.05, action_step_cost(action),
                                        ACTION_UPTIME_PENALTY[action])
                cost = entry.disruption_cost
                penalty = entry.uptime_penalty
                if self._rng_action.random() < entry.success_prob:
                    succeeded = True
                    cleared.append(focus.incident)
                    state.active_attacks = [
                        a for a in state.active_attacks if a.incident != focus.incident
                    ]
            else:
                cost = action_step_cost(action)
                penalty = ACTION_UPTIME_PENALTY[action]
            state.health[target] = max(cfg.health_floor, state.health[target] - penalty)

        # Burn-out phase: attacks at their duration cap end on their own.
        expired = [a for a in state.active_attacks if new_step - a.onset >= a.duration_cap]
        if expired:
            state.active_attacks = [a for a in state.active_attacks if a not in expired]

        # Scheduled onsets for this window.
        while self._pending and self._pending[0].step <= new_step:
            sched = self._pending.pop(0)
            incident = self._incident_counter
            self._incident_counter += 1
            attack = ActiveAttack(
                incident=incident,
                kind=sched.kind,
                target=sched.target,
                onset=new_step,
                duration_cap=sched.duration_cap,
            )
            state.active_attacks.append(attack)
            self.incidents.append(IncidentRecord(
                incident=incident,
                episode=self._episode,
                kind=sched.kind.value,
                target=sched.target,
                onset=new_step,
                duration_cap=sched.duration_cap,
            ))

        # Remediation flags relax one step after the service stops being
        # attacked (the service redeploys); keeping them through the clearing
        # step lets verification observe what the playbook set.
        protected = attacked_entering | {a.target for a in state.active_attacks}
        for svc in range(cfg.num_services):
            if svc not in protected:
                state.network_quarantine[svc] = False
                state.replicas[svc] = 1
                state.image_quarantined[svc] = False
        if not attacked_entering and not state.active_attacks:
            state.network_blocked = False
        if state.scan_boost > 0:
            state.scan_boost -= 1

        # Dynamics: drain attacked services, heal the rest, refresh metrics.
        attacked_now = {a.target for a in state.active_attacks}
        for attack in state.active_attacks:
            profile = SCENARIO_PROFILES[attack.kind]
            state.health[attack.target] = max(
                cfg.health_floor, state.health[attack.target] - profile.damage
            )
        for svc in range(cfg.num_services):
            if svc not in attacked_now:
                state.health[svc] = min(1.0, state.health[svc] + cfg.recovery_rate)

        noise_cpu, noise_mem = self._noise[new_step - 1]
        cpu = cfg.cpu_base + cfg.metric_noise * float(noise_cpu)
        mem = cfg.mem_base + cfg.metric_noise * float(noise_mem)
        drift = state.dependency_drift * cfg.drift_decay
        if drift < 1e-9:
            drift = 0.0
        for attack in state.active_attacks:
            profile = SCENARIO_PROFILES[attack.kind]
            cpu += profile.cpu_load
            mem += profile.mem_load
            drift += profile.drift_rate
        state.cpu = float(min(1.0, max(0.0, cpu)))
        state.mem = float(min(1.0, max(0.0, mem)))
        state.dependency_drift = drift

        # Telemetry for this window.
        events = self._emit_background(new_step)
        events.extend(self._emit_metrics(new_step))
        onset_incidents = {a.incident for a in state.active_attacks if a.onset == new_step}
        for attack in state.active_attacks:
            events.extend(self._emit_attack(new_step, attack, attack.incident in onset_incidents))

        # Window label reflects what was active while telemetry was produced.
        self.window_labels.append(WindowLabel(
            episode=self._episode,
            step=new_step,
            malicious=bool(state.active_attacks),
            incidents=tuple(sorted(a.incident for a in state.active_attacks)),
            kinds=tuple(a.kind.value for a in sorted(state.active_attacks, key=lambda x: x.incident)),
        ))

        state.step = new_step
        state.stage = cfg.stage_sequence[new_step % len(cfg.stage_sequence)]
        if state.stage is StageId.DEPLOY:
            state.deployed_version += 1
        done = new_step == cfg.episode_length
        self.done = done
        return StepOutcome(
            state=state,
            events=events,
            done=done,
            uptime_before=uptime_before,
            uptime_after=state.uptime,
            action=action,
            action_executed=executed,
            action_succeeded=succeeded,
            disruption_cost=cost,
            cleared_incidents=tuple(cleared),
            target_service=target,
        )

    # -- telemetry -----------------------------------------------------------

    def _emit_background(self, step: int) -> list[TelemetryEvent]:
        cfg = self.config.traffic
        rng = self._rng_benign
        events: list[TelemetryEvent] = []
        for _ in range(int(self._benign_counts[step])):
            u = rng.random()
            if u < cfg.log_collision_prob:
                sig = RULE_COLLISION_SIGNATURES[int(rng.integers(0, len(RULE_COLLISION_SIGNATURES)))]
                mag = float(rng.uniform(*cfg.collision_magnitude))
            elif u < cfg.log_collision_prob + cfg.log_signature_prob:
                sig = BENIGN_NOISE_SIGNATURES[int(rng.integers(0, len(BENIGN_NOISE_SIGNATURES)))]
                mag = float(rng.uniform(*cfg.log_magnitude))
            else:
                sig = None
                mag = float(rng.uniform(*cfg.log_magnitude))
            events.append(TelemetryEvent(step, EventSource.LOG, sig, mag))
        scanner_roll, network_roll = self._benign_rolls[step]
        if scanner_roll < cfg.scanner_prob:
            events.append(TelemetryEvent(
                step, EventSource.SCANNER, None, float(rng.uniform(*cfg.scanner_magnitude))
            ))
        if network_roll < cfg.network_prob:
            sig = None
            if rng.random() < cfg.network_signature_prob:
                sig = BENIGN_NOISE_SIGNATURES[int(rng.integers(0, len(BENIGN_NOISE_SIGNATURES)))]
            events.append(TelemetryEvent(
                step, EventSource.NETWORK, sig, float(rng.uniform(*cfg.network_magnitude))
            ))
        return events

    def _emit_metrics(self, step: int) -> list[TelemetryEvent]:
        state = self.state
        return [
            TelemetryEvent(step, EventSource.METRIC, METRIC_CPU, state.cpu, background=False),
            TelemetryEvent(step, EventSource.METRIC, METRIC_MEM, state.mem, background=False),
        ]

    def _emit_attack(self, step: int, attack: ActiveAttack, is_onset: bool) -> list[TelemetryEvent]:
        profile = SCENARIO_PROFILES[attack.kind]
        sigs = _scenario_signatures(attack.kind)
        rng = self._rng_attack
        events: list[TelemetryEvent] = []

        def mk(source: EventSource, sig: str | None, mag: float) -> TelemetryEvent:
            return TelemetryEvent(
                step, source, sig, mag,
                truth_label=LABEL_MALICIOUS,
                truth_kind=attack.kind,
                truth_incident=attack.incident,
                background=False,
            )

        count = int(rng.poisson(profile.log_rate))
        if is_onset and count == 0:
            count = 1                   # an onset always leaves at least one trace
        for _ in range(count):
            sig = sigs[int(rng.integers(0, len(sigs)))]
            events.append(mk(EventSource.LOG, sig, float(rng.uniform(*ATTACK_LOG_MAGNITUDE))))
        scanner_p = profile.scanner_prob
        if self.state.scan_boost > 0:
            scanner_p = min(1.0, scanner_p + SCAN_BOOST_PROB)
        if rng.random() < scanner_p:
            sig = sigs[int(rng.integers(0, len(sigs)))]
            events.append(mk(EventSource.SCANNER, sig, float(rng.uniform(*ATTACK_SCANNER_MAGNITUDE))))
        if rng.random() < profile.network_prob:
            sig = sigs[int(rng.integers(0, len(sigs)))]
            events.append(mk(EventSource.NETWORK, sig, float(rng.uniform(*ATTACK_NETWORK_MAGNITUDE))))
        return events


# ---------------------------------------------------------------------------
# Event log serialization
# ---------------------------------------------------------------------------

def event_log_lines(events: Iterable[TelemetryEvent]) -> list[str]:
    """Public JSONL lines: exactly step, source, signature_id, magnitude."""
    return [json.dumps(e.public_fields(), sort_keys=True) for e in events]


def truth_sidecar_lines(events: Iterable[TelemetryEvent]) -> list[str]:
    """Hidden per-event labels, same order as the public log."""
    return [json.dumps(e.truth_fields(), sort_keys=True) for e in events]


def parse_event_line(line: str) -> dict:
    doc = json.loads(line)
    missing = {"step", "source", "signature_id", "magnitude"} - set(doc)
    if missing:
        raise ConfigError(f"event line missing fields: {sorted(missing)}")
    return doc
