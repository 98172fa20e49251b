"""Tests for the pipeline simulator: reset/step contracts, determinism,
attack lifecycle, ground truth, and serialization."""

import dataclasses
import hashlib
import json

import pytest

from autoguard.catalog import (
    ActionId,
    AttackKind,
    EventSource,
    SCENARIO_PROFILES,
    SIGNATURES_BY_KIND,
    StageId,
    default_effect_table,
    EffectEntry,
)
from autoguard.config import AttackPlan, PipelineConfig, ScheduledAttack
from autoguard.errors import ConfigError, UsageError
from autoguard.pipeline import (
    PipelineEnv,
    WindowLabel,
    event_log_lines,
    parse_event_line,
    truth_sidecar_lines,
)


def quiet_config(**overrides):
    cfg = PipelineConfig(
        num_services=3,
        episode_length=20,
        rng_seed=11,
        attack=AttackPlan(mode="explicit", schedule=[]),
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def one_attack_config(kind=AttackKind.CRYPTOMINER, onset=5, cap=6, **overrides):
    return quiet_config(
        attack=AttackPlan(mode="explicit", schedule=[
            ScheduledAttack(step=onset, kind=kind, target=1, duration_cap=cap),
        ]),
        **overrides,
    )


def run_noop(env, steps=None):
    outcomes = []
    while not env.done:
        outcomes.append(env.step(ActionId.NO_OP))
        if steps and len(outcomes) >= steps:
            break
    return outcomes


def full_log_hash(env_config, episode=0):
    env = PipelineEnv(env_config)
    _, events = env.reset(episode=episode)
    all_events = list(events)
    while not env.done:
        all_events.extend(env.step(ActionId.NO_OP).events)
    blob = "\n".join(event_log_lines(all_events)).encode()
    return hashlib.sha256(blob).hexdigest()


class TestReset:
    def test_initial_state_contract(self):
        env = PipelineEnv(quiet_config())
        state, events = env.reset()
        assert state.step == 0
        assert state.uptime == 1.0
        assert state.stage is StageId.COMMIT
        assert state.active_attacks == []
        assert all(e.step == 0 for e in events)

    def test_same_seed_bit_identical_reset(self):
        a_state, a_events = PipelineEnv(quiet_config()).reset()
        b_state, b_events = PipelineEnv(quiet_config()).reset()
        assert a_state.canonical() == b_state.canonical()
        assert event_log_lines(a_events) == event_log_lines(b_events)

    def test_attack_scheduled_past_episode_end_rejected(self):
        with pytest.raises(ConfigError, match="schedule"):
            PipelineEnv(quiet_config(attack=AttackPlan(
                mode="explicit",
                schedule=[ScheduledAttack(step=20, kind=AttackKind.CRYPTOMINER)],
            )))

    def test_invalid_episode_length_rejected(self):
        with pytest.raises(ConfigError, match="episode_length"):
            PipelineEnv(quiet_config(episode_length=0))

    def test_effect_table_probability_validated(self):
        table = default_effect_table()
        table[(AttackKind.CRYPTOMINER, ActionId.RESTART_SERVICE)] = EffectEntry(
            1.5, 0.1, 0.1)
        with pytest.raises(ConfigError, match="success_prob"):
            PipelineEnv(quiet_config(effect_table=table))


class TestStep:
    def test_noop_on_healthy_state_keeps_uptime_and_emits_only_benign(self):
        env = PipelineEnv(quiet_config())
        env.reset()
        out = env.step(ActionId.NO_OP)
        assert out.state.uptime == 1.0
        assert all(e.truth_label == "BENIGN" for e in out.events)

    def test_onset_window_contains_scenario_signature(self):
        kind = AttackKind.CONTAINER_ESCAPE
        env = PipelineEnv(one_attack_config(kind=kind, onset=5))
        env.reset()
        for _ in range(4):
            out = env.step(ActionId.NO_OP)
        out = env.step(ActionId.NO_OP)   # window 5
        sigs = {e.signature_id for e in out.events}
        assert sigs & set(SIGNATURES_BY_KIND[kind])

    def test_effective_action_with_certain_success_clears_next_step(self):
        kind = AttackKind.CRYPTOMINER
        table = default_effect_table()
        table[(kind, ActionId.QUARANTINE_IMAGE)] = EffectEntry(1.0, 0.1, 0.0)
        env = PipelineEnv(one_attack_config(kind=kind, onset=3, effect_table=table))
        env.reset()
        for _ in range(3):
            env.step(ActionId.NO_OP)
        assert env.state.active_attacks
        out = env.step(ActionId.QUARANTINE_IMAGE, target_service=1)
        assert out.action_succeeded
        assert out.state.active_attacks == []
        assert not env.window_labels[-1].malicious

    def test_zero_probability_action_persists_to_duration_cap(self):
        kind = AttackKind.CRYPTOMINER
        table = {key: EffectEntry(0.0, entry.disruption_cost, entry.uptime_penalty)
                 for key, entry in default_effect_table().items()}
        env = PipelineEnv(one_attack_config(kind=kind, onset=3, cap=6,
                                            effect_table=table))
        env.reset()
        run_noop(env)
        active = [l.step for l in env.window_labels if l.malicious]
        assert active == list(range(3, 9))      # onset..onset+cap-1

    def test_episode_terminates_exactly_at_episode_length(self):
        env = PipelineEnv(quiet_config())
        env.reset()
        outcomes = run_noop(env)
        assert len(outcomes) == 20
        assert outcomes[-1].done
        assert not outcomes[-2].done
        with pytest.raises(UsageError):
            env.step(ActionId.NO_OP)

    def test_uptime_recovers_monotonically_without_attacks(self):
        env = PipelineEnv(quiet_config())
        env.reset()
        env.state.health = [0.2, 0.5, 1.0]
        last = env.state.uptime
        while not env.done:
            out = env.step(ActionId.NO_OP)
            assert out.state.uptime >= last - 1e-12
            last = out.state.uptime
        assert last == 1.0

    def test_health_and_uptime_stay_in_unit_interval(self):
        env = PipelineEnv(one_attack_config(onset=2, cap=15))
        env.reset()
        while not env.done:
            out = env.step(ActionId.RESTART_SERVICE)
            assert 0.0 <= out.state.uptime <= 1.0
            assert all(0.0 <= h <= 1.0 for h in out.state.health)


class TestDeterminism:
    def test_identical_config_and_seed_identical_log_hash(self):
        cfg = PipelineConfig(rng_seed=99)
        assert full_log_hash(cfg) == full_log_hash(PipelineConfig(rng_seed=99))

    def test_different_seed_differs(self):
        assert full_log_hash(PipelineConfig(rng_seed=1)) != full_log_hash(
            PipelineConfig(rng_seed=2))

    def test_different_episode_index_differs(self):
        cfg = PipelineConfig(rng_seed=99)
        assert full_log_hash(cfg, episode=0) != full_log_hash(cfg, episode=1)

    def test_benign_stream_independent_of_actions(self):
        cfg = one_attack_config(onset=4, cap=10, rng_seed=31)

        def benign_lines(action):
            env = PipelineEnv(cfg)
            _, events = env.reset()
            lines = [e for e in events if e.background]
            while not env.done:
                out = env.step(action)
                lines.extend(e for e in out.events if e.background)
            return event_log_lines(lines)

        assert benign_lines(ActionId.NO_OP) == benign_lines(ActionId.RESTART_SERVICE)


class TestGroundTruth:
    def test_no_attacks_all_labels_benign(self):
        env = PipelineEnv(quiet_config())
        env.reset()
        run_noop(env)
        assert all(not l.malicious for l in env.window_labels)

    def test_labels_cover_exact_attack_windows(self):
        env = PipelineEnv(one_attack_config(onset=5, cap=6))
        env.reset()
        run_noop(env)
        malicious = [l.step for l in env.window_labels if l.malicious]
        assert malicious == list(range(5, 11))

    def test_window_labels_round_trip_json(self):
        env = PipelineEnv(one_attack_config())
        env.reset()
        run_noop(env)
        lines = [json.dumps(l.to_json(), sort_keys=True) for l in env.window_labels]
        parsed = [WindowLabel.from_json(json.loads(line)) for line in lines]
        assert parsed == env.window_labels

    def test_ground_truth_absent_from_public_event_fields(self):
        env = PipelineEnv(one_attack_config(onset=2))
        env.reset()
        out = env.step(ActionId.NO_OP)
        out = env.step(ActionId.NO_OP)
        for line in event_log_lines(out.events):
            doc = parse_event_line(line)
            assert set(doc) == {"step", "source", "signature_id", "magnitude"}

    def test_sidecar_aligns_line_by_line(self):
        env = PipelineEnv(one_attack_config(onset=2, cap=4))
        env.reset()
        events = []
        while not env.done:
            events.extend(env.step(ActionId.NO_OP).events)
        public = event_log_lines(events)
        sidecar = truth_sidecar_lines(events)
        assert len(public) == len(sidecar)
        for pub, truth in zip(public, sidecar):
            doc = json.loads(truth)
            if doc["label"] == "MALICIOUS":
                sig = json.loads(pub)["signature_id"]
                kind = AttackKind(doc["kind"])
                assert sig in SIGNATURES_BY_KIND[kind]


class TestRateSchedules:
    def test_rate_mode_respects_onset_bounds(self):
        cfg = PipelineConfig(rng_seed=77)
        env = PipelineEnv(cfg)
        for episode in range(30):
            env.reset(episode=episode)
            run_noop(env)
            for incident in env.incidents:
                assert cfg.attack.min_onset <= incident.onset <= cfg.attack.max_onset + 1

    def test_zero_day_only_plan_produces_only_zero_day(self):
        cfg = PipelineConfig(rng_seed=7)
        cfg.attack.kinds = (AttackKind.ZERO_DAY_VARIANT,)
        env = PipelineEnv(cfg)
        seen = set()
        for episode in range(20):
            env.reset(episode=episode)
            run_noop(env)
            seen.update(i.kind for i in env.incidents)
        assert seen == {AttackKind.ZERO_DAY_VARIANT.value}
