"""Tests for telemetry normalization, risk scoring, and detection."""

import math

import pytest
from hypothesis import given, strategies as st

from autoguard.catalog import ActionId, EventSource, StageId
from autoguard.monitor import (
    ActionHistory,
    RiskWeights,
    SignalTriple,
    build_feature_vector,
    detect,
    normalize,
    risk_score,
)
from autoguard.pipeline import EnvState, TelemetryEvent


def ev(source, sig=None, mag=1.0, step=0):
    return TelemetryEvent(step=step, source=source, signature_id=sig, magnitude=mag)


def make_state(**overrides):
    state = EnvState(
        step=3,
        stage=StageId.TEST,
        health=[1.0, 0.8, 1.0],
        cpu=0.31,
        mem=0.42,
        dependency_drift=0.2,
        deployed_version=2,
        active_attacks=[],
        network_quarantine=[False] * 3,
        replicas=[1] * 3,
        image_quarantined=[False] * 3,
        service_generation=[0] * 3,
    )
    for key, value in overrides.items():
        setattr(state, key, value)
    return state


BASELINES = {"metric.cpu": 0.45, "metric.mem": 0.55}


class TestNormalize:
    def test_empty_batch_is_zero_triple(self):
        assert normalize([]) == SignalTriple(0.0, 0.0, 0.0)

    def test_three_signatured_logs_count_into_l_only(self):
        events = [ev(EventSource.LOG, sig=f"SIG-010{i}") for i in range(3)]
        triple = normalize(events)
        assert triple == SignalTriple(0.0, 0.0, 3.0)

    def test_unsignatured_logs_do_not_count(self):
        assert normalize([ev(EventSource.LOG)]).l == 0.0

    def test_scanner_magnitudes_sum_into_v(self):
        events = [ev(EventSource.SCANNER, mag=1.5), ev(EventSource.SCANNER, mag=0.25)]
        assert normalize(events).v == pytest.approx(1.75)

    def test_metric_above_baseline_sums_into_m(self):
        events = [
            ev(EventSource.METRIC, sig="metric.cpu", mag=0.60),
            ev(EventSource.METRIC, sig="metric.mem", mag=0.40),  # below baseline
        ]
        triple = normalize(events, BASELINES)
        assert triple.m == pytest.approx(0.60)

    def test_network_events_are_ignored(self):
        assert normalize([ev(EventSource.NETWORK, sig="SIG-1200")]) == SignalTriple(0, 0, 0)

    def test_mixed_fixture_matches_hand_count(self):
        # Independent oracle: explicit per-event tally of the same fixture.
        fixture = [
            ev(EventSource.LOG, sig="SIG-1003", mag=0.7),
            ev(EventSource.LOG, sig=None, mag=0.4),
            ev(EventSource.LOG, sig="SIG-0101", mag=0.2),
            ev(EventSource.SCANNER, sig="SIG-1003", mag=2.1),
            ev(EventSource.SCANNER, sig=None, mag=0.05),
            ev(EventSource.METRIC, sig="metric.cpu", mag=0.81),
            ev(EventSource.METRIC, sig="metric.mem", mag=0.50),
            ev(EventSource.NETWORK, sig="SIG-1200", mag=1.4),
        ]
        expected_v = expected_m = expected_l = 0.0
        for event in fixture:
            if event.source is EventSource.SCANNER:
                expected_v += event.magnitude
            elif event.source is EventSource.METRIC:
                if event.magnitude > BASELINES[event.signature_id]:
                    expected_m += event.magnitude
            elif event.source is EventSource.LOG and event.signature_id:
                expected_l += 1
        triple = normalize(fixture, BASELINES)
        assert (triple.v, triple.m, triple.l) == (
            pytest.approx(expected_v), pytest.approx(expected_m), expected_l,
        )

    @given(
        split=st.integers(min_value=0, max_value=8),
        mags=st.lists(st.floats(0.0, 5.0), min_size=8, max_size=8),
    )
    def test_additive_over_concatenation(self, split, mags):
        sources = [EventSource.LOG, EventSource.SCANNER, EventSource.METRIC,
                   EventSource.NETWORK] * 2
        events = [
            ev(src, sig="metric.cpu" if src is EventSource.METRIC else "SIG-0100", mag=m)
            for src, m in zip(sources, mags)
        ]
        whole = normalize(events, BASELINES)
        left = normalize(events[:split], BASELINES)
        right = normalize(events[split:], BASELINES)
        combined = left + right
        assert combined.v == pytest.approx(whole.v)
        assert combined.m == pytest.approx(whole.m)
        assert combined.l == pytest.approx(whole.l)


class TestRiskScore:
    def test_zero_signals_score_half(self):
        assert risk_score(SignalTriple(0, 0, 0), RiskWeights(1, 1, 1)) == pytest.approx(0.5)

    def test_weighted_example_against_high_precision_oracle(self):
        # sigma(0.5*2 + 0.3*1 + 0.2*3) = sigma(1.9), evaluated independently
        # at 50 digits.
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 50
        expected = float(1 / (1 + mpmath.exp(-mpmath.mpf("1.9"))))
        got = risk_score(SignalTriple(2, 1, 3), RiskWeights(0.5, 0.3, 0.2))
        assert got == pytest.approx(expected, abs=1e-6)
        assert got == pytest.approx(0.869892, abs=1e-6)

    def test_saturation_stays_strictly_below_one(self):
        score = risk_score(SignalTriple(1e6, 0, 0), RiskWeights(1, 1, 1))
        assert score < 1.0
        assert 1.0 - score < 1e-6

    def test_huge_negative_weight_stays_strictly_above_zero(self):
        score = risk_score(SignalTriple(1e6, 0, 0), RiskWeights(-1, 0, 0))
        assert score > 0.0

    @given(
        v=st.floats(0, 10), m=st.floats(0, 10), l=st.floats(0, 10),
        w=st.floats(0.01, 0.8),
        bump=st.floats(0.01, 5),
    )
    def test_strictly_increasing_in_each_signal(self, v, m, l, bump, w):
        weights = RiskWeights(w, w, w)
        base = risk_score(SignalTriple(v, m, l), weights)
        assert risk_score(SignalTriple(v + bump, m, l), weights) > base
        assert risk_score(SignalTriple(v, m + bump, l), weights) > base
        assert risk_score(SignalTriple(v, m, l + bump), weights) > base

    @given(v=st.floats(0, 1e5), m=st.floats(0, 1e5), l=st.floats(0, 1e5))
    def test_output_always_strictly_inside_unit_interval(self, v, m, l):
        score = risk_score(SignalTriple(v, m, l), RiskWeights(0.5, 0.3, 0.2))
        assert 0.0 < score < 1.0


class TestFeatureVector:
    def test_history_pads_with_neutral_noop_at_start(self):
        fv = build_feature_vector(0.5, make_state(), ActionHistory(4))
        assert fv.hist_acts == ((ActionId.NO_OP, False),) * 4

    def test_latest_outcome_lands_in_last_slot(self):
        history = ActionHistory(4)
        history.push(ActionId.ISOLATE_CONTAINER, True)
        fv = build_feature_vector(0.5, make_state(), history)
        assert fv.hist_acts[-1] == (ActionId.ISOLATE_CONTAINER, True)
        assert fv.hist_acts[0] == (ActionId.NO_OP, False)

    def test_window_holds_exactly_last_h_entries(self):
        history = ActionHistory(4)
        pushed = [
            (ActionId.TRIGGER_SCAN, False),
            (ActionId.RESTART_SERVICE, False),
            (ActionId.ISOLATE_CONTAINER, True),
            (ActionId.NO_OP, False),
            (ActionId.BLOCK_NETWORK_POLICY, True),
            (ActionId.QUARANTINE_IMAGE, False),
        ]
        for action, ok in pushed:
            history.push(action, ok)
        fv = build_feature_vector(0.5, make_state(), history)
        assert fv.hist_acts == tuple(pushed[-4:])

    def test_fields_copied_verbatim_from_state(self):
        state = make_state(cpu=0.77, mem=0.11, dependency_drift=1.9, stage=StageId.DEPLOY)
        fv = build_feature_vector(0.9, state, ActionHistory(4))
        assert (fv.rho, fv.cpu, fv.mem, fv.dep_drift, fv.stage) == (
            0.9, 0.77, 0.11, 1.9, StageId.DEPLOY,
        )

    def test_rho_outside_open_interval_rejected(self):
        with pytest.raises(ValueError):
            build_feature_vector(0.0, make_state(), ActionHistory(4))
        with pytest.raises(ValueError):
            build_feature_vector(1.0, make_state(), ActionHistory(4))

    def test_hidden_state_does_not_leak_into_features(self):
        # Two states that differ only in the hidden attack set produce the
        # same observation.
        from autoguard.pipeline import ActiveAttack
        from autoguard.catalog import AttackKind
        clean = make_state()
        infested = make_state(active_attacks=[
            ActiveAttack(0, AttackKind.CRYPTOMINER, 1, 2, 20)
        ])
        fv_a = build_feature_vector(0.5, clean, ActionHistory(4))
        fv_b = build_feature_vector(0.5, infested, ActionHistory(4))
        assert fv_a == fv_b


class TestDetect:
    def test_alert_above_threshold(self):
        fv = build_feature_vector(0.7, make_state(), ActionHistory(4))
        assert detect(fv, 0.5).alert

    def test_boundary_equality_alerts(self):
        fv = build_feature_vector(0.5, make_state(), ActionHistory(4))
        assert detect(fv, 0.5).alert

    def test_below_threshold_is_quiet(self):
        fv = build_feature_vector(0.3, make_state(), ActionHistory(4))
        assert not detect(fv, 0.5).alert

    @given(
        rho=st.floats(0.01, 0.99),
        cpu=st.floats(0, 1), mem=st.floats(0, 1), drift=st.floats(0, 5),
        stage=st.sampled_from(list(StageId)),
    )
    def test_verdict_depends_only_on_rho(self, rho, cpu, mem, drift, stage):
        state = make_state(cpu=cpu, mem=mem, dependency_drift=drift, stage=stage)
        fv = build_feature_vector(rho, state, ActionHistory(4))
        reference = build_feature_vector(rho, make_state(), ActionHistory(4))
        assert detect(fv, 0.6).alert == detect(reference, 0.6).alert

    def test_threshold_domain_enforced(self):
        fv = build_feature_vector(0.5, make_state(), ActionHistory(4))
        with pytest.raises(ValueError):
            detect(fv, 0.0)
        with pytest.raises(ValueError):
            detect(fv, 1.0)
