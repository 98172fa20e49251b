"""Security monitor: turns raw telemetry into risk signals and verdicts.

The monitor is stateless and pure. Per decision window it condenses the
event batch into three non-negative signals (vulnerability, metric
anomaly, log anomaly), squashes their weighted sum through a logistic
into a risk score in (0, 1), assembles the agent's observation, and
thresholds the score into an alert verdict for scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .catalog import ActionId, EventSource, StageId
from .config import MonitorConfig
from .pipeline import EnvState, TelemetryEvent

# Closest double below 1.0; the score is clamped into (0, 1) so downstream
# strict-openness invariants hold even when the logistic saturates in
# floating point.
_ONE_MINUS = 1.0 - 2.0**-53
_TINY = 5e-324


@dataclass(frozen=True)
class SignalTriple:
    """Per-window risk signals; all components finite and >= 0."""

    v: float    # vulnerability: scanner finding mass
    m: float    # metric anomaly: readings above their baselines
    l: float    # log anomaly: count of signatured log lines

    def __add__(self, other: "SignalTriple") -> "SignalTriple":
        return SignalTriple(self.v + other.v, self.m + other.m, self.l + other.l)


@dataclass(frozen=True)
class RiskWeights:
    w_v: float = 0.5
    w_m: float = 0.3
    w_l: float = 0.2

    @staticmethod
    def from_config(cfg: MonitorConfig) -> "RiskWeights":
        return RiskWeights(cfg.w_v, cfg.w_m, cfg.w_l)


@dataclass(frozen=True)
class FeatureVector:
    """Observation handed to the decision layer.

    hist_acts always holds exactly `history_len` (action, succeeded) pairs,
    newest last, padded with neutral (NO_OP, False) at episode start.
    """

    rho: float
    cpu: float
    mem: float
    dep_drift: float
    stage: StageId
    hist_acts: tuple[tuple[ActionId, bool], ...]


@dataclass(frozen=True)
class DetectionVerdict:
    step: int
    alert: bool
    score: float


def normalize(
    events: Iterable[TelemetryEvent],
    metric_baselines: dict[str, float] | None = None,
    default_baseline: float = 1.0,
) -> SignalTriple:
    """Condense one window's events into the three risk signals.

    v sums scanner magnitudes, m sums metric readings that exceed their
    per-metric baseline, l counts signatured log lines. Empty batches give
    the zero triple, and the reduction is additive over batch
    concatenation.
    """
    baselines = metric_baselines or {}
    v = 0.0
    m = 0.0
    l = 0.0
    for event in events:
        if event.source is EventSource.SCANNER:
            v += event.magnitude
        elif event.source is EventSource.METRIC:
            if event.magnitude > baselines.get(event.signature_id, default_baseline):
                m += event.magnitude
        elif event.source is EventSource.LOG:
            if event.signature_id:
                l += 1.0
    return SignalTriple(v, m, l)


def risk_score(signals: SignalTriple, weights: RiskWeights) -> float:
    """Logistic of the weighted signal sum, clamped strictly inside (0, 1)."""
    x = weights.w_v * signals.v + weights.w_m * signals.m + weights.w_l * signals.l
    if x >= 0:
        score = 1.0 / (1.0 + math.exp(-x))
    else:
        e = math.exp(x)
        score = e / (1.0 + e)
    if score >= 1.0:
        return _ONE_MINUS
    if score <= 0.0:
        return _TINY
    return score


class ActionHistory:
    """Fixed-length window of recent (action, succeeded) outcomes."""

    def __init__(self, length: int):
        if length < 1:
            raise ValueError("history length must be >= 1")
        self.length = length
        self._items: list[tuple[ActionId, bool]] = []

    def push(self, action: ActionId, succeeded: bool) -> None:
        self._items.append((action, succeeded))
        if len(self._items) > self.length:
            del self._items[0]

    def window(self) -> tuple[tuple[ActionId, bool], ...]:
        pad = self.length - len(self._items)
        padded = [(ActionId.NO_OP, False)] * pad + self._items
        return tuple(padded)


def build_feature_vector(
    rho: float,
    env_state: EnvState,
    history: ActionHistory | Sequence[tuple[ActionId, bool]],
) -> FeatureVector:
    """Assemble the observation from the current score, state, and history."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie strictly in (0, 1), got {rho}")
    window = history.window() if isinstance(history, ActionHistory) else tuple(history)
    return FeatureVector(
        rho=rho,
        cpu=env_state.cpu,
        mem=env_state.mem,
        dep_drift=env_state.dependency_drift,
        stage=env_state.stage,
        hist_acts=window,
    )


def detect(fv: FeatureVector, threshold: float, step: int = 0) -> DetectionVerdict:
    """Pure threshold on the risk score; alert fires at score >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"detection threshold must lie in (0, 1), got {threshold}")
    return DetectionVerdict(step=step, alert=fv.rho >= threshold, score=fv.rho)
