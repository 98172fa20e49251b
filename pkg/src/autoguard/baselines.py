"""Comparison systems: a rule-matching static IDS and a classical anomaly
detector (isolation forest + PCA reconstruction residual), each paired with
a fixed remediation rule so recovery times are comparable.

Both are training-free at benchmark time: the IDS ships a static rule set,
and the anomaly models are fitted once on a benign warm-up window and never
updated afterwards.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .catalog import (
    ActionId,
    AttackKind,
    SIGNATURES_BY_KIND,
    RULE_COLLISION_SIGNATURES,
)
from .config import AttackPlan, BaselineConfig, IdsConfig, MonitorConfig, PipelineConfig, TadmConfig
from .errors import ConfigError, UsageError
from .monitor import DetectionVerdict, SignalTriple, normalize
from .pipeline import PipelineEnv, TelemetryEvent


# ---------------------------------------------------------------------------
# Static IDS
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rule:
    """Exact signature match (or inclusive `LO..HI` range) with an optional
    magnitude floor."""

    pattern: str
    min_magnitude: float | None = None

    def matches(self, signature_id: str | None, magnitude: float) -> bool:
        if signature_id is None:
            return False
        if ".." in self.pattern:
            lo, hi = self.pattern.split("..", 1)
            if not lo <= signature_id <= hi:
                return False
        elif signature_id != self.pattern:
            return False
        return self.min_magnitude is None or magnitude >= self.min_magnitude


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]

    def first_match(self, event: TelemetryEvent) -> Rule | None:
        for rule in self.rules:        # rules are ordered; first match wins
            if rule.matches(event.signature_id, event.magnitude):
                return rule
        return None

    def signatures(self) -> set[str]:
        return {r.pattern for r in self.rules if ".." not in r.pattern}


def ids_match(rules: RuleSet, events: list[TelemetryEvent], step: int = 0) -> DetectionVerdict:
    """Alert iff any event in the batch matches any rule."""
    matched = any(rules.first_match(e) is not None for e in events)
    return DetectionVerdict(step=step, alert=matched, score=1.0 if matched else 0.0)


def default_ruleset(cfg: IdsConfig | None = None) -> RuleSet:
    """Signature rules covering a seeded fraction of the non-zero-day attack
    signatures, optionally plus overly-broad vendor rules that also fire on
    benign chatter. Zero-day signatures are never included."""
    cfg = cfg or IdsConfig()
    attack_sigs: list[str] = []
    for kind in AttackKind:
        if kind is AttackKind.ZERO_DAY_VARIANT:
            continue
        attack_sigs.extend(SIGNATURES_BY_KIND[kind])
    attack_sigs.sort()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.rule_seed)))
    n_omit = round(len(attack_sigs) * (1.0 - cfg.coverage))
    omitted = set(np.array(attack_sigs)[rng.permutation(len(attack_sigs))[:n_omit]])
    rules = [
        Rule(sig, cfg.attack_rule_floor)
        for sig in attack_sigs
        if sig not in omitted
    ]
    if cfg.include_noisy_rules:
        rules.extend(Rule(sig, cfg.noisy_rule_floor) for sig in RULE_COLLISION_SIGNATURES)
    return RuleSet(tuple(rules))


def parse_rules_file(path: str) -> RuleSet:
    """One rule per line: `signature_id[,min_magnitude]`; '#' starts a comment."""
    rules = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) > 2:
                raise ConfigError(f"{path}:{lineno}: expected signature_id[,min_magnitude]")
            floor = None
            if len(parts) == 2:
                try:
                    floor = float(parts[1])
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: bad magnitude '{parts[1]}'") from None
            rules.append(Rule(parts[0], floor))
    return RuleSet(tuple(rules))


def write_rules_file(rules: RuleSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rule in rules.rules:
            if rule.min_magnitude is None:
                fh.write(f"{rule.pattern}\n")
            else:
                fh.write(f"{rule.pattern},{rule.min_magnitude}\n")


# ---------------------------------------------------------------------------
# Isolation forest (from scratch)
# ---------------------------------------------------------------------------

_EULER_GAMMA = 0.5772156649015329


def average_path_length(m: int) -> float:
    """Expected unsuccessful-search path length in a BST of m points."""
    if m <= 1:
        return 0.0
    if m == 2:
        return 1.0
    return 2.0 * (math.log(m - 1.0) + _EULER_GAMMA) - 2.0 * (m - 1.0) / m


@dataclass
class _Node:
    # internal node when split_dim >= 0; leaf otherwise
    split_dim: int = -1
    split_value: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    size: int = 0                 # data mass that reached this leaf during fit
    depth: int = 0
    unsplittable: bool = False    # every remaining point was identical


@dataclass
class IsolationForest:
    trees: list[_Node]
    subsample_size: int
    n_trees: int


def _grow(x: np.ndarray, depth: int, max_depth: int, rng: np.random.Generator) -> _Node:
    m = x.shape[0]
    if m <= 1 or depth >= max_depth:
        return _Node(size=m, depth=depth)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    splittable = np.nonzero(hi > lo)[0]
    if splittable.size == 0:
        # Identical points cannot be separated; treat them as fully
        # isolated (no unsuccessful-search credit).
        return _Node(size=m, depth=depth, unsplittable=True)
    dim = int(splittable[int(rng.integers(0, splittable.size))])
    value = float(rng.uniform(lo[dim], hi[dim]))
    mask = x[:, dim] < value
    return _Node(
        split_dim=dim,
        split_value=value,
        left=_grow(x[mask], depth + 1, max_depth, rng),
        right=_grow(x[~mask], depth + 1, max_depth, rng),
        depth=depth,
    )


def iforest_fit(
    data: np.ndarray,
    n_trees: int,
    subsample_size: int,
    rng: np.random.Generator,
) -> IsolationForest:
    """Build the forest: each tree grows on a seeded subsample with random
    split dimensions/values, depth-capped at ceil(log2(subsample_size))."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise UsageError("training data must be a 2-D array of feature points")
    n = x.shape[0]
    if subsample_size < 2:
        raise ConfigError("subsample_size must be >= 2")
    if n < subsample_size:
        raise ConfigError(f"need at least subsample_size={subsample_size} points, got {n}")
    max_depth = math.ceil(math.log2(subsample_size))
    trees = []
    for _ in range(n_trees):
        idx = rng.permutation(n)[:subsample_size]
        trees.append(_grow(x[idx], 0, max_depth, rng))
    return IsolationForest(trees=trees, subsample_size=subsample_size, n_trees=n_trees)


def _path_length(node: _Node, point: np.ndarray) -> float:
    while node.split_dim >= 0:
        if point[node.split_dim] < node.split_value:
            node = node.left
        else:
            node = node.right
    if node.unsplittable:
        return float(node.depth)
    return node.depth + average_path_length(node.size)


def score_from_mean_path(mean_path: float, subsample_size: int) -> float:
    """Standard anomaly score: 2 ** (-E[h] / c(n)) with n the subsample size."""
    c = average_path_length(subsample_size)
    if c <= 0:
        return 1.0
    return float(2.0 ** (-mean_path / c))


def iforest_score(forest: IsolationForest, point: np.ndarray) -> float:
    """Anomaly score in (0, 1]; higher means easier to isolate."""
    p = np.asarray(point, dtype=float)
    mean_path = sum(_path_length(t, p) for t in forest.trees) / len(forest.trees)
    return score_from_mean_path(mean_path, forest.subsample_size)


# ---------------------------------------------------------------------------
# PCA reconstruction residual
# ---------------------------------------------------------------------------

@dataclass
class PcaModel:
    mean: np.ndarray             # (d,)
    components: np.ndarray       # (k, d), orthonormal rows
    k: int


def pca_fit(data: np.ndarray, k: int) -> PcaModel:
    """Mean-centred top-k principal directions via SVD."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise UsageError("training data must be a 2-D array of feature points")
    n, d = x.shape
    if k > d:
        raise ConfigError(f"pca components k={k} exceeds input dimension {d}")
    if n <= k:
        raise ConfigError(f"need more than k={k} points to fit, got {n}")
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    return PcaModel(mean=mean, components=vt[:k].copy(), k=k)


def pca_residual(model: PcaModel, point: np.ndarray) -> float:
    """Squared distance from the centred point to its projection on the
    retained subspace."""
    p = np.asarray(point, dtype=float)
    if p.shape != model.mean.shape:
        raise UsageError(
            f"point dimension {p.shape} does not match model dimension {model.mean.shape}"
        )
    centered = p - model.mean
    coords = model.components @ centered
    resid = centered - model.components.T @ coords
    return float(resid @ resid)


# ---------------------------------------------------------------------------
# TADM: the combined anomaly detector
# ---------------------------------------------------------------------------

@dataclass
class TadmModel:
    forest: IsolationForest
    pca: PcaModel
    theta_iforest: float
    theta_pca: float


def tadm_feature(signals: SignalTriple, cpu: float, mem: float) -> np.ndarray:
    """Per-window feature point: (v, m, l, cpu, mem)."""
    return np.array([signals.v, signals.m, signals.l, cpu, mem], dtype=float)


def tadm_detect(
    forest: IsolationForest,
    pca: PcaModel,
    point: np.ndarray,
    thresholds: tuple[float, float],
    step: int = 0,
) -> DetectionVerdict:
    """Alert iff the isolation score or the reconstruction residual crosses
    its threshold."""
    theta_if, theta_pca = thresholds
    score = iforest_score(forest, point)
    residual = pca_residual(pca, point)
    alert = score >= theta_if or residual >= theta_pca
    return DetectionVerdict(step=step, alert=alert, score=score)


def benign_warmup_points(
    env_config: PipelineConfig,
    monitor_config: MonitorConfig,
    steps: int,
    seed: int,
) -> np.ndarray:
    """Simulate an attack-free window and collect one feature point per step.

    This is the fit corpus for the anomaly models: same traffic generator
    as the benchmark runs, no scheduled attacks, its own seed stream.
    """
    cfg = dataclasses.replace(
        env_config,
        episode_length=steps,
        attack=AttackPlan(mode="explicit", schedule=[]),
        rng_seed=seed,
    )
    env = PipelineEnv(cfg)
    env.reset()
    points = []
    for _ in range(steps):
        outcome = env.step(ActionId.NO_OP)
        signals = normalize(
            outcome.events,
            monitor_config.metric_baselines,
            monitor_config.default_metric_baseline,
        )
        points.append(tadm_feature(signals, outcome.state.cpu, outcome.state.mem))
    return np.asarray(points)


def tadm_fit(
    env_config: PipelineConfig,
    monitor_config: MonitorConfig,
    cfg: TadmConfig,
    seed: int,
) -> TadmModel:
    """Fit both models on the benign warm-up window; thresholds are frozen
    afterwards (no adaptation during evaluation)."""
    points = benign_warmup_points(env_config, monitor_config, cfg.warmup_steps, seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=(seed, 0x7AD))))
    forest = iforest_fit(points, cfg.n_trees, min(cfg.subsample_size, len(points)), rng)
    pca = pca_fit(points, cfg.pca_components)
    residuals = np.array([pca_residual(pca, p) for p in points])
    theta_pca = float(np.percentile(residuals, cfg.residual_percentile))
    return TadmModel(
        forest=forest, pca=pca,
        theta_iforest=cfg.theta_iforest, theta_pca=theta_pca,
    )


# ---------------------------------------------------------------------------
# Fixed remediation rules
# ---------------------------------------------------------------------------

MODE_IDS = "IDS"
MODE_TADM = "TADM"

_BASELINE_ACTION = {
    MODE_IDS: ActionId.RESTART_SERVICE,
    MODE_TADM: ActionId.ISOLATE_CONTAINER,
}


def baseline_remediate(verdict: DetectionVerdict, mode: str) -> ActionId:
    """Fixed mapping: on alert the IDS restarts, TADM isolates; otherwise
    nothing. No learning, no adaptation."""
    if mode not in _BASELINE_ACTION:
        raise UsageError(f"unknown baseline mode '{mode}'")
    if not verdict.alert:
        return ActionId.NO_OP
    return _BASELINE_ACTION[mode]


class BaselineRemediator:
    """Adds the cooldown: at most one remediation attempt per `cooldown`
    steps, so a noisy detector cannot thrash the pipeline."""

    def __init__(self, mode: str, cooldown: int = 3):
        if mode not in _BASELINE_ACTION:
            raise UsageError(f"unknown baseline mode '{mode}'")
        self.mode = mode
        self.cooldown = cooldown
        self._last_action_step: int | None = None

    def reset(self) -> None:
        self._last_action_step = None

    def act(self, verdict: DetectionVerdict, step: int) -> ActionId:
        action = baseline_remediate(verdict, self.mode)
        if action is ActionId.NO_OP:
            return action
        if (self._last_action_step is not None
                and step - self._last_action_step < self.cooldown):
            return ActionId.NO_OP
        self._last_action_step = step
        return action
