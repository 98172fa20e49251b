"""Experiment runner: trains the learning system, evaluates every system
under test on bit-identical seeded attack sequences, owns all run-artifact
file I/O, and replays finished runs for integrity checking.

Per (system, seed) evaluation run the harness writes:

  events.jsonl        public telemetry (step, source, signature_id, magnitude)
  events_truth.jsonl  per-event hidden labels, same line order
  windows.jsonl       per-window ground truth
  incidents.json      scheduled attack occurrences
  verdicts.jsonl      per-window detection verdicts
  healing.jsonl       every attempted remediation
  metrics.json        the per-run report
  run.json            manifest: seeds, digests, event-log hash

plus, for the learning system, qtable.csv and learning_curve.csv per seed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

from .agent import (
    QTable,
    TrainResult,
    discretize,
    train,
)
from .baselines import (
    BaselineRemediator,
    MODE_IDS,
    MODE_TADM,
    RuleSet,
    TadmModel,
    default_ruleset,
    ids_match,
    parse_rules_file,
    tadm_detect,
    tadm_feature,
    tadm_fit,
)
from .catalog import ActionId
from .config import (
    EVAL_SEED_OFFSET,
    ExperimentConfig,
    SYSTEM_AUTOGUARD,
    SYSTEM_STATIC_IDS,
    SYSTEM_TADM,
    config_digest,
    config_to_dict,
    load_config,
)
from .errors import IntegrityError, UsageError
from .healing import HealingOrchestrator
from .metrics import (
    MetricsReport,
    VerdictRecord,
    aggregate_reports,
    compute_metrics,
)
from .monitor import (
    ActionHistory,
    RiskWeights,
    build_feature_vector,
    normalize,
    risk_score,
)
from .pipeline import (
    IncidentRecord,
    PipelineEnv,
    TelemetryEvent,
    WindowLabel,
    event_log_lines,
    truth_sidecar_lines,
)


def _sha256_lines(lines: list[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


@dataclass
class RunData:
    """Everything one evaluation run produced, before/after disk."""

    system: str
    seed: int
    events: list[TelemetryEvent]
    verdicts: list[VerdictRecord]
    labels: list[WindowLabel]
    incidents: list[IncidentRecord]
    healing: list[dict]
    event_hash: str
    benign_hash: str
    metrics: MetricsReport | None = None


def _warmup_seed(seed: int) -> int:
    return seed + 2 * EVAL_SEED_OFFSET


class _AutoGuardDriver:
    """Greedy trained policy plus the risk-score detector."""

    def __init__(self, cfg: ExperimentConfig, qtable: QTable):
        self.cfg = cfg
        self.qtable = qtable

    def reset_episode(self) -> None:
        pass

    def decide(self, fv, verdict, step) -> ActionId:
        return ActionId(self.qtable.best_action(discretize(fv, self.cfg.agent.bins)))

    def verdict(self, step, episode, events, signals, rho, state) -> VerdictRecord:
        alert = rho >= self.cfg.monitor.detection_threshold
        return VerdictRecord(episode=episode, step=step, alert=alert, score=rho)


class _StaticIdsDriver:
    def __init__(self, cfg: ExperimentConfig, rules: RuleSet):
        self.rules = rules
        self.remediator = BaselineRemediator(MODE_IDS, cfg.baselines.action_cooldown)

    def reset_episode(self) -> None:
        self.remediator.reset()

    def decide(self, fv, verdict, step) -> ActionId:
        return self.remediator.act(verdict, step)

    def verdict(self, step, episode, events, signals, rho, state) -> VerdictRecord:
        v = ids_match(self.rules, events, step)
        return VerdictRecord(episode=episode, step=step, alert=v.alert, score=v.score)


class _TadmDriver:
    def __init__(self, cfg: ExperimentConfig, model: TadmModel):
        self.model = model
        self.remediator = BaselineRemediator(MODE_TADM, cfg.baselines.action_cooldown)

    def reset_episode(self) -> None:
        self.remediator.reset()

    def decide(self, fv, verdict, step) -> ActionId:
        return self.remediator.act(verdict, step)

    def verdict(self, step, episode, events, signals, rho, state) -> VerdictRecord:
        point = tadm_feature(signals, state.cpu, state.mem)
        v = tadm_detect(
            self.model.forest, self.model.pca, point,
            (self.model.theta_iforest, self.model.theta_pca), step,
        )
        return VerdictRecord(episode=episode, step=step, alert=v.alert, score=v.score)


def _make_driver(system: str, cfg: ExperimentConfig, seed: int,
                 qtable: QTable | None, rules: RuleSet | None):
    if system == SYSTEM_AUTOGUARD:
        if qtable is None:
            raise UsageError("AUTOGUARD evaluation needs a trained Q-table")
        return _AutoGuardDriver(cfg, qtable)
    if system == SYSTEM_STATIC_IDS:
        return _StaticIdsDriver(cfg, rules or default_ruleset(cfg.baselines.ids))
    if system == SYSTEM_TADM:
        model = tadm_fit(cfg.env, cfg.monitor, cfg.baselines.tadm, _warmup_seed(seed))
        return _TadmDriver(cfg, model)
    raise UsageError(f"unknown system '{system}'")


def evaluate_system(
    cfg: ExperimentConfig,
    system: str,
    seed: int,
    qtable: QTable | None = None,
    rules: RuleSet | None = None,
    learning_curve: list[float] | None = None,
) -> RunData:
    """Evaluate one system on one seed's held-out attack sequences.

    Every system sees the same environment stream for a given seed: the
    eval seed depends only on (config, seed), and benign traffic draws are
    independent of the actions taken.
    """
    driver = _make_driver(system, cfg, seed, qtable, rules)
    env_cfg = dataclasses.replace(cfg.env, rng_seed=seed + EVAL_SEED_OFFSET)
    env = PipelineEnv(env_cfg)
    orchestrator = HealingOrchestrator(cfg.healing.policy, cfg.healing)
    weights = RiskWeights.from_config(cfg.monitor)
    baselines_map = cfg.monitor.metric_baselines
    default_baseline = cfg.monitor.default_metric_baseline

    all_events: list[TelemetryEvent] = []
    verdicts: list[VerdictRecord] = []
    labels: list[WindowLabel] = []
    incidents: list[IncidentRecord] = []
    healing: list[dict] = []

    for episode in range(cfg.eval_episodes):
        state, events = env.reset(episode=episode)
        driver.reset_episode()
        all_events.extend(events)
        history = ActionHistory(cfg.monitor.history_len)
        signals = normalize(events, baselines_map, default_baseline)
        rho = risk_score(signals, weights)
        fv = build_feature_vector(rho, state, history)
        # Window 0 is the reset batch: observed, never scored.
        verdict = driver.verdict(0, episode, events, signals, rho, state)

        done = False
        while not done:
            action = driver.decide(fv, verdict, env.state.step)
            if cfg.observe_only:
                action = ActionId.NO_OP
            if action is ActionId.NO_OP:
                outcome = env.step(ActionId.NO_OP)
                verified = False
            else:
                record = orchestrator.execute(action, env, risk=rho)
                record.episode = episode
                healing.append(record.to_json())
                if record.executed:
                    outcome = record.outcome
                else:
                    outcome = env.step(ActionId.NO_OP)
                verified = record.verified
            history.push(action, verified)
            done = outcome.done
            all_events.extend(outcome.events)
            signals = normalize(outcome.events, baselines_map, default_baseline)
            rho = risk_score(signals, weights)
            fv = build_feature_vector(rho, outcome.state, history)
            verdict = driver.verdict(
                outcome.state.step, episode, outcome.events, signals, rho, outcome.state
            )
            verdicts.append(verdict)

        labels.extend(env.window_labels)
        incidents.extend(env.incidents)

    event_lines = event_log_lines(all_events)
    benign_lines = event_log_lines([e for e in all_events if e.background])
    run = RunData(
        system=system,
        seed=seed,
        events=all_events,
        verdicts=verdicts,
        labels=labels,
        incidents=incidents,
        healing=healing,
        event_hash=_sha256_lines(event_lines),
        benign_hash=_sha256_lines(benign_lines),
    )
    run.metrics = compute_metrics(
        all_events, verdicts, labels, incidents, healing,
        system=system, seed=seed, config_digest=config_digest(cfg),
        learning_curve=learning_curve,
    )
    return run


# ---------------------------------------------------------------------------
# Artifact I/O
# ---------------------------------------------------------------------------

def run_dir_for(out_dir: str | Path, system: str, seed: int) -> Path:
    return Path(out_dir) / system.lower() / f"seed_{seed}"


def write_run(out_dir: str | Path, cfg: ExperimentConfig, run: RunData,
              qtable_file: str | None = None) -> Path:
    rd = run_dir_for(out_dir, run.system, run.seed)
    rd.mkdir(parents=True, exist_ok=True)
    (rd / "events.jsonl").write_text(
        "".join(line + "\n" for line in event_log_lines(run.events)), encoding="utf-8")
    (rd / "events_truth.jsonl").write_text(
        "".join(line + "\n" for line in truth_sidecar_lines(run.events)), encoding="utf-8")
    (rd / "windows.jsonl").write_text(
        "".join(json.dumps(l.to_json(), sort_keys=True) + "\n" for l in run.labels),
        encoding="utf-8")
    (rd / "incidents.json").write_text(
        json.dumps([i.to_json() for i in run.incidents], indent=2), encoding="utf-8")
    (rd / "verdicts.jsonl").write_text(
        "".join(json.dumps(v.to_json(), sort_keys=True) + "\n" for v in run.verdicts),
        encoding="utf-8")
    (rd / "healing.jsonl").write_text(
        "".join(json.dumps(h, sort_keys=True) + "\n" for h in run.healing),
        encoding="utf-8")
    (rd / "metrics.json").write_text(
        json.dumps(run.metrics.to_json(), indent=2, sort_keys=True), encoding="utf-8")
    manifest = {
        "system": run.system,
        "seed": run.seed,
        "eval_seed": run.seed + EVAL_SEED_OFFSET,
        "config_digest": config_digest(cfg),
        "event_log_sha256": run.event_hash,
        "benign_stream_sha256": run.benign_hash,
        "qtable_file": qtable_file,
    }
    (rd / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True),
                                 encoding="utf-8")
    return rd


def train_autoguard(cfg: ExperimentConfig, seed: int) -> TrainResult:
    """Train the learning system for one seed of the experiment."""
    env_cfg = dataclasses.replace(cfg.env, rng_seed=seed)
    return train(env_cfg, cfg.agent, cfg.monitor, cfg.healing)


def write_training_artifacts(out_dir: str | Path, seed: int, result: TrainResult) -> tuple[Path, Path]:
    rd = run_dir_for(out_dir, SYSTEM_AUTOGUARD, seed)
    rd.mkdir(parents=True, exist_ok=True)
    qpath = rd / "qtable.csv"
    result.qtable.save_csv(str(qpath))
    cpath = rd / "learning_curve.csv"
    with open(cpath, "w", encoding="utf-8") as fh:
        fh.write("episode,total_reward,epsilon\n")
        for i, (reward, eps) in enumerate(zip(result.rewards, result.epsilons), start=1):
            fh.write(f"{i},{reward!r},{eps!r}\n")
    return qpath, cpath


def read_learning_curve(path: str | Path) -> list[float]:
    rewards = []
    with open(path, "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            rewards.append(float(line.split(",")[1]))
    return rewards


def run_experiment(cfg: ExperimentConfig, quiet: bool = True) -> list[MetricsReport]:
    """Full benchmark: train where needed, evaluate every (system, seed)
    pair on identical streams, aggregate per system, write artifacts."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(config_to_dict(cfg), indent=2, sort_keys=True), encoding="utf-8")

    if cfg.baselines.ids.rules_file:
        rules = parse_rules_file(cfg.baselines.ids.rules_file)
    else:
        rules = default_ruleset(cfg.baselines.ids)

    reports: list[MetricsReport] = []
    trained: dict[int, tuple[QTable, list[float]]] = {}
    if SYSTEM_AUTOGUARD in cfg.systems:
        for seed in cfg.seeds:
            started = time.perf_counter()
            try:
                result = train_autoguard(cfg, seed)
            except Exception as exc:
                raise RuntimeError(
                    f"training failed for system={SYSTEM_AUTOGUARD} seed={seed}: {exc}"
                ) from exc
            write_training_artifacts(out, seed, result)
            trained[seed] = (result.qtable, result.rewards)
            if not quiet:
                print(f"[train] seed={seed} episodes={len(result.rewards)} "
                      f"({time.perf_counter() - started:.1f}s)")

    for system in cfg.systems:
        per_seed = []
        for seed in cfg.seeds:
            try:
                qtable, curve = trained.get(seed, (None, None))
                run = evaluate_system(
                    cfg, system, seed,
                    qtable=qtable, rules=rules,
                    learning_curve=curve if system == SYSTEM_AUTOGUARD else None,
                )
            except Exception as exc:
                raise RuntimeError(
                    f"evaluation failed for system={system} seed={seed}: {exc}"
                ) from exc
            qfile = "qtable.csv" if system == SYSTEM_AUTOGUARD else None
            write_run(out, cfg, run, qtable_file=qfile)
            per_seed.append(run.metrics)
            if not quiet:
                print(f"[eval] system={system} seed={seed} "
                      f"da={run.metrics.da_pct:.1f}% fpr={run.metrics.fpr_pct:.1f}% "
                      f"mttr={run.metrics.mttr_mean}")
        reports.append(aggregate_reports(system, per_seed))

    (out / "metrics.json").write_text(
        json.dumps({"systems": [r.to_json() for r in reports]}, indent=2, sort_keys=True),
        encoding="utf-8")
    return reports


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

def replay_run(run_dir: str | Path, cfg: ExperimentConfig) -> None:
    """Re-run one (system, seed) from its manifest and verify the event-log
    hash and metrics report reproduce exactly. Raises IntegrityError on any
    mismatch, including a tampered log file."""
    rd = Path(run_dir)
    manifest = json.loads((rd / "run.json").read_text(encoding="utf-8"))
    digest = config_digest(cfg)
    if manifest["config_digest"] != digest:
        raise IntegrityError(
            f"{rd}: config digest {digest} does not match the recorded run"
        )
    stored_lines = (rd / "events.jsonl").read_text(encoding="utf-8").splitlines()
    stored_hash = _sha256_lines(stored_lines)
    if stored_hash != manifest["event_log_sha256"]:
        raise IntegrityError(f"{rd}: events.jsonl does not match its recorded hash")

    system = manifest["system"]
    seed = manifest["seed"]
    qtable = None
    curve = None
    if system == SYSTEM_AUTOGUARD:
        qtable = QTable.load_csv(str(rd / manifest["qtable_file"]))
        curve = read_learning_curve(rd / "learning_curve.csv")
    rules = (parse_rules_file(cfg.baselines.ids.rules_file)
             if cfg.baselines.ids.rules_file else default_ruleset(cfg.baselines.ids))
    run = evaluate_system(cfg, system, seed, qtable=qtable, rules=rules,
                          learning_curve=curve)
    if run.event_hash != manifest["event_log_sha256"]:
        raise IntegrityError(
            f"{rd}: replay produced event hash {run.event_hash}, "
            f"manifest says {manifest['event_log_sha256']}"
        )
    stored_metrics = json.loads((rd / "metrics.json").read_text(encoding="utf-8"))
    if run.metrics.to_json() != stored_metrics:
        raise IntegrityError(f"{rd}: replay produced a different metrics report")


def replay_all(out_dir: str | Path) -> list[Path]:
    """Replay every run directory under an experiment output tree."""
    out = Path(out_dir)
    cfg = load_config(json.loads((out / "config.json").read_text(encoding="utf-8")))
    run_dirs = sorted(p.parent for p in out.glob("*/seed_*/run.json"))
    if not run_dirs:
        raise IntegrityError(f"no runs found under {out}")
    for rd in run_dirs:
        replay_run(rd, cfg)
    return run_dirs
