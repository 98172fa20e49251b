"""AutoGuard: a self-healing security layer for simulated CI/CD pipelines.

A seedable pipeline-under-attack simulator, a risk-score security monitor,
a tabular Q-learning remediation agent with a playbook orchestrator, two
classical detection baselines, and a benchmark harness that scores
detection accuracy, mean time to recovery, false-positive rate, and policy
convergence time.
"""

from .catalog import ActionId, AttackKind, EventSource, StageId
from .config import (
    AgentConfig,
    ApprovalPolicy,
    BaselineConfig,
    ExperimentConfig,
    HealingConfig,
    MonitorConfig,
    PipelineConfig,
    RewardCoefficients,
    load_config,
    load_config_file,
    zero_day_differential_config,
)
from .pipeline import EnvState, PipelineEnv, TelemetryEvent
from .monitor import (
    DetectionVerdict,
    FeatureVector,
    RiskWeights,
    SignalTriple,
    build_feature_vector,
    detect,
    normalize,
    risk_score,
)
from .agent import (
    DiscreteState,
    QTable,
    ReplayBuffer,
    Transition,
    compute_reward,
    discretize,
    q_update,
    replay_sample,
    select_action,
    train,
)
from .healing import (
    HealingOrchestrator,
    HealingRecord,
    ImpactEstimate,
    Playbook,
    approve,
    execute_healing,
    map_action_to_playbook,
    mitigation_utility,
    simulate_impact,
    verify_outcome,
)
from .baselines import (
    IsolationForest,
    PcaModel,
    RuleSet,
    baseline_remediate,
    default_ruleset,
    ids_match,
    iforest_fit,
    iforest_score,
    pca_fit,
    pca_residual,
    tadm_detect,
)
from .metrics import MetricsReport, compare, compute_metrics
from .harness import evaluate_system, replay_run, run_experiment

__version__ = "0.1.0"
