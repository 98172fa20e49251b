"""Metric computation and cross-system comparison.

A decision window is one simulation step. Detection quality is scored as a
per-window confusion matrix (verdict vs hidden ground truth); recovery time
is scored per incident from onset to verified remediation (or burn-out at
the attack's duration cap); convergence time comes from the training curve
and only exists for the learning system.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

from .agent import policy_convergence_episode
from .errors import IntegrityError
from .pipeline import IncidentRecord, WindowLabel

ABSENT = None   # reported as null in JSON, "N/A" in tables


@dataclass(frozen=True)
class VerdictRecord:
    """One scored detection verdict, aligned with one window label."""

    episode: int
    step: int
    alert: bool
    score: float

    def to_json(self) -> dict:
        return {"episode": self.episode, "step": self.step,
                "alert": self.alert, "score": self.score}

    @staticmethod
    def from_json(doc: dict) -> "VerdictRecord":
        return VerdictRecord(doc["episode"], doc["step"], doc["alert"], doc["score"])


@dataclass
class MetricsReport:
    """All headline numbers for one system on one run (or aggregated)."""

    system: str
    seeds: list[int]
    config_digest: str
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    da_pct: float = 0.0
    fpr_pct: float = 0.0
    mttr_mean: float | None = ABSENT       # step-seconds
    mttr_never_recovered: int = 0
    incidents: int = 0
    pct_episodes: float | None = ABSENT    # policy convergence time
    per_seed: list["MetricsReport"] = field(default_factory=list)

    @property
    def windows(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_json(self) -> dict:
        doc = {
            "system": self.system,
            "seeds": self.seeds,
            "config_digest": self.config_digest,
            "confusion": {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn},
            "da_pct": self.da_pct,
            "fpr_pct": self.fpr_pct,
            "mttr_mean": self.mttr_mean,
            "mttr_never_recovered": self.mttr_never_recovered,
            "incidents": self.incidents,
            "pct_episodes": self.pct_episodes,
        }
        if self.per_seed:
            doc["per_seed"] = [r.to_json() for r in self.per_seed]
        return doc

    @staticmethod
    def from_json(doc: dict) -> "MetricsReport":
        conf = doc.get("confusion", {})
        report = MetricsReport(
            system=doc["system"],
            seeds=list(doc.get("seeds", [])),
            config_digest=doc.get("config_digest", ""),
            tp=conf.get("tp", 0), tn=conf.get("tn", 0),
            fp=conf.get("fp", 0), fn=conf.get("fn", 0),
            da_pct=doc["da_pct"],
            fpr_pct=doc["fpr_pct"],
            mttr_mean=doc.get("mttr_mean"),
            mttr_never_recovered=doc.get("mttr_never_recovered", 0),
            incidents=doc.get("incidents", 0),
            pct_episodes=doc.get("pct_episodes"),
        )
        report.per_seed = [MetricsReport.from_json(d) for d in doc.get("per_seed", [])]
        return report


def compute_metrics(
    events: Sequence[Any],
    verdicts: Sequence[VerdictRecord],
    labels: Sequence[WindowLabel],
    incidents: Sequence[IncidentRecord],
    healing: Sequence[dict],
    *,
    system: str = "",
    seed: int | None = None,
    config_digest: str = "",
    learning_curve: Sequence[float] | None = None,
) -> MetricsReport:
    """Score one run's logs into a MetricsReport.

    Recovery requires the attack to be gone AND, when an action cleared it,
    that action's verification to have passed; attacks that burn out at
    their duration cap count as recovered at the cap. Incidents still
    active at episode end are excluded from the MTTR mean but counted.
    """
    if len(verdicts) != len(labels):
        raise IntegrityError(
            f"verdict log has {len(verdicts)} windows but ground truth has "
            f"{len(labels)}; logs are not from the same run"
        )
    tp = tn = fp = fn = 0
    for verdict, label in zip(verdicts, labels):
        if (verdict.episode, verdict.step) != (label.episode, label.step):
            raise IntegrityError(
                f"window mismatch: verdict ({verdict.episode},{verdict.step}) vs "
                f"label ({label.episode},{label.step})"
            )
        if label.malicious:
            if verdict.alert:
                tp += 1
            else:
                fn += 1
        else:
            if verdict.alert:
                fp += 1
            else:
                tn += 1

    total = tp + tn + fp + fn
    da_pct = 100.0 * (tp + tn) / total if total else 0.0
    benign = fp + tn
    fpr_pct = 100.0 * fp / benign if benign else 0.0

    # Last scored window per episode, for end-of-episode censoring.
    last_step: dict[int, int] = {}
    for label in labels:
        last_step[label.episode] = max(last_step.get(label.episode, 0), label.step)

    # Malicious windows per incident.
    active_windows: dict[int, list[int]] = {}
    episode_of: dict[int, int] = {}
    for label in labels:
        for inc in label.incidents:
            active_windows.setdefault(inc, []).append(label.step)
            episode_of[inc] = label.episode

    verified_clears = {
        (rec.get("episode", 0), rec["step"])
        for rec in healing
        if rec.get("executed") and rec.get("verified")
    }
    clear_targets = {
        (rec.get("episode", 0), rec["step"]): rec.get("params", {}).get("incident")
        for rec in healing
        if rec.get("executed") and rec.get("verified")
    }

    recovery_times: list[float] = []
    never_recovered = 0
    for incident in incidents:
        steps = active_windows.get(incident.incident)
        if not steps:
            # Scheduled but cleared before emitting a single window; counts
            # as an immediate recovery.
            recovery_times.append(1.0)
            continue
        onset = min(steps)
        last = max(steps)
        episode = episode_of[incident.incident]
        if last >= last_step.get(episode, last):
            never_recovered += 1           # still active when the episode ended
            continue
        cleared_step = last + 1
        duration = cleared_step - onset
        if duration >= incident.duration_cap:
            recovery_times.append(float(incident.duration_cap))
            continue
        key = (episode, cleared_step)
        if key in verified_clears and clear_targets.get(key) in (incident.incident, None):
            recovery_times.append(float(duration))
        else:
            never_recovered += 1           # cleared without verified remediation

    mttr = sum(recovery_times) / len(recovery_times) if recovery_times else ABSENT
    pct = ABSENT
    if learning_curve is not None:
        pct = policy_convergence_episode(list(learning_curve))

    return MetricsReport(
        system=system,
        seeds=[seed] if seed is not None else [],
        config_digest=config_digest,
        tp=tp, tn=tn, fp=fp, fn=fn,
        da_pct=da_pct,
        fpr_pct=fpr_pct,
        mttr_mean=mttr,
        mttr_never_recovered=never_recovered,
        incidents=len(incidents),
        pct_episodes=pct,
    )


def aggregate_reports(system: str, per_seed: list[MetricsReport]) -> MetricsReport:
    """Equal-weight mean of per-seed percentages; confusion counts are
    summed. The exact count identity (DA == (TP+TN)/total) binds the
    per-seed rows; the aggregate row is a mean of ratios."""
    if not per_seed:
        raise IntegrityError("cannot aggregate zero reports")
    seeds = [s for r in per_seed for s in r.seeds]
    n = len(per_seed)
    mttr_values = [r.mttr_mean for r in per_seed if r.mttr_mean is not None]
    pct_values = [r.pct_episodes for r in per_seed if r.pct_episodes is not None]
    return MetricsReport(
        system=system,
        seeds=seeds,
        config_digest=per_seed[0].config_digest,
        tp=sum(r.tp for r in per_seed),
        tn=sum(r.tn for r in per_seed),
        fp=sum(r.fp for r in per_seed),
        fn=sum(r.fn for r in per_seed),
        da_pct=sum(r.da_pct for r in per_seed) / n,
        fpr_pct=sum(r.fpr_pct for r in per_seed) / n,
        mttr_mean=sum(mttr_values) / len(mttr_values) if mttr_values else ABSENT,
        mttr_never_recovered=sum(r.mttr_never_recovered for r in per_seed),
        incidents=sum(r.incidents for r in per_seed),
        pct_episodes=sum(pct_values) / len(pct_values) if pct_values else ABSENT,
        per_seed=per_seed,
    )


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

@dataclass
class Comparison:
    designated: str
    rows: list[dict]            # metric, per-system values, improvement

    def to_csv_lines(self) -> list[str]:
        lines = ["metric,system,value,improvement_pct"]
        for row in self.rows:
            for system, value in row["values"].items():
                improvement = ""
                if system == self.designated and row["improvement_pct"] is not None:
                    improvement = f"{row['improvement_pct']:.1f}"
                shown = "N/A" if value is None else f"{value:.4f}"
                lines.append(f"{row['metric']},{system},{shown},{improvement}")
        return lines

    def render_text(self) -> str:
        systems = list(self.rows[0]["values"].keys())
        header = ["Metric", *systems, "Improvement (%)"]
        table = [header]
        for row in self.rows:
            cells = [row["label"]]
            for system in systems:
                value = row["values"][system]
                cells.append("N/A" if value is None else row["fmt"].format(value))
            imp = row["improvement_pct"]
            cells.append("-" if imp is None else f"{imp:+.1f}")
            table.append(cells)
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        lines = []
        for i, r in enumerate(table):
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def compare(reports: list[MetricsReport], designated: str | None = None) -> Comparison:
    """Build the comparison table and the designated system's improvement
    over the best baseline on each metric.

    Detection accuracy improvement is reported relative
    ((DA_d - DA_best) / DA_best * 100); recovery time and false-positive
    rate as signed percent change, negative meaning a reduction. The
    absolute percentage-point gain for accuracy is included as its own row
    because relative and absolute readings of the same numbers differ.
    """
    if len(reports) < 2:
        raise IntegrityError("comparison needs at least two reports")
    systems = [r.system for r in reports]
    if designated is None:
        designated = "AUTOGUARD" if "AUTOGUARD" in systems else systems[0]
    if designated not in systems:
        raise IntegrityError(f"designated system '{designated}' not among reports")
    des = next(r for r in reports if r.system == designated)
    baselines = [r for r in reports if r.system != designated]

    def improvement_da() -> tuple[float | None, float | None]:
        best = max((r.da_pct for r in baselines), default=None)
        if best is None or best == 0:
            return None, None
        return (des.da_pct - best) / best * 100.0, des.da_pct - best

    def change_pct(metric: str, lower_better: bool) -> float | None:
        values = [getattr(r, metric) for r in baselines if getattr(r, metric) is not None]
        own = getattr(des, metric)
        if not values or own is None:
            return None
        best = min(values) if lower_better else max(values)
        if best == 0:
            return None
        return (own - best) / best * 100.0

    da_rel, da_abs = improvement_da()
    rows = [
        {
            "metric": "detection_accuracy",
            "label": "Detection Accuracy (%)",
            "fmt": "{:.1f}",
            "values": {r.system: r.da_pct for r in reports},
            "improvement_pct": da_rel,
        },
        {
            "metric": "detection_accuracy_abs_gain",
            "label": "DA absolute gain (pp)",
            "fmt": "{:.1f}",
            "values": {r.system: (r.da_pct if r.system == designated else None)
                       for r in reports},
            "improvement_pct": da_abs,
        },
        {
            "metric": "mttr_seconds",
            "label": "MTTR (Seconds)",
            "fmt": "{:.1f}",
            "values": {r.system: r.mttr_mean for r in reports},
            "improvement_pct": change_pct("mttr_mean", lower_better=True),
        },
        {
            "metric": "false_positive_rate",
            "label": "False Positive Rate (%)",
            "fmt": "{:.1f}",
            "values": {r.system: r.fpr_pct for r in reports},
            "improvement_pct": change_pct("fpr_pct", lower_better=True),
        },
        {
            "metric": "policy_convergence_episodes",
            "label": "Policy Convergence Time (episodes)",
            "fmt": "{:.0f}",
            "values": {r.system: r.pct_episodes for r in reports},
            "improvement_pct": None,
        },
    ]
    return Comparison(designated=designated, rows=rows)


def reports_to_json(reports: list[MetricsReport]) -> str:
    return json.dumps({"systems": [r.to_json() for r in reports]}, indent=2, sort_keys=True)


def reports_from_json(text: str) -> list[MetricsReport]:
    doc = json.loads(text)
    return [MetricsReport.from_json(d) for d in doc["systems"]]
