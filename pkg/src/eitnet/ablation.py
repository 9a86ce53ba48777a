"""Stage-ablation harness: retrain the heads per configuration and compare.

Each row rebuilds the pipeline with one stage replaced by its pass-through
adapter, retrains the heads on the split's training side (head input sizes
change with the toggles), and evaluates accuracy and MPJPE on the held-out
side.  The full configuration is always the first row.
"""

from __future__ import annotations

from dataclasses import dataclass

from .metrics import SplitPlan
from .pipeline import PipelineConfig, PipelineModel, StageToggles, evaluate_pipeline, with_toggles
from .training import Hyperparams, train_toy

TABLE_ROWS = (
    StageToggles(),
    StageToggles(detection=False),
    StageToggles(spatiotemporal=False),
    StageToggles(temporal=False),
)

ABLATION_CSV_HEADER = "configuration,detection,i3d,timesformer,accuracy,mpjpe,pa_mpjpe"


@dataclass
class AblationRow:
    toggles: StageToggles
    accuracy: float
    mpjpe: float
    pa_mpjpe: float

    def csv_row(self) -> str:
        t = self.toggles
        return (
            f"{t.tag()},{int(t.detection)},{int(t.spatiotemporal)},{int(t.temporal)},"
            f"{self.accuracy!r},{self.mpjpe!r},{self.pa_mpjpe!r}"
        )


def split_samples(samples, plan: SplitPlan):
    key = (lambda s: s.subject_id) if plan.axis == "subject" else (lambda s: s.view_id)
    train = [s for s in samples if key(s) in plan.train_ids]
    test = [s for s in samples if key(s) in plan.test_ids]
    return train, test


def run_ablation(
    samples,
    plan: SplitPlan,
    base_config: PipelineConfig,
    hp: Hyperparams,
    rows: tuple[StageToggles, ...] = TABLE_ROWS,
) -> list[AblationRow]:
    if not rows:
        raise ValueError("ablation needs at least one configuration row")
    train, test = split_samples(samples, plan)
    out = []
    for toggles in rows:
        model = PipelineModel(with_toggles(base_config, toggles), seed=hp.seed)
        train_toy(model, train, hp)
        metrics = evaluate_pipeline(model, test)
        out.append(
            AblationRow(
                toggles=toggles,
                accuracy=metrics["accuracy"],
                mpjpe=metrics["mpjpe"],
                pa_mpjpe=metrics["pa_mpjpe"],
            )
        )
    return out
