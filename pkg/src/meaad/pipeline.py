"""End-to-end experiment pipelines: scenario -> attack -> features -> detector -> metrics."""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import io
from .attacks import AttackConfig, attack_queries
from .detector import DetectorModel, Hyperparams, hyperparams_dict, predict, train_detector, voting_labels
from .embedding import ExpertIndex, QuerySample
from .errors import DataError, InvalidConfig, SingleExpert
from .features import BLOCKS, FeatureBatch, featurize, feature_layout, select_blocks, subset_experts
from .metrics import MetricsReport, confusion_and_f1, evaluate, roc_auc
from .scenario import ScenarioConfig, generate_scenario, split_queries

log = logging.getLogger("meaad")

DEFAULT_K_VALUES = (1, 5, 10, 15, 20, 30)
DEFAULT_FEATURE_SUBSETS = (("qs",), ("ss",), ("ce",), ("qs", "ss"), ("qs", "ce"), ("ss", "ce"), BLOCKS)


def derive_seed(seed: int, stream: int) -> int:
    """Independent child seed for a named sub-stream of one master seed."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def warn_if_unbalanced(labels, what: str = "evaluation set") -> bool:
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos != n_neg:
        log.warning("%s is unbalanced: %d adversarial vs %d benign", what, n_pos, n_neg)
        return True
    return False


def common_counts_from_features(matrix, n_experts: int, k: int) -> np.ndarray:
    """Intersection size of all support sets, read off the first cross-expert row.

    An item of expert 0's support lies in every other support iff its entry is 1.
    """
    if n_experts < 2:
        raise SingleExpert("voting needs the cross-expert block (N >= 2)")
    ce = np.asarray(matrix)[:, feature_layout(n_experts, k)["ce"]]
    return np.sum(ce[:, :k] == 1.0, axis=1).astype(np.int64)


def evaluate_model(model: DetectorModel, matrix, labels, threshold: float = 0.5) -> MetricsReport:
    _, p = predict(model, np.atleast_2d(matrix), threshold)
    return evaluate(p, labels, threshold)


def evaluate_voting(common_counts, labels, threshold: int) -> MetricsReport:
    report = confusion_and_f1(voting_labels(common_counts, threshold), labels)
    # fewer shared supports means more suspicious
    report.roc_auc, report.roc_points = roc_auc(-np.asarray(common_counts, dtype=np.float64), labels)
    return report


@dataclass
class Experiment:
    """Everything the default scenario experiment produces in memory."""

    indexes: List[ExpertIndex]
    train_benign: List[QuerySample]
    train_adv: List[QuerySample]
    eval_benign: List[QuerySample]
    eval_adv: List[QuerySample]
    train_features: FeatureBatch
    eval_features: FeatureBatch
    model: Optional[DetectorModel] = None
    report: Optional[MetricsReport] = None


def prepare(
    scenario: ScenarioConfig,
    eval_per_identity: int,
    k: int,
    attack: AttackConfig,
    seed: int,
) -> Experiment:
    """Scenario, split, naive attack of both halves, features for both halves."""
    indexes, queries = generate_scenario(scenario)
    train_b, eval_b = split_queries(queries, eval_per_identity)
    train_a = attack_queries(train_b, indexes, replace(attack, seed=derive_seed(seed, 1))).queries
    eval_a = attack_queries(eval_b, indexes, replace(attack, seed=derive_seed(seed, 2))).queries
    return Experiment(
        indexes,
        train_b,
        train_a,
        eval_b,
        eval_a,
        featurize(train_b + train_a, indexes, k),
        featurize(eval_b + eval_a, indexes, k),
    )


def run_experiment(
    scenario: ScenarioConfig = ScenarioConfig(queries_per_identity=50, seed=7),
    eval_per_identity: int = 10,
    k: int = 15,
    attack: AttackConfig = AttackConfig.for_kind("naive"),
    hyperparams: Hyperparams = Hyperparams(seed=7),
    seed: int = 7,
) -> Experiment:
    exp = prepare(scenario, eval_per_identity, k, attack, seed)
    tf = exp.train_features
    exp.model = train_detector(tf.matrix, tf.labels, hyperparams, n_experts=tf.n_experts, support_size=k)
    warn_if_unbalanced(exp.eval_features.labels)
    exp.report = evaluate_model(exp.model, exp.eval_features.matrix, exp.eval_features.labels)
    return exp


def write_pipeline(out_dir, scenario: ScenarioConfig, eval_per_identity: int, k: int, attack: AttackConfig,
                   hyperparams: Hyperparams, seed: int) -> Experiment:
    """Run the full pipeline and write every artifact into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = run_experiment(scenario, eval_per_identity, k, attack, hyperparams, seed)
    for idx in exp.indexes:
        io.write_gallery(io.gallery_path(out, idx.expert_id), idx)
    io.write_queries(out / "train_benign.qry", exp.train_benign)
    io.write_queries(out / "train_adv.qry", exp.train_adv)
    io.write_queries(out / "eval_benign.qry", exp.eval_benign)
    io.write_queries(out / "eval_adv.qry", exp.eval_adv)
    for name, fb in (("train", exp.train_features), ("eval", exp.eval_features)):
        io.write_features(out / f"{name}.feat", fb.n_experts, k, fb.query_ids, fb.labels, fb.matrix)
    io.write_model(out / "model.txt", exp.model)
    io.write_loss_curve(out / "loss.csv", exp.model.loss_history)
    write_report(out / "metrics.csv", "mlp", exp.report)
    io.write_csv(out / "roc.csv", ("fpr", "tpr"), exp.report.roc_points)
    record_config(out / "run_config.json", {
        "command": "pipeline",
        "seed": seed,
        "scenario": scenario.to_dict(),
        "eval_per_identity": eval_per_identity,
        "k": k,
        "attack": attack.to_dict(),
        "hyperparams": hyperparams_dict(hyperparams),
    })
    return exp


REPORT_HEADER = ("detector", "n", "accuracy", "precision", "recall", "f1", "roc_auc", "tp", "fp", "tn", "fn")


def report_row(detector: str, r: MetricsReport) -> list:
    return [detector, r.n, r.accuracy, r.precision, r.recall, r.f1, r.roc_auc, r.tp, r.fp, r.tn, r.fn]


def write_report(path, detector: str, report: MetricsReport) -> None:
    io.write_csv(path, REPORT_HEADER, [report_row(detector, report)])


def record_config(path, config: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(config, indent=2, sort_keys=True, default=str) + "\n")


# -- ablations ---------------------------------------------------------------

ABLATION_HEADER = ("group", "experts", "k", "blocks", "d") + REPORT_HEADER[1:]


@dataclass
class AblationRow:
    group: str
    experts: tuple
    k: int
    blocks: tuple
    d: int
    report: MetricsReport

    def csv_row(self) -> list:
        return [self.group, ",".join(map(str, self.experts)), self.k, ",".join(self.blocks), self.d] + report_row(
            "", self.report
        )[1:]


def _train_eval(train_x, train_y, eval_x, eval_y, hp, n, k, blocks):
    model = train_detector(train_x, train_y, hp, n_experts=n, support_size=k, feature_blocks=blocks)
    return evaluate_model(model, eval_x, eval_y)


def ablate(
    indexes: Sequence[ExpertIndex],
    train_queries: List[QuerySample],
    eval_queries: List[QuerySample],
    hyperparams: Hyperparams,
    k: int = 15,
    expert_subsets: Sequence[Sequence[int]] = (),
    k_values: Sequence[int] = (),
    feature_subsets: Sequence[Sequence[str]] = (),
) -> List[AblationRow]:
    """One retrained detector per configuration.

    Expert subsets and K values refeaturize; feature subsets slice the full
    (all experts, ``k``) features.
    """
    rows = []
    all_experts = tuple(range(len(indexes)))

    def run(group, experts, kk, blocks, tq, eq, idx):
        ftr, fev = featurize(tq, idx, kk), featurize(eq, idx, kk)
        n = len(experts)
        present = tuple(b for b in BLOCKS if b in blocks and b in feature_layout(n, kk))
        xtr = select_blocks(ftr.matrix, n, kk, present)
        xev = select_blocks(fev.matrix, n, kk, present)
        log.info("ablation %s experts=%s k=%d blocks=%s d=%d", group, experts, kk, present, xtr.shape[1])
        report = _train_eval(xtr, ftr.labels, xev, fev.labels, hyperparams, n, kk, present)
        rows.append(AblationRow(group, tuple(experts), kk, present, xtr.shape[1], report))

    for experts in expert_subsets:
        experts = tuple(int(e) for e in experts)
        if any(e not in all_experts for e in experts):
            raise InvalidConfig(f"expert subset {experts} references unknown experts")
        tq, idx = subset_experts(train_queries, indexes, experts)
        eq, _ = subset_experts(eval_queries, indexes, experts)
        run("experts", experts, k, BLOCKS, tq, eq, idx)
    for kk in k_values:
        run("support_size", all_experts, int(kk), BLOCKS, train_queries, eval_queries, list(indexes))
    if feature_subsets:
        ftr = featurize(train_queries, indexes, k)
        fev = featurize(eval_queries, indexes, k)
        n = len(indexes)
        for blocks in feature_subsets:
            present = tuple(b for b in BLOCKS if b in blocks)
            xtr = select_blocks(ftr.matrix, n, k, present)
            xev = select_blocks(fev.matrix, n, k, present)
            log.info("ablation features blocks=%s d=%d", present, xtr.shape[1])
            report = _train_eval(xtr, ftr.labels, xev, fev.labels, hyperparams, n, k, present)
            rows.append(AblationRow("features", all_experts, k, present, xtr.shape[1], report))
    return rows


def parse_subsets(text: str, cast=int) -> List[tuple]:
    """``"0;0,1;1,2,3"`` -> ``[(0,), (0, 1), (1, 2, 3)]``."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if part:
            out.append(tuple(cast(t.strip()) for t in part.split(",") if t.strip()))
    if not out:
        raise InvalidConfig(f"no subsets in {text!r}")
    return out


def check_labels(queries: Sequence[QuerySample], what: str) -> None:
    bad = [q.query_id for q in queries if q.label not in ("benign", "adversarial")]
    if bad:
        raise DataError(f"{what}: queries {bad[:5]} have no benign/adversarial label")
