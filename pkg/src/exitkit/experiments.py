"""Ablation and sensitivity runners built on the training loop.

Variants:
  full              the complete model
  no_icl            p_trans pinned to 1: indiscriminate transfer, no
                    combination-label supervision (lambda3 forced to 0)
  no_ssn            scene embeddings removed from the scene selector input
  no_joint_loss     both cross-entropy terms and the stop gradient removed;
                    trains on the combination L1 alone
  icl_eta_zero      combination label built with eta = 0 everywhere
  icl_always_eta    combination label built as y_t + eta for all pairs
  single_domain_dnn target tower only, trained on the target loss alone
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datagen import GroundTruth, InteractionRecord
from .errors import ConfigError
from .features import FeatureField
from .labels import GciMap, label_dataset
from .model import ModelConfig, Prediction, init_params, predict
from .training import (Dataset, MetricsReport, TrainConfig, VARIANTS,
                       build_request_panel, detect_non_convergence, fit,
                       offline_metrics, predict_dataset, serving_scores,
                       simulate_exposure)


@dataclass
class EvalConfig:
    n_requests: int = 200
    top_k: int = 10
    nfr_threshold: float = 0.01
    panel_seed: int = 99


@dataclass
class ExperimentData:
    """Everything a single experiment consumes, already split and mapped."""

    train_records: list[InteractionRecord]
    test_records: list[InteractionRecord]
    gci: GciMap
    fields: list[FeatureField]
    truth: GroundTruth | None = None


def resolve_variant(variant: str, train_config: TrainConfig,
                    model_config: ModelConfig) -> tuple[TrainConfig, ModelConfig]:
    """Apply a variant's overrides to fresh config copies."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    tc = replace(train_config, variant=variant)
    mc = model_config
    if variant == "no_icl":
        tc = replace(tc, lambda3=0.0)
    elif variant == "no_ssn":
        mc = replace(model_config, include_scene_in_ssn=False)
    elif variant == "no_joint_loss":
        tc = replace(tc, lambda1=0.0, lambda2=0.0, stop_gradient=False)
    elif variant == "icl_eta_zero":
        tc = replace(tc, icl_mode="eta_zero")
    elif variant == "icl_always_eta":
        tc = replace(tc, icl_mode="always_eta")
    elif variant == "single_domain_dnn":
        tc = replace(tc, lambda2=0.0, lambda3=0.0)
    return tc, mc


def train_and_evaluate(variant: str, data: ExperimentData, train_config: TrainConfig,
                       model_config: ModelConfig, eval_config: EvalConfig | None = None):
    """Train one variant end to end and evaluate it offline (and, when
    ground truth is present, through the exposure simulation).

    Returns (report, trained params, resolved model config).
    """
    tc, mc = resolve_variant(variant, train_config, model_config)
    train_ds = Dataset(label_dataset(data.train_records, data.gci, data.fields, mode=tc.icl_mode))
    test_ds = Dataset(label_dataset(data.test_records, data.gci, data.fields, mode=tc.icl_mode))

    params = init_params(mc, seed=tc.seed)
    trajectory = fit(train_ds, tc, params, mc)
    converged = not detect_non_convergence(trajectory)

    pred = predict_dataset(test_ds.examples, params, mc,
                           force_full_transfer=tc.force_full_transfer)
    y_t = np.array([ex.y_t for ex in test_ds.examples], dtype=np.float64)
    auc_value, logloss_value = offline_metrics(pred, y_t, variant)

    ctcvr = nfr = None
    if data.truth is not None and eval_config is not None:
        panel = build_request_panel(data.test_records, eval_config.n_requests,
                                    data.truth.hour_buckets, eval_config.panel_seed)
        panel_pred = predict_dataset_panel(panel, params, mc, tc.force_full_transfer)
        scores = serving_scores(panel_pred, variant)
        ctcvr, nfr = simulate_exposure(scores, panel, data.truth,
                                       k=eval_config.top_k,
                                       nfr_threshold=eval_config.nfr_threshold)

    final = trajectory[-1] if trajectory else {"target_ce": float("nan"),
                                               "source_ce": float("nan"),
                                               "icl_l1": float("nan")}
    report = MetricsReport(
        variant=variant, seed=tc.seed,
        auc=auc_value, logloss=logloss_value,
        loss_target_ce=final["target_ce"], loss_source_ce=final["source_ce"],
        loss_icl_l1=final["icl_l1"], converged=converged,
        ctcvr_proxy=ctcvr, nfr_proxy=nfr, trajectory=trajectory,
    )
    return report, params, mc


def run_ablation(variant: str, data: ExperimentData, train_config: TrainConfig,
                 model_config: ModelConfig, eval_config: EvalConfig | None = None) -> MetricsReport:
    report, _, _ = train_and_evaluate(variant, data, train_config, model_config, eval_config)
    return report


def predict_dataset_panel(panel, params, model_config, force_full_transfer: bool) -> Prediction:
    """Chunked predictions over a request panel's flattened inputs."""
    n = panel.n_requests * panel.n_items
    chunk = 16384
    parts = []
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        ids = {name: arr[sl] for name, arr in panel.ids.items()}
        parts.append(predict(ids, params, model_config, force_full_transfer))
    return Prediction(*(np.concatenate([getattr(p, f) for p in parts])
                        for f in ("p_target", "p_source", "p_trans", "p_whole", "p_whole_clamped")))


def run_ablation_suite(variants: list[str], data: ExperimentData,
                       train_config: TrainConfig, model_config: ModelConfig,
                       seeds: list[int], eval_config: EvalConfig | None = None) -> list[MetricsReport]:
    """One report per (variant, seed), all sharing the same data and panel."""
    reports = []
    for variant in variants:
        for seed in seeds:
            tc = replace(train_config, seed=seed)
            reports.append(run_ablation(variant, data, tc, model_config, eval_config))
    return reports


def mean_by_variant(reports: list[MetricsReport], attr: str) -> dict[str, float]:
    sums: dict[str, list[float]] = {}
    for r in reports:
        value = getattr(r, attr)
        if value is not None:
            sums.setdefault(r.variant, []).append(value)
    return {v: float(np.mean(xs)) for v, xs in sums.items()}


def default_lambda_grid() -> list[tuple[float, float, float]]:
    """One-at-a-time sensitivity around the all-ones setting."""
    grid = [(1.0, 1.0, 1.0)]
    for values, position in (((0.1, 0.5, 2.0), 0), ((0.1, 0.5, 2.0), 1), ((0.1, 0.5, 2.0), 2)):
        for v in values:
            point = [1.0, 1.0, 1.0]
            point[position] = v
            grid.append(tuple(point))
    return grid


def sweep_lambda(grid: list[tuple[float, float, float]], data: ExperimentData,
                 train_config: TrainConfig, model_config: ModelConfig) -> list[dict]:
    """Fit and evaluate once per grid point with a shared seed."""
    rows = []
    for l1, l2, l3 in grid:
        tc = replace(train_config, lambda1=l1, lambda2=l2, lambda3=l3)
        report = run_ablation("full", data, tc, model_config, eval_config=None)
        rows.append({
            "lambda1": l1, "lambda2": l2, "lambda3": l3,
            "auc": report.auc, "logloss": report.logloss,
            "converged": report.converged,
            "degenerate": l1 == l2 == l3 == 0.0,
        })
    return rows
