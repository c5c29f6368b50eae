"""Test-time completion, fusion, vote-based prediction, and evaluation.

Every incomplete test sample is completed multiple times (neighbors come
from the training pool, label-free), each completion is classified by
fusing the per-view opinions, and the final label is the most frequent
per-completion prediction. Ties break toward the class with the larger
belief mass summed over completions, then toward the lower class index.
Reported uncertainty is the fused uncertainty mass averaged over
completions. Samplings whose fusion collapses in total conflict are
excluded from the vote and counted separately.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from evifuse.dataset import MultiViewDataset, zscore_apply
from evifuse.evidential import SubjectiveOpinion
from evifuse.fusion import _CONFLICT_EPS, _opinion_arrays
from evifuse.imputer import CompletionSet
from evifuse.trainer import TrainedModel, _softmax, _subseed, build_completions

_SEED_TEST_IMPUTE = 201


@dataclass(frozen=True)
class PredictionResult:
    label: int
    vote_counts: np.ndarray
    mean_opinion: SubjectiveOpinion
    sampling_opinions: list
    excluded_samplings: int


def _fold_with_exclusions(beliefs: list, uncerts: list):
    """Batched left fold that marks conflicting rows instead of raising."""
    b, u = beliefs[0], uncerts[0]
    invalid = np.zeros(u.shape, dtype=bool)
    for bv, uv in zip(beliefs[1:], uncerts[1:]):
        s1 = b.sum(axis=-1)
        s2 = bv.sum(axis=-1)
        norm = 1.0 - (s1 * s2 - (b * bv).sum(axis=-1))
        bad = norm <= _CONFLICT_EPS
        invalid |= bad
        norm = np.where(bad, 1.0, norm)
        b = (b * bv + b * uv[..., None] + bv * u[..., None]) / norm[..., None]
        u = u * uv / norm
        if bad.any():
            b[bad] = 0.0
            u[bad] = 1.0
    return b, u, invalid


def _sampling_opinions(model: TrainedModel, completions: CompletionSet):
    """Fused (beliefs, uncertainty, invalid) per sampling: (S, N, K), (S, N), (S, N)."""
    s_count = completions.n_samplings
    n = completions.n_samples
    k = model.class_count
    all_b = np.empty((s_count, n, k))
    all_u = np.empty((s_count, n))
    all_bad = np.zeros((s_count, n), dtype=bool)
    for s in range(s_count):
        views = completions.completion(s)
        if model.uses_evidence:
            bs, us = [], []
            for net, x in zip(model.networks, views):
                b, u = _opinion_arrays(net.forward(x) + 1.0)
                bs.append(b)
                us.append(u)
            b, u, bad = _fold_with_exclusions(bs, us)
            all_bad[s] = bad
        else:
            probs = [_softmax(np.atleast_2d(net.forward_logits(x)))
                     for net, x in zip(model.networks, views)]
            b = np.mean(probs, axis=0)
            u = np.zeros(n)
        all_b[s] = b
        all_u[s] = u
    return all_b, all_u, all_bad


def _vote(all_b: np.ndarray, all_bad: np.ndarray):
    """Majority vote per sample over valid samplings.

    Returns (labels, vote_counts) with counts of shape (N, K); ties break
    by the larger belief mass summed over valid samplings, then by the
    lower class index.
    """
    s_count, n, k = all_b.shape
    sampling_labels = all_b.argmax(axis=-1)
    valid = ~all_bad
    counts = np.zeros((n, k), dtype=np.int64)
    for c in range(k):
        counts[:, c] = ((sampling_labels == c) & valid).sum(axis=0)
    summed_belief = (all_b * valid[..., None]).sum(axis=0)
    top = counts.max(axis=1, keepdims=True)
    tied = counts == top
    # rank ties by summed belief; zero out non-tied classes first
    tie_scores = np.where(tied, summed_belief, -np.inf)
    labels = tie_scores.argmax(axis=1)
    return labels, counts


def complete_test_data(model: TrainedModel, test: MultiViewDataset,
                       n_samplings: int | None = None, seed: int = 0,
                       pre_standardized: bool = False) -> CompletionSet:
    """Standardize and complete a test set against the model's training pool."""
    std = test if pre_standardized else zscore_apply(test, model.stats)
    cfg = model.config
    if n_samplings is not None and cfg.mode in ("uimc", "naive_ce"):
        cfg = replace(cfg, n_samplings=int(n_samplings))
    return build_completions(
        std, cfg, reference=model.train_pool, use_labels=False,
        seed=_subseed(seed, _SEED_TEST_IMPUTE),
    )


def predict_sample(model: TrainedModel, views, mask_row,
                   k: int | None = None, n_samplings: int | None = None,
                   jitter: float | None = None, seed: int = 0) -> PredictionResult:
    """Classify a single (possibly incomplete) raw sample."""
    cfg = model.config
    overrides = {}
    if k is not None:
        overrides["k"] = int(k)
    if jitter is not None:
        overrides["jitter"] = float(jitter)
    if overrides:
        cfg = replace(cfg, **overrides)
    tweaked = TrainedModel(
        networks=model.networks, optimizers=model.optimizers, stats=model.stats,
        config=cfg, loss_history=model.loss_history, train_pool=model.train_pool,
        class_count=model.class_count, epochs_run=model.epochs_run,
    )
    data = MultiViewDataset(
        [np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in views],
        np.zeros(1, dtype=np.int64),
        np.asarray(mask_row, dtype=bool).reshape(1, -1),
        model.class_count,
    )
    completions = complete_test_data(tweaked, data, n_samplings=n_samplings, seed=seed)
    all_b, all_u, all_bad = _sampling_opinions(tweaked, completions)
    labels, counts = _vote(all_b, all_bad)
    valid = ~all_bad[:, 0]
    if valid.any():
        mean_b = all_b[valid, 0].mean(axis=0)
        mean_u = float(all_u[valid, 0].mean())
    else:
        mean_b = np.zeros(model.class_count)
        mean_u = 1.0
    opinions = [
        SubjectiveOpinion(all_b[s, 0], float(all_u[s, 0]))
        for s in range(completions.n_samplings) if valid[s]
    ]
    return PredictionResult(
        label=int(labels[0]),
        vote_counts=counts[0],
        mean_opinion=SubjectiveOpinion(mean_b, mean_u),
        sampling_opinions=opinions,
        excluded_samplings=int((~valid).sum()),
    )


def evaluate(model: TrainedModel, test: MultiViewDataset,
             n_samplings: int | None = None, seed: int = 0) -> dict:
    """Accuracy and uncertainty metrics of voted predictions on a test set."""
    completions = complete_test_data(model, test, n_samplings=n_samplings, seed=seed)
    all_b, all_u, all_bad = _sampling_opinions(model, completions)
    labels, counts = _vote(all_b, all_bad)
    valid = ~all_bad
    any_valid = valid.any(axis=0)
    mean_u = np.full(test.n_samples, np.nan)
    mean_u[any_valid] = (
        (all_u * valid).sum(axis=0)[any_valid] / valid.sum(axis=0)[any_valid]
    )
    correct = labels == test.labels
    per_class = []
    for c in range(test.class_count):
        members = test.labels == c
        per_class.append(float(correct[members].mean()) if members.any() else float("nan"))

    def _mean_u(mask):
        return float(np.nanmean(mean_u[mask])) if mask.any() else float("nan")

    return {
        "accuracy": float(correct.mean()),
        "per_class_accuracy": per_class,
        "n_test": int(test.n_samples),
        "n_correct": int(correct.sum()),
        "mean_uncertainty": float(np.nanmean(mean_u)),
        "mean_uncertainty_correct": _mean_u(correct),
        "mean_uncertainty_incorrect": _mean_u(~correct),
        "excluded_samplings": int(all_bad.sum()),
        "predictions": labels.tolist(),
        "vote_counts": counts.tolist(),
        "mode": model.config.mode,
        "n_samplings": int(completions.n_samplings),
        "seed": int(seed),
    }


def stability_experiment(model: TrainedModel, test: MultiViewDataset,
                         n_repeats: int = 10, n_samplings: int | None = None,
                         seed: int = 0) -> dict:
    """Repeat prediction with fresh completion draws under a fixed mask.

    A sample counts as consistent when all repeats agree on its label.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    all_labels = np.empty((n_repeats, test.n_samples), dtype=np.int64)
    std = zscore_apply(test, model.stats)
    for r in range(n_repeats):
        completions = complete_test_data(
            model, std, n_samplings=n_samplings,
            seed=_subseed(seed, r), pre_standardized=True,
        )
        all_b, _, all_bad = _sampling_opinions(model, completions)
        all_labels[r], _ = _vote(all_b, all_bad)
    consistent = (all_labels == all_labels[0]).all(axis=0)
    return {
        "consistent_fraction": float(consistent.mean()),
        "per_sample_consistent": consistent.tolist(),
        "n_repeats": int(n_repeats),
        "class_count": int(test.class_count),
        "repeat_labels": all_labels.tolist(),
    }
