# backend/services/analysis.py
"""Model introspection: per-regime gate routing, the all-ones expert probe and expert-count sweeps."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import structlog
from scipy.stats import entropy

from models import (
    DmoeModel, DmoeParams, FeatureSet, FeatureConfig, TrainingConfig, GatingStats, ProbeResult, SweepRow
)
from services.evaluation import mask_metrics, evaluate_condition
from services.mixture import gate_dist, expert_spp, final_spp, train
from utils.exceptions import ConfigurationError, MissingRegimeTagsError
from utils.helpers import chunk_ranges, worker_count

logger = structlog.get_logger(__name__)

CHUNK = 2048

# accuracy band around m=2 that larger expert counts are expected to stay in
EXTRA_EXPERT_TOLERANCE = 0.02


def _as_model(model):
    return model if isinstance(model, DmoeModel) else DmoeModel(model)


def _gate_inputs(model: DmoeModel, features: FeatureSet):
    return model.gate_features(features).gate_inputs


def gate_matrix(params: DmoeParams, gate_inputs):
    gates = np.empty((gate_inputs.shape[0], params.m))
    for start, stop in chunk_ranges(gate_inputs.shape[0], CHUNK):
        gates[start:stop] = gate_dist(params, gate_inputs[start:stop])
    return gates


def gating_stats(model, features: FeatureSet) -> GatingStats:
    """Mean gate probability and hard-routing fraction per regime, plus routing entropies"""
    model = _as_model(model)
    params = model.params
    if not features.has_regime_tags:
        raise MissingRegimeTagsError("gating statistics need per-frame regime tags on every frame")
    gates = gate_matrix(params, _gate_inputs(model, features))
    winners = np.argmax(gates, axis=1)

    regimes = sorted(int(r) for r in np.unique(features.regime_tags))
    mean_gate, hard_fraction, counts = [], [], []
    for regime in regimes:
        rows = features.regime_tags == regime
        counts.append(int(np.sum(rows)))
        mean_gate.append(gates[rows].mean(axis=0))
        hard_fraction.append(np.bincount(winners[rows], minlength=params.m) / counts[-1])

    stats = GatingStats(
        regimes=regimes,
        frame_counts=counts,
        mean_gate=np.array(mean_gate),
        hard_fraction=np.array(hard_fraction),
        routing_entropy=float(entropy(gates.mean(axis=0))),
        mean_frame_entropy=float(np.mean(entropy(gates, axis=1))),
    )
    logger.info("gating_stats", regimes=regimes, majority=stats.majority_experts(),
                routing_entropy=stats.routing_entropy)
    return stats


def expert_probe(model, features: FeatureSet) -> ProbeResult:
    """
    Final SPP with every expert fed the all-ones vector and the gate fed the
    real gate features. Frames differ only through the gate.
    """
    model = _as_model(model)
    params = model.params
    ones = np.ones(params.expert_input_dim)
    templates = np.stack([expert_spp(params, index, ones) for index in range(params.m)])
    gates = gate_matrix(params, _gate_inputs(model, features))
    return ProbeResult(spp=gates @ templates, templates=templates, gate=gates)


def band_profile(spp, regime_tags, feature_config: FeatureConfig, split_hz=2000.0):
    """Mean SPP below and above `split_hz` per regime"""
    spp = np.asarray(spp, dtype=np.float64)
    if regime_tags is None:
        raise MissingRegimeTagsError("band profiles need per-frame regime tags")
    freqs = np.arange(spp.shape[1]) * feature_config.sample_rate / feature_config.frame_len
    low = freqs < split_hz
    profile = {}
    for regime in sorted(int(r) for r in np.unique(regime_tags)):
        rows = spp[np.asarray(regime_tags) == regime]
        profile[regime] = {'low': float(rows[:, low].mean()), 'high': float(rows[:, ~low].mean())}
    return profile


def predict_spp(model, features: FeatureSet):
    model = _as_model(model)
    params = model.params
    gate_inputs = _gate_inputs(model, features)
    spp = np.empty((len(features), params.num_bins))
    for start, stop in chunk_ranges(len(features), CHUNK):
        spp[start:stop] = final_spp(params, features.expert_inputs[start:stop], gate_inputs[start:stop])
    return spp


def expert_sweep(features: FeatureSet, m_list, cfg: TrainingConfig, eval_features: FeatureSet = None,
                 feature_config: FeatureConfig = None, eval_utterances=None, snr_db=5.0, noise_kind='white',
                 parallel=False, threads=None):
    """
    Train one model per expert count with identical seeds and budgets and
    score its masks on `eval_features` (the training set when omitted).
    Segmental SNR is added when `eval_utterances` are given.
    """
    m_list = [int(m) for m in m_list]
    if not m_list or any(m < 1 for m in m_list):
        raise ConfigurationError(f"expert counts must be positive, got {m_list}")
    eval_features = features if eval_features is None else eval_features

    def run(m):
        point_cfg = replace(cfg, num_experts=m)
        params, report = train(features, point_cfg)
        model = DmoeModel(params, feature_config or FeatureConfig(), point_cfg.to_dict(), cfg.shared_gate_input)
        accuracy, auc = mask_metrics(predict_spp(model, eval_features), eval_features.labels)
        ssnr = None
        if eval_utterances:
            ssnr = evaluate_condition(model, eval_utterances, snr_db, noise_kind, seed=cfg.seed,
                                      threads=1).ssnr_db
        logger.info("sweep_point", experts=m, mask_accuracy=accuracy, mask_auc=auc,
                    final_mean_log_likelihood=report.final_mean_log_likelihood, ssnr_db=ssnr)
        return SweepRow(m, accuracy, auc, report.final_mean_log_likelihood, ssnr)

    if parallel:
        with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
            return list(pool.map(run, m_list))
    return [run(m) for m in m_list]


def sweep_summary(rows, tolerance=EXTRA_EXPERT_TOLERANCE):
    """
    Mask-accuracy gain from one to two experts, and for every larger count
    whether it stays within `tolerance` of the two-expert accuracy.
    """
    by_count = {row.num_experts: row for row in rows}
    summary = {'tolerance': tolerance, 'gain_one_to_two': None, 'within_tolerance_of_two': {}}
    if 2 not in by_count:
        return summary
    two = by_count[2].mask_accuracy
    if 1 in by_count:
        summary['gain_one_to_two'] = float(two - by_count[1].mask_accuracy)
    for m in sorted(count for count in by_count if count > 2):
        summary['within_tolerance_of_two'][str(m)] = bool(abs(by_count[m].mask_accuracy - two) <= tolerance)
    return summary
