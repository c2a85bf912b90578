# backend/services/mixture.py
"""
Deep mixture of experts: sigmoid expert heads over frequency bins, a softmax
gate over experts, the mixture log-likelihood of binary mask labels, and the
two trainers (joint gradient ascent and EM).

Log-probabilities are taken from logits: log-sigmoid through logaddexp and
log-softmax through logsumexp.
"""
from contextlib import nullcontext

import numpy as np
import structlog
from scipy.special import expit, logsumexp

from models import (
    Activation, Mode, TrainerKind, DmoeParams, FeatureSet, FeaturePair, TrainingConfig,
    TrainRecord, TrainReport, AdamState
)
from services.network import init_params, forward, backward_from_logits, adam_step
from utils.exceptions import (
    ConfigurationError, ExpertIndexError, NonFiniteError, ShapeMismatchError, TrainingDivergedError
)
from utils.helpers import derive_seed, chunk_ranges

logger = structlog.get_logger(__name__)

LIKELIHOOD_CHUNK = 2048


def create_dmoe(expert_dim, gate_dim, num_bins, num_experts=2, hidden_sizes=(500, 500, 500),
                gate_hidden_sizes=None, seed=0, symmetric_gate=True) -> DmoeParams:
    """
    Experts: ReLU hidden layers, sigmoid over bins. Gate: ReLU hidden layers,
    softmax over experts. Every layer is Glorot-uniform as in `init_params`,
    except that `symmetric_gate` zeroes the gate's output layer so the initial
    gate distribution is uniform. Pass `symmetric_gate=False` for a fully
    Glorot-initialized gate.
    """
    if num_experts < 1:
        raise ConfigurationError(f"num_experts must be at least 1, got {num_experts}")
    hidden_sizes = list(hidden_sizes)
    gate_hidden_sizes = hidden_sizes if gate_hidden_sizes is None else list(gate_hidden_sizes)
    experts = [
        init_params([expert_dim, *hidden_sizes, num_bins],
                    [Activation.RELU] * len(hidden_sizes) + [Activation.SIGMOID],
                    seed=derive_seed(seed, 'expert', index))
        for index in range(num_experts)
    ]
    gate = init_params([gate_dim, *gate_hidden_sizes, num_experts],
                       [Activation.RELU] * len(gate_hidden_sizes) + [Activation.SOFTMAX],
                       seed=derive_seed(seed, 'gate'), zero_last_layer=symmetric_gate)
    return DmoeParams(gate, experts)


def expert_spp(params: DmoeParams, index, expert_input):
    if not 0 <= index < params.m:
        raise ExpertIndexError(f"expert index {index} outside 0..{params.m - 1}")
    return forward(params.experts[index], expert_input)[0]


def gate_dist(params: DmoeParams, gate_input):
    return forward(params.gate, gate_input)[0]


def final_spp(params: DmoeParams, expert_input, gate_input):
    """Gate-weighted average of the experts' SPPs; vector or batch inputs"""
    gate = gate_dist(params, gate_input)
    experts = [expert_spp(params, index, expert_input) for index in range(params.m)]
    if gate.ndim == 1:
        return sum(gate[index] * spp for index, spp in enumerate(experts))
    return sum(gate[:, index, None] * spp for index, spp in enumerate(experts))


class MixtureForward:
    """One forward pass of every network over a batch, with the pieces the likelihood needs"""

    def __init__(self, params, expert_inputs, gate_inputs, labels, dropout=0.0, mode=Mode.INFER, seed=0):
        labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
        if labels.shape[1] != params.num_bins:
            raise ShapeMismatchError(f"labels have {labels.shape[1]} bins, model has {params.num_bins}")
        self.labels = labels
        _, self.gate_cache = forward(params.gate, gate_inputs, dropout, mode,
                                     derive_seed(seed, 'dropout', 'gate'))
        self.expert_caches = [
            forward(expert, expert_inputs, dropout, mode, derive_seed(seed, 'dropout', 'expert', index))[1]
            for index, expert in enumerate(params.experts)
        ]
        gate_logits = self.gate_cache.logits
        self.gate_probs = self.gate_cache.activations[-1]
        self.log_gate = gate_logits - logsumexp(gate_logits, axis=1, keepdims=True)
        # Bernoulli log-likelihood per expert, summed over bins: b*z - log(1 + e^z)
        self.expert_log_lik = np.stack([
            np.sum(labels * cache.logits - np.logaddexp(0.0, cache.logits), axis=1)
            for cache in self.expert_caches
        ], axis=1)
        self.joint = self.log_gate + self.expert_log_lik
        self.frame_log_lik = logsumexp(self.joint, axis=1)

    def check_finite(self, frame_indices=None):
        bad = np.flatnonzero(~np.isfinite(self.frame_log_lik))
        if bad.size:
            frame = bad[0] if frame_indices is None else frame_indices[bad[0]]
            raise NonFiniteError(f"non-finite log-likelihood at frame {int(frame)}")

    def posterior(self):
        return np.exp(self.joint - self.frame_log_lik[:, None])

    def expert_spps(self):
        return [cache.activations[-1] for cache in self.expert_caches]


def _forward_features(params, features, dropout=0.0, mode=Mode.INFER, seed=0):
    if features.expert_dim != params.expert_input_dim or features.gate_dim != params.gate_input_dim:
        raise ShapeMismatchError(
            f"features ({features.expert_dim}, {features.gate_dim}) do not match model inputs "
            f"({params.expert_input_dim}, {params.gate_input_dim})"
        )
    return MixtureForward(params, features.expert_inputs, features.gate_inputs, features.labels,
                          dropout, mode, seed)


def frame_log_likelihood(params: DmoeParams, pair: FeaturePair):
    """(log p(b|x, v), gating posterior over experts, forward pass)"""
    batch = MixtureForward(params, np.atleast_2d(pair.expert_input), np.atleast_2d(pair.gate_input),
                           np.atleast_2d(pair.label))
    return float(batch.frame_log_lik[0]), batch.posterior()[0], batch


def frame_log_likelihoods(params: DmoeParams, features: FeatureSet, chunk_size=LIKELIHOOD_CHUNK):
    values = np.empty(len(features))
    for start, stop in chunk_ranges(len(features), chunk_size):
        values[start:stop] = _forward_features(params, features.take(np.arange(start, stop))).frame_log_lik
    return values


def log_likelihood(params: DmoeParams, features: FeatureSet, chunk_size=LIKELIHOOD_CHUNK):
    return float(np.sum(frame_log_likelihoods(params, features, chunk_size)))


def mean_log_likelihood(params: DmoeParams, features: FeatureSet, chunk_size=LIKELIHOOD_CHUNK):
    if len(features) == 0:
        raise ConfigurationError("cannot average a likelihood over zero frames")
    return log_likelihood(params, features, chunk_size) / len(features)


def e_step(params: DmoeParams, features: FeatureSet, chunk_size=LIKELIHOOD_CHUNK):
    """Gating posteriors of every frame under frozen parameters (frames x m)"""
    weights = np.empty((len(features), params.m))
    for start, stop in chunk_ranges(len(features), chunk_size):
        batch = _forward_features(params, features.take(np.arange(start, stop)))
        batch.check_finite(np.arange(start, stop))
        weights[start:stop] = batch.posterior()
    return weights


def weighted_gradients(params: DmoeParams, batch: MixtureForward, weights) -> DmoeParams:
    """
    Gradients of sum_t sum_i w_ti [log p(z=i|v_t) + log p(b_t|x_t, z=i)] with
    the weights held fixed.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != batch.gate_probs.shape:
        raise ShapeMismatchError(f"weights shape {weights.shape} does not match {batch.gate_probs.shape}")
    gate_logit_grad = weights - batch.gate_probs * weights.sum(axis=1, keepdims=True)
    gate_grads = backward_from_logits(params.gate, batch.gate_cache, gate_logit_grad)
    expert_grads = [
        backward_from_logits(expert, cache, weights[:, index, None] * (batch.labels - expit(cache.logits)))
        for index, (expert, cache) in enumerate(zip(params.experts, batch.expert_caches))
    ]
    return DmoeParams(gate_grads, expert_grads)


def joint_gradients(params: DmoeParams, features: FeatureSet, dropout=0.0, mode=Mode.INFER, seed=0,
                    frame_indices=None):
    """
    Gradients of the summed mixture log-likelihood (ascent direction).
    Returns (gradients, total log-likelihood, posteriors).
    """
    if len(features) == 0:
        raise ConfigurationError("joint_gradients needs a non-empty batch")
    batch = _forward_features(params, features, dropout, mode, seed)
    batch.check_finite(frame_indices)
    posterior = batch.posterior()
    grads = weighted_gradients(params, batch, posterior)
    return grads, float(np.sum(batch.frame_log_lik)), posterior


def m_step_objective(params: DmoeParams, features: FeatureSet, weights):
    """Weighted gate cross-entropy plus weighted expert Bernoulli likelihoods"""
    batch = _forward_features(params, features)
    return float(np.sum(np.asarray(weights) * batch.joint))


def m_step_gradients(params: DmoeParams, features: FeatureSet, weights, dropout=0.0, mode=Mode.INFER, seed=0):
    batch = _forward_features(params, features, dropout, mode, seed)
    batch.check_finite()
    return weighted_gradients(params, batch, weights)


def _optimizers(params, cfg: TrainingConfig):
    return [AdamState.for_params(network, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            for network in params.networks()]


def _ascend(params, grads, states, scale):
    updated, new_states = [], []
    for network, grad, state in zip(params.networks(), grads.networks(), states):
        network, state = adam_step(network, grad.scaled(scale), state, maximize=True)
        updated.append(network)
        new_states.append(state)
    return DmoeParams(updated[0], updated[1:]), new_states


def _prepare(features: FeatureSet, cfg: TrainingConfig):
    if len(features) == 0:
        raise ConfigurationError("cannot train on an empty corpus")
    if cfg.shared_gate_input:
        features = features.with_shared_gate_input()
    params = create_dmoe(features.expert_dim, features.gate_dim, features.num_bins, cfg.num_experts,
                         cfg.hidden_sizes, cfg.gate_hidden, seed=derive_seed(cfg.seed, 'init'))
    return features, params


def _minibatches(count, batch_size, seed, *labels):
    order = np.random.default_rng(derive_seed(seed, 'shuffle', *labels)).permutation(count)
    for start, stop in chunk_ranges(count, batch_size):
        yield order[start:stop]


def _check_progress(mean_ll, last_good, report, label):
    if not np.isfinite(mean_ll):
        logger.error("training_diverged", at=label, mean_log_likelihood=mean_ll)
        raise TrainingDivergedError(f"training diverged at {label}: non-finite log-likelihood",
                                    last_good=last_good, report=report)


def train_joint(features: FeatureSet, cfg: TrainingConfig, monitor=None):
    """Minibatch gradient ascent with Adam on the mixture log-likelihood"""
    features, params = _prepare(features, cfg)
    states = _optimizers(params, cfg)
    initial = mean_log_likelihood(params, features)
    report = TrainReport(TrainerKind.JOINT.value, len(features), cfg.seed, initial)
    logger.info("training_started", trainer='joint', frames=len(features), experts=cfg.num_experts,
                epochs=cfg.epochs, mean_log_likelihood=initial)

    for epoch in range(1, cfg.epochs + 1):
        last_good = params.copy()
        label = f"epoch {epoch}"
        try:
            with _tracked(monitor, 'epoch', epoch=epoch):
                for batch_index, rows in enumerate(_minibatches(len(features), cfg.batch_size, cfg.seed, epoch)):
                    grads, _, _ = joint_gradients(
                        params, features.take(rows), cfg.dropout, Mode.TRAIN,
                        seed=derive_seed(cfg.seed, 'dropout', epoch, batch_index), frame_indices=rows,
                    )
                    params, states = _ascend(params, grads, states, 1.0 / rows.size)
        except NonFiniteError as exc:
            logger.error("training_diverged", at=label, reason=str(exc))
            raise TrainingDivergedError(f"training diverged at {label}: {exc}",
                                        last_good=last_good, report=report)
        mean_ll = mean_log_likelihood(params, features)
        _check_progress(mean_ll, last_good, report, label)
        report.records.append(TrainRecord(epoch, label, mean_ll, mean_ll * len(features)))
        logger.info("epoch_finished", epoch=epoch, mean_log_likelihood=mean_ll)
    return params, report


def train_em(features: FeatureSet, cfg: TrainingConfig, monitor=None):
    """
    EM: the E-step freezes the parameters and computes gating posteriors; the
    M-step trains the gate on the posterior-weighted cross-entropy and each
    expert on its posterior-weighted Bernoulli likelihood for `inner_epochs`.
    """
    features, params = _prepare(features, cfg)
    initial = mean_log_likelihood(params, features)
    report = TrainReport(TrainerKind.EM.value, len(features), cfg.seed, initial)
    logger.info("training_started", trainer='em', frames=len(features), experts=cfg.num_experts,
                iterations=cfg.em_iterations, inner_epochs=cfg.inner_epochs, mean_log_likelihood=initial)

    for iteration in range(1, cfg.em_iterations + 1):
        last_good = params.copy()
        label = f"em iteration {iteration}"
        try:
            with _tracked(monitor, 'em_iteration', iteration=iteration):
                weights = e_step(params, features)
                # fresh optimizer per M-step; parameters carry over
                states = _optimizers(params, cfg)
                for inner in range(1, cfg.inner_epochs + 1):
                    batches = _minibatches(len(features), cfg.batch_size, cfg.seed, 'em', iteration, inner)
                    for batch_index, rows in enumerate(batches):
                        grads = m_step_gradients(
                            params, features.take(rows), weights[rows], cfg.dropout, Mode.TRAIN,
                            seed=derive_seed(cfg.seed, 'dropout', 'em', iteration, inner, batch_index),
                        )
                        params, states = _ascend(params, grads, states, 1.0 / rows.size)
        except NonFiniteError as exc:
            logger.error("training_diverged", at=label, reason=str(exc))
            raise TrainingDivergedError(f"training diverged at {label}: {exc}",
                                        last_good=last_good, report=report)
        mean_ll = mean_log_likelihood(params, features)
        _check_progress(mean_ll, last_good, report, label)
        report.records.append(TrainRecord(iteration, label, mean_ll, mean_ll * len(features)))
        logger.info("em_iteration_finished", iteration=iteration, mean_log_likelihood=mean_ll)
    return params, report


def train(features: FeatureSet, cfg: TrainingConfig, monitor=None):
    if cfg.trainer is TrainerKind.EM:
        return train_em(features, cfg, monitor)
    return train_joint(features, cfg, monitor)


def _tracked(monitor, phase, **fields):
    return monitor.track(phase, **fields) if monitor is not None else nullcontext()
