# Domain models

# backend/models.py
from dataclasses import dataclass, field, fields, replace, asdict
from typing import Iterator, List, Optional, Sequence, Tuple
import enum

import numpy as np
from numpy.typing import NDArray

from utils.exceptions import (
    ConfigurationError, ShapeMismatchError, NonFiniteError, InvalidValueError
)

FloatArray = NDArray[np.float64]
ComplexArray = NDArray[np.complex128]
IntArray = NDArray[np.int64]

# Per-frequency decisions for one frame (or a frames x bins grid of them)
SppVector = FloatArray
BinaryMask = FloatArray
GatingPosterior = FloatArray

# Natural-log floor for magnitudes (about -400 dB)
LOG_FLOOR = -46.05

NO_REGIME = -1


# Enums for activation, mode and type fields
class Activation(enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    IDENTITY = "identity"

class Mode(enum.Enum):
    TRAIN = "train"
    INFER = "infer"

class TrainerKind(enum.Enum):
    JOINT = "joint"
    EM = "em"

class NoiseKind(enum.Enum):
    WHITE = "white"
    PINK = "pink"
    SPEECH_SHAPED = "speech_shaped"
    BABBLE = "babble"
    FILE = "file"

class Regime(enum.IntEnum):
    VOICED = 0
    UNVOICED = 1


def _as_float_array(values, name, ndim=None):
    array = np.asarray(values, dtype=np.float64)
    if ndim is not None and array.ndim != ndim:
        raise ShapeMismatchError(f"{name} must be {ndim}-D, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return array


# Signal representations
@dataclass(frozen=True)
class Waveform:
    samples: FloatArray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ConfigurationError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, 'samples', _as_float_array(self.samples, 'samples', ndim=1))
        object.__setattr__(self, 'sample_rate', int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate

    def power(self):
        return float(np.mean(self.samples ** 2)) if len(self) else 0.0


@dataclass(frozen=True)
class Stft:
    frames: ComplexArray
    frame_len: int
    hop: int
    window: str
    num_samples: Optional[int] = None
    sample_rate: int = 16000

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.complex128)
        if frames.ndim != 2:
            raise ShapeMismatchError(f"STFT grid must be 2-D, got shape {frames.shape}")
        if self.frame_len <= 0 or self.frame_len % 2:
            raise ConfigurationError(f"frame_len must be even and positive, got {self.frame_len}")
        if not 0 < self.hop <= self.frame_len:
            raise ConfigurationError(f"hop must be in (0, frame_len], got {self.hop}")
        if frames.shape[1] != self.frame_len // 2 + 1:
            raise ShapeMismatchError(
                f"expected {self.frame_len // 2 + 1} bins for frame_len {self.frame_len}, "
                f"got {frames.shape[1]}"
            )
        object.__setattr__(self, 'frames', frames)

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def num_bins(self):
        return self.frames.shape[1]

    def same_framing(self, other):
        return (self.frames.shape == other.frames.shape
                and self.frame_len == other.frame_len
                and self.hop == other.hop
                and self.window == other.window)


@dataclass(frozen=True)
class LogSpectrum:
    frames: FloatArray

    def __post_init__(self):
        object.__setattr__(self, 'frames', _as_float_array(self.frames, 'log-spectrum', ndim=2))

    @property
    def num_bins(self):
        return self.frames.shape[1]


@dataclass(frozen=True)
class MfccFrames:
    frames: FloatArray

    def __post_init__(self):
        object.__setattr__(self, 'frames', _as_float_array(self.frames, 'MFCC', ndim=2))

    @property
    def num_ceps(self):
        return self.frames.shape[1]


@dataclass(frozen=True)
class CmvnStats:
    """Per-dimension utterance statistics; constant dimensions normalize to zero"""
    mean: FloatArray
    std: FloatArray
    constant: NDArray[np.bool_]

    def _safe_std(self):
        return np.where(self.constant, 1.0, self.std)

    def apply(self, frames):
        normalized = (np.asarray(frames, dtype=np.float64) - self.mean) / self._safe_std()
        normalized[:, self.constant] = 0.0
        return normalized

    def invert(self, normalized):
        return np.asarray(normalized, dtype=np.float64) * self._safe_std() + self.mean


# Configuration records
@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    frame_len: int = 512
    hop: int = 256
    window: str = "hamming"
    num_filters: int = 26
    num_ceps: int = 13
    context: int = 4
    fmin: float = 0.0
    fmax: Optional[float] = None

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")
        if self.frame_len <= 0 or self.frame_len % 2:
            raise ConfigurationError(f"frame_len must be even and positive, got {self.frame_len}")
        if not 0 < self.hop <= self.frame_len:
            raise ConfigurationError(f"hop must be in (0, frame_len], got {self.hop}")
        if self.num_filters < 2:
            raise ConfigurationError("num_filters must be at least 2")
        if not 1 <= self.num_ceps <= self.num_filters:
            raise ConfigurationError("num_ceps must be in [1, num_filters]")
        if self.context < 0:
            raise ConfigurationError("context must be non-negative")

    @property
    def num_bins(self):
        return self.frame_len // 2 + 1

    @property
    def context_width(self):
        return 2 * self.context + 1

    @property
    def expert_dim(self):
        return self.num_bins * self.context_width

    @property
    def gate_dim(self):
        return self.num_ceps * self.context_width

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        known = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in payload.items() if key in known})


@dataclass(frozen=True)
class EnhanceConfig:
    beta: float = 1.1513
    peak_normalize: bool = True

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ConfigurationError(f"beta must be a finite non-negative number, got {self.beta}")


@dataclass(frozen=True)
class EvalConfig:
    frame_len: int = 512
    hop: int = 256
    min_db: float = -10.0
    max_db: float = 35.0
    silence_ratio: float = 1e-8

    def __post_init__(self):
        if self.min_db >= self.max_db:
            raise ConfigurationError("SSNR clamp range is empty")
        if not 0 < self.hop <= self.frame_len:
            raise ConfigurationError("SSNR hop must be in (0, frame_len]")


@dataclass(frozen=True)
class TrainingConfig:
    num_experts: int = 2
    hidden_sizes: Tuple[int, ...] = (500, 500, 500)
    gate_hidden_sizes: Optional[Tuple[int, ...]] = None
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 128
    dropout: float = 0.2
    seed: int = 0
    trainer: TrainerKind = TrainerKind.JOINT
    em_iterations: int = 10
    inner_epochs: int = 3
    shared_gate_input: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'trainer', TrainerKind(self.trainer))
        object.__setattr__(self, 'hidden_sizes', tuple(int(h) for h in self.hidden_sizes))
        if self.gate_hidden_sizes is not None:
            object.__setattr__(self, 'gate_hidden_sizes', tuple(int(h) for h in self.gate_hidden_sizes))
        if self.num_experts < 1:
            raise ConfigurationError("num_experts must be at least 1")
        if any(h <= 0 for h in self.hidden_sizes + (self.gate_hidden_sizes or ())):
            raise ConfigurationError("hidden sizes must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if not 0 <= self.dropout < 1:
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.em_iterations < 0 or self.inner_epochs < 0:
            raise ConfigurationError("em_iterations and inner_epochs must be non-negative")

    @property
    def gate_hidden(self):
        return self.gate_hidden_sizes if self.gate_hidden_sizes is not None else self.hidden_sizes

    def to_dict(self):
        payload = asdict(self)
        payload['trainer'] = self.trainer.value
        payload['hidden_sizes'] = list(self.hidden_sizes)
        payload['gate_hidden_sizes'] = (
            list(self.gate_hidden_sizes) if self.gate_hidden_sizes is not None else None
        )
        return payload

    @classmethod
    def from_dict(cls, payload):
        known = {f.name for f in fields(cls)}
        values = {key: value for key, value in payload.items() if key in known}
        if values.get('gate_hidden_sizes') is not None:
            values['gate_hidden_sizes'] = tuple(values['gate_hidden_sizes'])
        if 'hidden_sizes' in values:
            values['hidden_sizes'] = tuple(values['hidden_sizes'])
        return cls(**values)


@dataclass(frozen=True)
class MixSpec:
    snr_db: float
    noise_kind: str = NoiseKind.WHITE.value
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ConfigurationError(f"snr_db must be finite, got {self.snr_db}")
        NoiseKind(self.noise_kind)


# Corpus records
@dataclass(frozen=True)
class FeaturePair:
    expert_input: FloatArray
    gate_input: FloatArray
    label: BinaryMask
    regime_tag: Optional[int] = None


@dataclass
class FeatureSet:
    """Frame-aligned feature matrices; iterating yields FeaturePair records"""
    expert_inputs: FloatArray
    gate_inputs: FloatArray
    labels: FloatArray
    regime_tags: Optional[IntArray] = None
    utterance_bounds: Optional[IntArray] = None

    def __post_init__(self):
        self.expert_inputs = np.atleast_2d(np.asarray(self.expert_inputs, dtype=np.float64))
        self.gate_inputs = np.atleast_2d(np.asarray(self.gate_inputs, dtype=np.float64))
        self.labels = np.atleast_2d(np.asarray(self.labels, dtype=np.float64))
        count = self.expert_inputs.shape[0]
        if self.gate_inputs.shape[0] != count or self.labels.shape[0] != count:
            raise ShapeMismatchError("expert inputs, gate inputs and labels must have equal frame counts")
        if not np.all((self.labels == 0.0) | (self.labels == 1.0)):
            raise InvalidValueError("labels must be binary")
        if self.regime_tags is not None:
            self.regime_tags = np.asarray(self.regime_tags, dtype=np.int64)
            if self.regime_tags.shape != (count,):
                raise ShapeMismatchError("regime_tags must hold one tag per frame")
        if self.utterance_bounds is None:
            self.utterance_bounds = np.array([0, count], dtype=np.int64)
        else:
            self.utterance_bounds = np.asarray(self.utterance_bounds, dtype=np.int64)
            if self.utterance_bounds[0] != 0 or self.utterance_bounds[-1] != count:
                raise ShapeMismatchError("utterance_bounds must start at 0 and end at the frame count")

    def __len__(self):
        return self.expert_inputs.shape[0]

    def __getitem__(self, index):
        tag = None if self.regime_tags is None else int(self.regime_tags[index])
        return FeaturePair(self.expert_inputs[index], self.gate_inputs[index], self.labels[index], tag)

    def __iter__(self) -> Iterator[FeaturePair]:
        for index in range(len(self)):
            yield self[index]

    @property
    def expert_dim(self):
        return self.expert_inputs.shape[1]

    @property
    def gate_dim(self):
        return self.gate_inputs.shape[1]

    @property
    def num_bins(self):
        return self.labels.shape[1]

    @property
    def num_utterances(self):
        return len(self.utterance_bounds) - 1

    @property
    def has_regime_tags(self):
        return self.regime_tags is not None and bool(np.all(self.regime_tags != NO_REGIME))

    def take(self, indices):
        """Frames at `indices` as one utterance (minibatches)"""
        indices = np.asarray(indices, dtype=np.int64)
        tags = None if self.regime_tags is None else self.regime_tags[indices]
        return FeatureSet(self.expert_inputs[indices], self.gate_inputs[indices],
                          self.labels[indices], tags)

    def utterances(self, indices):
        """Whole utterances, keeping their boundaries"""
        pieces = [slice(self.utterance_bounds[i], self.utterance_bounds[i + 1]) for i in indices]
        rows = np.concatenate([np.arange(p.start, p.stop) for p in pieces]) if pieces else np.array([], dtype=np.int64)
        lengths = [p.stop - p.start for p in pieces]
        subset = self.take(rows)
        subset.utterance_bounds = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        return subset

    def with_shared_gate_input(self):
        return replace(self, gate_inputs=self.expert_inputs)

    @classmethod
    def concatenate(cls, sets: Sequence["FeatureSet"]):
        if not sets:
            raise ShapeMismatchError("cannot concatenate an empty list of feature sets")
        with_tags = [s.regime_tags is not None for s in sets]
        tags = None
        if any(with_tags):
            tags = np.concatenate([
                s.regime_tags if s.regime_tags is not None else np.full(len(s), NO_REGIME, dtype=np.int64)
                for s in sets
            ])
        bounds = [0]
        for s in sets:
            offset = bounds[-1]
            bounds.extend(int(b) + offset for b in s.utterance_bounds[1:])
        return cls(
            np.concatenate([s.expert_inputs for s in sets]),
            np.concatenate([s.gate_inputs for s in sets]),
            np.concatenate([s.labels for s in sets]),
            tags,
            np.asarray(bounds, dtype=np.int64),
        )


@dataclass(frozen=True)
class SynthUtterance:
    clean: Waveform
    regime_tags: IntArray


# Network parameters
@dataclass
class DenseLayer:
    weights: FloatArray  # out x in
    bias: FloatArray
    activation: Activation

    def __post_init__(self):
        self.activation = Activation(self.activation)
        self.weights = _as_float_array(self.weights, 'weights', ndim=2)
        self.bias = _as_float_array(self.bias, 'bias', ndim=1)
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeMismatchError(
                f"bias length {self.bias.shape[0]} does not match {self.weights.shape[0]} outputs"
            )

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


@dataclass
class MlpParams:
    layers: List[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("a network needs at least one layer")
        for previous, current in zip(self.layers[:-1], self.layers[1:]):
            if previous.out_dim != current.in_dim:
                raise ShapeMismatchError(
                    f"layer output {previous.out_dim} does not chain into input {current.in_dim}"
                )

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def activations(self):
        return [layer.activation for layer in self.layers]

    def arrays(self):
        """Parameter arrays in declared order: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def with_arrays(self, arrays):
        if len(arrays) != 2 * len(self.layers):
            raise ShapeMismatchError("parameter array count does not match the layer count")
        return MlpParams([
            DenseLayer(arrays[2 * i], arrays[2 * i + 1], layer.activation)
            for i, layer in enumerate(self.layers)
        ])

    def copy(self):
        return self.with_arrays([array.copy() for array in self.arrays()])

    def scaled(self, factor):
        return self.with_arrays([array * factor for array in self.arrays()])


@dataclass
class ForwardCache:
    activations: List[FloatArray]       # [input, layer-1 output (post-dropout), ..., network output]
    pre_activations: List[FloatArray]   # affine outputs per layer; the last one holds the logits
    dropout_masks: List[Optional[FloatArray]]

    @property
    def logits(self):
        return self.pre_activations[-1]


@dataclass(frozen=True)
class AdamState:
    first_moment: List[FloatArray]
    second_moment: List[FloatArray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        zeros = [np.zeros_like(array) for array in params.arrays()]
        return cls([z.copy() for z in zeros], [z.copy() for z in zeros], 0, lr, beta1, beta2, eps)


# Mixture model
@dataclass
class DmoeParams:
    gate: MlpParams
    experts: List[MlpParams]

    def __post_init__(self):
        if not self.experts:
            raise ConfigurationError("a mixture needs at least one expert")
        if self.gate.out_dim != len(self.experts):
            raise ShapeMismatchError(
                f"gate outputs {self.gate.out_dim} probabilities for {len(self.experts)} experts"
            )
        first = self.experts[0]
        for expert in self.experts[1:]:
            if expert.in_dim != first.in_dim or expert.out_dim != first.out_dim:
                raise ShapeMismatchError("all experts must share input and output dimensions")

    @property
    def m(self):
        return len(self.experts)

    @property
    def num_bins(self):
        return self.experts[0].out_dim

    @property
    def expert_input_dim(self):
        return self.experts[0].in_dim

    @property
    def gate_input_dim(self):
        return self.gate.in_dim

    def networks(self):
        return [self.gate] + list(self.experts)

    def arrays(self):
        out = []
        for network in self.networks():
            out.extend(network.arrays())
        return out

    def copy(self):
        return DmoeParams(self.gate.copy(), [expert.copy() for expert in self.experts])


@dataclass
class DmoeModel:
    """Parameters plus the configuration they were trained under"""
    params: DmoeParams
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    training: dict = field(default_factory=dict)
    shared_gate_input: bool = False

    @property
    def num_experts(self):
        return self.params.m

    def gate_features(self, features: FeatureSet):
        return features.with_shared_gate_input() if self.shared_gate_input else features


# Reports
@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    label: str
    mean_log_likelihood: float
    total_log_likelihood: float


@dataclass
class TrainReport:
    trainer: str
    num_frames: int
    seed: int
    initial_mean_log_likelihood: float
    records: List[TrainRecord] = field(default_factory=list)

    @property
    def trace(self):
        return [self.initial_mean_log_likelihood] + [r.mean_log_likelihood for r in self.records]

    @property
    def final_mean_log_likelihood(self):
        return self.trace[-1]

    def nondecreasing_fraction(self):
        trace = self.trace
        if len(trace) < 2:
            return 1.0
        steps = np.diff(trace)
        return float(np.mean(steps >= 0.0))

    def to_dict(self):
        return {
            'trainer': self.trainer,
            'num_frames': self.num_frames,
            'seed': self.seed,
            'initial_mean_log_likelihood': self.initial_mean_log_likelihood,
            'records': [asdict(record) for record in self.records],
        }


@dataclass(frozen=True)
class UtteranceScore:
    index: int
    ssnr_db: float
    noisy_ssnr_db: float
    oracle_ssnr_db: float
    mask_accuracy: float
    mask_auc: float
    lsd: float


@dataclass
class EvalReport:
    snr_db: float
    noise_kind: str
    ssnr_db: float
    noisy_ssnr_db: float
    oracle_ssnr_db: float
    mask_accuracy: float
    mask_auc: float
    lsd: float
    utterances: List[UtteranceScore] = field(default_factory=list)

    @property
    def ssnr_gain_db(self):
        return self.ssnr_db - self.noisy_ssnr_db

    def summary(self):
        return {
            'snr_db': self.snr_db,
            'noise_kind': self.noise_kind,
            'ssnr_db': self.ssnr_db,
            'noisy_ssnr_db': self.noisy_ssnr_db,
            'oracle_ssnr_db': self.oracle_ssnr_db,
            'ssnr_gain_db': self.ssnr_gain_db,
            'mask_accuracy': self.mask_accuracy,
            'mask_auc': self.mask_auc,
            'lsd': self.lsd,
        }

    def to_dict(self):
        payload = self.summary()
        payload['utterances'] = [asdict(score) for score in self.utterances]
        return payload


@dataclass
class GatingStats:
    regimes: List[int]
    frame_counts: List[int]
    mean_gate: FloatArray        # regimes x m
    hard_fraction: FloatArray    # regimes x m
    routing_entropy: float
    mean_frame_entropy: float

    def majority_experts(self):
        return [int(np.argmax(row)) for row in self.hard_fraction]

    def to_dict(self):
        return {
            'regimes': self.regimes,
            'frame_counts': self.frame_counts,
            'mean_gate': self.mean_gate,
            'hard_fraction': self.hard_fraction,
            'routing_entropy': self.routing_entropy,
            'mean_frame_entropy': self.mean_frame_entropy,
        }


@dataclass
class ProbeResult:
    spp: FloatArray         # frames x bins
    templates: FloatArray   # m x bins, each expert's output for the all-ones input
    gate: FloatArray        # frames x m


@dataclass(frozen=True)
class SweepRow:
    num_experts: int
    mask_accuracy: float
    mask_auc: float
    final_mean_log_likelihood: float
    ssnr_db: Optional[float] = None
