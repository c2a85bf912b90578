# backend/config.py
from dotenv import load_dotenv
import json
import os

from models import FeatureConfig, TrainingConfig, EnhanceConfig, EvalConfig
from utils.exceptions import ConfigurationError

# Load .env file
load_dotenv()


def _env_bool(name, default):
    value = os.environ.get(name)
    if value is None:
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


class Config:
    """Base configuration"""
    VERSION = '1.0.0'

    # Logging
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    LOG_FORMAT = 'console'
    LOG_FILE = os.environ.get('LOG_FILE')

    # Signal front end
    SAMPLE_RATE = 16000
    FRAME_LEN = 512
    HOP = 256
    WINDOW = 'hamming'
    NUM_FILTERS = 26
    NUM_CEPS = 13
    CONTEXT = 4
    FMIN = 0.0
    FMAX = None

    # Enhancement (about 10 dB amplitude attenuation)
    BETA = 1.1513
    PEAK_NORMALIZE = True

    # Network and training
    NUM_EXPERTS = 2
    HIDDEN_SIZES = (500, 500, 500)
    GATE_HIDDEN_SIZES = None
    LEARNING_RATE = 1e-3
    ADAM_BETA1 = 0.9
    ADAM_BETA2 = 0.999
    ADAM_EPS = 1e-8
    EPOCHS = 50
    BATCH_SIZE = 128
    DROPOUT = 0.2
    TRAINER = 'joint'
    EM_ITERATIONS = 10
    INNER_EPOCHS = 3
    SEED = 0
    SHARED_GATE_INPUT = False

    # Corpus
    SNR_DB = 5.0
    NOISE_KIND = 'white'
    HOLDOUT = 0.0

    # Evaluation
    SNR_LIST = (-5.0, 0.0, 5.0, 10.0, 15.0)
    SSNR_FRAME_LEN = 512
    SSNR_HOP = 256
    SSNR_MIN_DB = -10.0
    SSNR_MAX_DB = 35.0
    SILENCE_RATIO = 1e-8

    # Training monitor
    SLOW_EPOCH_SECONDS = float(os.environ.get('DMOE_SLOW_EPOCH_SECONDS', 60.0))

    @classmethod
    def as_dict(cls):
        """Every UPPERCASE setting as a lowercase-keyed dictionary"""
        settings = {}
        for name in dir(cls):
            if name.isupper():
                value = getattr(cls, name)
                settings[name.lower()] = list(value) if isinstance(value, tuple) else value
        return settings


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'DEBUG')


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False
    LOG_FORMAT = 'json'


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    LOG_LEVEL = 'WARNING'
    HIDDEN_SIZES = (16,)
    EPOCHS = 3
    BATCH_SIZE = 32
    DROPOUT = 0.0
    EM_ITERATIONS = 2
    INNER_EPOCHS = 1


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def load_config_file(path):
    """Read and validate a JSON config file; keys are lowercase setting names"""
    from utils.request_validator import validate_config_file

    try:
        with open(path, 'r', encoding='utf-8') as handle:
            payload = json.load(handle)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc.msg} (line {exc.lineno})")
    return validate_config_file(payload)


def resolve_settings(config_name=None, config_file=None, overrides=None):
    """
    Merge settings with precedence flags > config file > class defaults.

    `overrides` holds CLI flag values; entries that are None were not given.
    """
    config_name = config_name or os.environ.get('DMOE_ENV', 'development')
    if config_name not in config:
        raise ConfigurationError(
            f"unknown configuration '{config_name}'; expected one of {sorted(config)}"
        )
    settings = config[config_name].as_dict()
    settings['threads_env'] = os.environ.get('DMOE_THREADS')
    settings['config_name'] = config_name

    explicit = set()
    if config_file:
        from_file = load_config_file(config_file)
        settings.update(from_file)
        explicit.update(from_file)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in settings:
            raise ConfigurationError(f"unknown setting '{key}'")
        settings[key] = list(value) if isinstance(value, tuple) else value
        explicit.add(key)
    settings['explicit_settings'] = sorted(explicit)
    return settings


def feature_config_from(settings):
    return FeatureConfig(
        sample_rate=int(settings['sample_rate']),
        frame_len=int(settings['frame_len']),
        hop=int(settings['hop']),
        window=settings['window'],
        num_filters=int(settings['num_filters']),
        num_ceps=int(settings['num_ceps']),
        context=int(settings['context']),
        fmin=float(settings['fmin']),
        fmax=None if settings.get('fmax') is None else float(settings['fmax']),
    )


def training_config_from(settings):
    gate_hidden = settings.get('gate_hidden_sizes')
    return TrainingConfig(
        num_experts=int(settings['num_experts']),
        hidden_sizes=tuple(settings['hidden_sizes']),
        gate_hidden_sizes=None if gate_hidden is None else tuple(gate_hidden),
        learning_rate=float(settings['learning_rate']),
        adam_beta1=float(settings['adam_beta1']),
        adam_beta2=float(settings['adam_beta2']),
        adam_eps=float(settings['adam_eps']),
        epochs=int(settings['epochs']),
        batch_size=int(settings['batch_size']),
        dropout=float(settings['dropout']),
        seed=int(settings['seed']),
        trainer=settings['trainer'],
        em_iterations=int(settings['em_iterations']),
        inner_epochs=int(settings['inner_epochs']),
        shared_gate_input=bool(settings['shared_gate_input']),
    )


def enhance_config_from(settings):
    return EnhanceConfig(beta=float(settings['beta']),
                         peak_normalize=bool(settings['peak_normalize']))


def eval_config_from(settings):
    return EvalConfig(
        frame_len=int(settings['ssnr_frame_len']),
        hop=int(settings['ssnr_hop']),
        min_db=float(settings['ssnr_min_db']),
        max_db=float(settings['ssnr_max_db']),
        silence_ratio=float(settings['silence_ratio']),
    )
