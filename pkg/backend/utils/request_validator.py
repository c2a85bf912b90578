# backend/utils/request_validator.py
from marshmallow import Schema, fields, validate, validates_schema, ValidationError, RAISE

from utils.exceptions import ConfigurationError


class ConfigFileSchema(Schema):
    """Settings accepted in a `--config` JSON file (lowercase setting names)"""

    class Meta:
        unknown = RAISE

    # Logging
    log_level = fields.Str(validate=validate.OneOf(['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']))
    log_format = fields.Str(validate=validate.OneOf(['console', 'json']))
    log_file = fields.Str(allow_none=True)

    # Signal front end
    sample_rate = fields.Int(validate=validate.Range(min=1))
    frame_len = fields.Int(validate=validate.Range(min=2))
    hop = fields.Int(validate=validate.Range(min=1))
    window = fields.Str(validate=validate.OneOf(['hamming', 'hann', 'rectangular']))
    num_filters = fields.Int(validate=validate.Range(min=2))
    num_ceps = fields.Int(validate=validate.Range(min=1))
    context = fields.Int(validate=validate.Range(min=0))
    fmin = fields.Float(validate=validate.Range(min=0.0))
    fmax = fields.Float(allow_none=True, validate=validate.Range(min=0.0, min_inclusive=False))

    # Enhancement
    beta = fields.Float(validate=validate.Range(min=0.0))
    peak_normalize = fields.Bool()

    # Network and training
    num_experts = fields.Int(validate=validate.Range(min=1))
    hidden_sizes = fields.List(fields.Int(validate=validate.Range(min=1)), validate=validate.Length(min=1))
    gate_hidden_sizes = fields.List(fields.Int(validate=validate.Range(min=1)), allow_none=True)
    learning_rate = fields.Float(validate=validate.Range(min=0.0, min_inclusive=False))
    adam_beta1 = fields.Float(validate=validate.Range(min=0.0, max=1.0, max_inclusive=False))
    adam_beta2 = fields.Float(validate=validate.Range(min=0.0, max=1.0, max_inclusive=False))
    adam_eps = fields.Float(validate=validate.Range(min=0.0, min_inclusive=False))
    epochs = fields.Int(validate=validate.Range(min=0))
    batch_size = fields.Int(validate=validate.Range(min=1))
    dropout = fields.Float(validate=validate.Range(min=0.0, max=1.0, max_inclusive=False))
    trainer = fields.Str(validate=validate.OneOf(['joint', 'em']))
    em_iterations = fields.Int(validate=validate.Range(min=0))
    inner_epochs = fields.Int(validate=validate.Range(min=0))
    seed = fields.Int(validate=validate.Range(min=0))
    shared_gate_input = fields.Bool()

    # Corpus
    snr_db = fields.Float()
    noise_kind = fields.Str(validate=validate.OneOf(['white', 'pink', 'speech_shaped', 'babble']))
    holdout = fields.Float(validate=validate.Range(min=0.0, max=1.0, max_inclusive=False))

    # Evaluation
    snr_list = fields.List(fields.Float(), validate=validate.Length(min=1))
    ssnr_frame_len = fields.Int(validate=validate.Range(min=2))
    ssnr_hop = fields.Int(validate=validate.Range(min=1))
    ssnr_min_db = fields.Float()
    ssnr_max_db = fields.Float()
    silence_ratio = fields.Float(validate=validate.Range(min=0.0))

    slow_epoch_seconds = fields.Float(validate=validate.Range(min=0.0))

    @validates_schema
    def validate_framing(self, data, **kwargs):
        frame_len = data.get('frame_len')
        if frame_len is not None and frame_len % 2:
            raise ValidationError('frame_len must be even', field_name='frame_len')
        hop = data.get('hop')
        if frame_len is not None and hop is not None and hop > frame_len:
            raise ValidationError('hop must not exceed frame_len', field_name='hop')
        if 'num_ceps' in data and 'num_filters' in data and data['num_ceps'] > data['num_filters']:
            raise ValidationError('num_ceps must not exceed num_filters', field_name='num_ceps')
        if data.get('ssnr_min_db', -10.0) >= data.get('ssnr_max_db', 35.0):
            raise ValidationError('ssnr_min_db must be below ssnr_max_db', field_name='ssnr_min_db')


def _first_error(messages):
    """Flatten marshmallow's nested error dict into 'field: message'"""
    field_name, detail = sorted(messages.items())[0]
    while isinstance(detail, dict):
        _, detail = sorted(detail.items())[0]
    if isinstance(detail, list):
        detail = detail[0]
    return f"{field_name}: {detail}"


def validate_config_file(payload):
    if not isinstance(payload, dict):
        raise ConfigurationError("config file must hold a JSON object")
    try:
        return ConfigFileSchema().load(payload)
    except ValidationError as err:
        raise ConfigurationError(f"invalid config file setting {_first_error(err.messages)}")
