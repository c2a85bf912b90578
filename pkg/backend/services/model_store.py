# backend/services/model_store.py
"""
Model checkpoints.

Layout: magic b"DMOE1", metadata length as little-endian uint64, UTF-8 JSON
metadata (sorted keys), then every parameter array as little-endian float64
in declared order (gate first, then experts; per network W0, b0, W1, b1, ...).
"""
import hashlib
import json
import os
import struct
import tempfile

import numpy as np
import structlog

from models import Activation, DenseLayer, MlpParams, DmoeParams, DmoeModel, FeatureConfig
from utils.exceptions import ModelFormatError, ModelVersionError
from utils.helpers import dumps_json

logger = structlog.get_logger(__name__)

MAGIC = b'DMOE1'
MAGIC_PREFIX = b'DMOE'
FORMAT_VERSION = 1
_LENGTH = struct.Struct('<Q')


def _network_layout(name, network: MlpParams):
    return {
        'name': name,
        'layers': [
            {'in': layer.in_dim, 'out': layer.out_dim, 'activation': layer.activation.value}
            for layer in network.layers
        ],
    }


def _metadata(model: DmoeModel, payload):
    params = model.params
    names = ['gate'] + [f'expert_{index}' for index in range(params.m)]
    return {
        'format_version': FORMAT_VERSION,
        'm': params.m,
        'num_bins': params.num_bins,
        'expert_input_dim': params.expert_input_dim,
        'gate_input_dim': params.gate_input_dim,
        'networks': [_network_layout(name, network) for name, network in zip(names, params.networks())],
        'feature_config': model.feature_config.to_dict(),
        'training': model.training,
        'shared_gate_input': model.shared_gate_input,
        'num_values': int(sum(array.size for array in params.arrays())),
        'sha256': hashlib.sha256(payload).hexdigest(),
    }


def save_model(model, path):
    """Write atomically; a DmoeParams is saved with default feature configuration"""
    if isinstance(model, DmoeParams):
        model = DmoeModel(model)
    payload = b''.join(np.ascontiguousarray(array, dtype='<f8').tobytes() for array in model.params.arrays())
    meta = dumps_json(_metadata(model, payload)).encode('utf-8')

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temp_path = tempfile.mkstemp(prefix='.dmoe-', dir=directory)
    try:
        with os.fdopen(handle, 'wb') as stream:
            stream.write(MAGIC)
            stream.write(_LENGTH.pack(len(meta)))
            stream.write(meta)
            stream.write(payload)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise
    logger.info("model_saved", path=str(path), experts=model.params.m, values=len(payload) // 8)
    return path


def _read_network(layout, values, offset):
    layers = []
    for spec in layout['layers']:
        rows, cols = int(spec['out']), int(spec['in'])
        weights = values[offset:offset + rows * cols].reshape(rows, cols)
        offset += rows * cols
        bias = values[offset:offset + rows]
        offset += rows
        layers.append(DenseLayer(weights.copy(), bias.copy(), Activation(spec['activation'])))
    return MlpParams(layers), offset


def load_model(path) -> DmoeModel:
    if not os.path.isfile(path):
        raise ModelFormatError(f"model file not found: {path}")
    with open(path, 'rb') as stream:
        blob = stream.read()

    header = blob[:len(MAGIC)]
    if header != MAGIC:
        if header.startswith(MAGIC_PREFIX):
            raise ModelVersionError(f"{path}: model format {header.decode('ascii', 'replace')!r} "
                                    f"is not supported (expected {MAGIC.decode()})")
        raise ModelFormatError(f"{path}: not a model file (bad magic header)")

    start = len(MAGIC) + _LENGTH.size
    if len(blob) < start:
        raise ModelFormatError(f"{path}: truncated header")
    (meta_length,) = _LENGTH.unpack(blob[len(MAGIC):start])
    if len(blob) < start + meta_length:
        raise ModelFormatError(f"{path}: truncated metadata")
    try:
        meta = json.loads(blob[start:start + meta_length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt metadata ({exc})")
    if meta.get('format_version') != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: metadata version {meta.get('format_version')!r} is not supported")

    payload = blob[start + meta_length:]
    try:
        expected = int(meta['num_values']) * 8
        checksum = meta['sha256']
        layouts = meta['networks']
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: metadata is missing field {exc}")
    if len(payload) != expected:
        raise ModelFormatError(f"{path}: parameter block holds {len(payload)} bytes, expected {expected}")
    if hashlib.sha256(payload).hexdigest() != checksum:
        raise ModelFormatError(f"{path}: parameter checksum mismatch")

    values = np.frombuffer(payload, dtype='<f8').astype(np.float64)
    try:
        networks, offset = [], 0
        for layout in layouts:
            network, offset = _read_network(layout, values, offset)
            networks.append(network)
        params = DmoeParams(networks[0], networks[1:])
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"{path}: parameter layout is inconsistent ({exc})")
    if offset != values.size:
        raise ModelFormatError(f"{path}: parameter layout does not cover the parameter block")

    return DmoeModel(
        params=params,
        feature_config=FeatureConfig.from_dict(meta.get('feature_config', {})),
        training=meta.get('training', {}),
        shared_gate_input=bool(meta.get('shared_gate_input', False)),
    )


def read_metadata(path):
    """Metadata block only, for reporting"""
    with open(path, 'rb') as stream:
        if stream.read(len(MAGIC)) != MAGIC:
            raise ModelFormatError(f"{path}: not a model file (bad magic header)")
        raw = stream.read(_LENGTH.size)
        if len(raw) != _LENGTH.size:
            raise ModelFormatError(f"{path}: truncated header")
        (meta_length,) = _LENGTH.unpack(raw)
        try:
            return json.loads(stream.read(meta_length).decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelFormatError(f"{path}: corrupt metadata ({exc})")
