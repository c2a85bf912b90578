# backend/tests/test_model_store.py

import numpy as np
import pytest

from models import DmoeModel, FeatureConfig
from services.mixture import create_dmoe
from services.model_store import save_model, load_model, read_metadata, MAGIC
from utils.exceptions import ModelFormatError, ModelVersionError


@pytest.fixture
def model(small_config):
    params = create_dmoe(small_config.expert_dim, small_config.gate_dim, small_config.num_bins,
                         num_experts=3, hidden_sizes=(8, 4), gate_hidden_sizes=(5,), seed=7,
                         symmetric_gate=False)
    return DmoeModel(params, small_config, training={'trainer': 'joint', 'seed': 7})


@pytest.fixture
def saved(tmp_path, model):
    path = tmp_path / 'models' / 'dmoe.bin'
    save_model(model, str(path))
    return path


class TestModelStore:
    def test_round_trip_is_exact(self, saved, model):
        """Test every parameter reloads bit-identically with its configuration"""
        loaded = load_model(str(saved))
        assert loaded.num_experts == 3
        assert loaded.feature_config == model.feature_config
        assert loaded.training == {'trainer': 'joint', 'seed': 7}
        gate = loaded.params.gate
        assert [gate.in_dim] + [layer.out_dim for layer in gate.layers] == [18, 5, 3]
        for a, b in zip(loaded.params.arrays(), model.params.arrays()):
            np.testing.assert_array_equal(a, b)
        assert [layer.activation for layer in loaded.params.experts[0].layers] == \
            [layer.activation for layer in model.params.experts[0].layers]

    def test_bare_params_get_default_features(self, tmp_path):
        path = str(tmp_path / 'bare.bin')
        save_model(create_dmoe(4, 3, 2, num_experts=2, hidden_sizes=(3,), seed=1), path)
        assert load_model(path).feature_config == FeatureConfig()

    def test_saving_is_deterministic(self, tmp_path, model):
        first, second = tmp_path / 'a.bin', tmp_path / 'b.bin'
        save_model(model, str(first))
        save_model(model, str(second))
        assert first.read_bytes() == second.read_bytes()

    def test_metadata(self, saved):
        meta = read_metadata(str(saved))
        assert meta['m'] == 3
        assert meta['num_bins'] == 65
        assert meta['format_version'] == 1
        assert saved.read_bytes().startswith(MAGIC)

    def test_truncated_file(self, saved):
        """Test truncation anywhere is a format error"""
        data = saved.read_bytes()
        for cut in (3, 9, 40, len(data) - 8):
            saved.write_bytes(data[:cut])
            with pytest.raises(ModelFormatError):
                load_model(str(saved))

    def test_flipped_parameter_byte(self, saved):
        data = bytearray(saved.read_bytes())
        data[-3] ^= 0xFF
        saved.write_bytes(bytes(data))
        with pytest.raises(ModelFormatError):
            load_model(str(saved))

    def test_bad_magic_and_version(self, saved):
        """Test foreign files and other format versions are told apart"""
        data = saved.read_bytes()
        saved.write_bytes(b'XXXXX' + data[5:])
        with pytest.raises(ModelFormatError):
            load_model(str(saved))
        saved.write_bytes(b'DMOE2' + data[5:])
        with pytest.raises(ModelVersionError):
            load_model(str(saved))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelFormatError):
            load_model(str(tmp_path / 'absent.bin'))
