# backend/commands/__init__.py
import glob
import os

import click

from config import resolve_settings, Config
from services.signal_processing import read_wav
from services.report_writer import ReportWriter
from utils.exceptions import WavFormatError

FEATURE_KEYS = ('sample_rate', 'frame_len', 'hop', 'window', 'num_filters', 'num_ceps', 'context', 'fmin', 'fmax')


class CliState:
    """Per-invocation state shared by every command"""

    def __init__(self, argv=(), configure_logging=None):
        self.argv = list(argv)
        self.env = None
        self.configure_logging = configure_logging
        self.settings = None
        self.reports = ReportWriter(version=Config.VERSION)

    def resolve(self, config_file=None, overrides=None):
        self.settings = resolve_settings(self.env, config_file, overrides)
        if self.configure_logging is not None:
            self.configure_logging(self.settings)
        return self.settings

    def manifest(self, output_path, seed, inputs=(), outputs=(), extra=None):
        return self.reports.write_manifest(output_path, self.argv, self.settings, seed,
                                           inputs=inputs, outputs=outputs, extra=extra)


pass_state = click.make_pass_decorator(CliState, ensure=True)


def explicit_feature_settings(settings):
    """Feature settings the user gave through flags or a config file"""
    explicit = set(settings.get('explicit_settings', []))
    return {key: settings[key] for key in FEATURE_KEYS if key in explicit}


def wav_paths(path):
    """A single WAV file, or every *.wav in a directory (sorted)"""
    if os.path.isdir(path):
        paths = sorted(glob.glob(os.path.join(path, '*.wav')))
        if not paths:
            raise WavFormatError(f"no .wav files in {path}")
        return paths
    return [path]


def read_wavs(paths, sample_rate, resample=False):
    return [read_wav(path, sample_rate, resample) for path in paths]
