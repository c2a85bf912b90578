# backend/services/report_writer.py

import os
import platform
import sys
from datetime import datetime, timezone

import numpy as np
import pandas as pd
import structlog

from utils.helpers import write_json, file_sha256

logger = structlog.get_logger(__name__)

FLOAT_FORMAT = '%.6f'


class ReportWriter:
    """JSON reports, pandas CSV tables, SPP dumps and run manifests"""

    def __init__(self, version='1.0.0', float_format=FLOAT_FORMAT):
        self.version = version
        self.float_format = float_format

    @staticmethod
    def _prepare(path):
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        return path

    @staticmethod
    def companion_path(path, suffix, extension):
        stem, _ = os.path.splitext(path)
        return f"{stem}{suffix}{extension}"

    def write_json(self, path, payload):
        write_json(self._prepare(path), payload)
        return path

    def write_table(self, path, rows, columns=None):
        frame = pd.DataFrame(rows, columns=columns)
        frame.to_csv(self._prepare(path), index=False, float_format=self.float_format)
        return path

    def write_matrix(self, path, matrix, column_prefix='bin'):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        frame = pd.DataFrame(matrix, columns=[f"{column_prefix}_{k}" for k in range(matrix.shape[1])])
        frame.index.name = 'row'
        frame.to_csv(self._prepare(path), float_format=self.float_format)
        return path

    def write_train_report(self, report, path):
        self.write_json(path, report.to_dict())
        trace = [{'iteration': 0, 'label': 'init', 'mean_log_likelihood': report.initial_mean_log_likelihood}]
        trace += [{'iteration': r.iteration, 'label': r.label, 'mean_log_likelihood': r.mean_log_likelihood}
                  for r in report.records]
        csv_path = self.companion_path(path, '.trace', '.csv')
        self.write_table(csv_path, trace)
        return [path, csv_path]

    def write_eval_reports(self, reports, path, extra=None):
        payload = {'conditions': [report.to_dict() for report in reports]}
        payload.update(extra or {})
        self.write_json(path, payload)
        csv_path = self.companion_path(path, '', '.csv')
        self.write_table(csv_path, [report.summary() for report in reports])
        written = [path, csv_path]
        # one utterance table per SNR for plotting
        for report in reports:
            per_snr = self.companion_path(path, f".{report.noise_kind}.snr{report.snr_db:g}", '.csv')
            self.write_table(per_snr, [vars(score) for score in report.utterances])
            written.append(per_snr)
        return written

    def write_gating_stats(self, stats, path):
        self.write_json(path, stats.to_dict())
        rows = []
        for r, regime in enumerate(stats.regimes):
            for expert in range(stats.mean_gate.shape[1]):
                rows.append({
                    'regime': regime,
                    'expert': expert,
                    'frames': stats.frame_counts[r],
                    'mean_gate': stats.mean_gate[r, expert],
                    'hard_fraction': stats.hard_fraction[r, expert],
                })
        csv_path = self.companion_path(path, '', '.csv')
        self.write_table(csv_path, rows)
        return [path, csv_path]

    def write_probe(self, probe, path, profile=None, template_profile=None):
        summary = {
            'frames': int(probe.spp.shape[0]),
            'num_bins': int(probe.spp.shape[1]),
            'templates': probe.templates,
            'mean_gate': probe.gate.mean(axis=0),
            'band_profile': {str(k): v for k, v in (profile or {}).items()},
            'template_band_profile': template_profile or [],
        }
        self.write_json(path, summary)
        grid_path = self.companion_path(path, '.spp', '.csv')
        templates_path = self.companion_path(path, '.templates', '.csv')
        self.write_matrix(grid_path, probe.spp)
        self.write_matrix(templates_path, probe.templates)
        return [path, grid_path, templates_path]

    def write_sweep(self, rows, path, extra=None):
        payload = {'rows': [vars(row) for row in rows]}
        payload.update(extra or {})
        self.write_json(path, payload)
        csv_path = self.companion_path(path, '', '.csv')
        self.write_table(csv_path, [vars(row) for row in rows])
        return [path, csv_path]

    def dump_spp(self, track, path, frame_len, hop, sample_rate):
        """Frames x bins SPP matrix as little-endian float32 plus a JSON sidecar"""
        track = np.asarray(track, dtype='<f4')
        with open(self._prepare(path), 'wb') as handle:
            handle.write(track.tobytes())
        self.write_json(f"{path}.json", {
            'dtype': 'float32',
            'byte_order': 'little',
            'shape': list(track.shape),
            'frame_len': frame_len,
            'hop': hop,
            'sample_rate': sample_rate,
        })
        return [path, f"{path}.json"]

    def write_manifest(self, output_path, argv, settings, seed, inputs=(), outputs=(), extra=None):
        """`<output>.manifest.json`: everything needed to rerun the command"""
        manifest = {
            'created_at': datetime.now(timezone.utc).isoformat(),
            'version': self.version,
            'argv': list(argv),
            'config': settings,
            'seed': seed,
            'inputs': {str(p): file_sha256(p) for p in inputs if p and os.path.isfile(p)},
            'outputs': [str(p) for p in outputs],
            'python': sys.version.split()[0],
            'platform': platform.platform(),
        }
        manifest.update(extra or {})
        path = f"{output_path}.manifest.json"
        self.write_json(path, manifest)
        logger.debug("manifest_written", path=path)
        return path
