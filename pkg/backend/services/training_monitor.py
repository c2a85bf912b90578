# backend/services/training_monitor.py

import time
from contextlib import contextmanager
from datetime import datetime, timezone

import psutil
import structlog


class TrainingMonitor:
    """Track epoch timings and process resources during training runs"""

    def __init__(self, slow_epoch_seconds=60.0):
        self.logger = structlog.get_logger('training')
        self.slow_epoch_seconds = slow_epoch_seconds
        self.metrics = {
            'phases': {},
            'slow_phases': [],
            'system_resources': []
        }

    @contextmanager
    def track(self, phase, **fields):
        """Time one epoch / EM iteration; slow ones are logged as warnings"""
        start_time = time.perf_counter()
        try:
            yield
        finally:
            duration = time.perf_counter() - start_time
            self._record_phase(phase, duration, fields)

    def _record_phase(self, phase, duration, fields):
        if phase not in self.metrics['phases']:
            self.metrics['phases'][phase] = {
                'count': 0,
                'total_duration': 0.0,
                'avg_duration': 0.0,
                'max_duration': 0.0
            }

        metrics = self.metrics['phases'][phase]
        metrics['count'] += 1
        metrics['total_duration'] += duration
        metrics['avg_duration'] = metrics['total_duration'] / metrics['count']
        metrics['max_duration'] = max(metrics['max_duration'], duration)

        if duration > self.slow_epoch_seconds:
            self.metrics['slow_phases'].append({'phase': phase, 'duration': duration, **fields})
            self.logger.warning("slow_phase", phase=phase, duration=round(duration, 3), **fields)

    def collect_system_metrics(self):
        process = psutil.Process()
        memory = psutil.virtual_memory()
        metrics = {
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'process_rss_bytes': process.memory_info().rss,
            'cpu_percent': process.cpu_percent(interval=None),
            'memory_percent': memory.percent,
            'memory_available': memory.available,
        }
        self.metrics['system_resources'].append(metrics)

        if memory.percent > 85:
            self.logger.warning("high_memory_usage", memory_percent=memory.percent)
        return metrics

    def get_summary(self):
        """Timing/resource summary for run manifests (never for deterministic reports)"""
        return {
            'phases': self.metrics['phases'],
            'slow_phases': self.metrics['slow_phases'],
            'system_resources': self.collect_system_metrics(),
        }
