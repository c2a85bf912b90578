# Utility functions
# backend/utils/helpers.py
import hashlib
import json
import os
from datetime import datetime, date

import numpy as np
import psutil

class NumpyJSONEncoder(json.JSONEncoder):
    """JSON encoder for numpy scalars/arrays, enums and datetime objects"""
    def default(self, obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        elif isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.bool_):
            return bool(obj)
        elif isinstance(obj, (datetime, date)):
            return obj.isoformat()
        elif hasattr(obj, 'value') and hasattr(obj, 'name'):
            return obj.value
        return super().default(obj)


def dumps_json(payload):
    """Serialize with sorted keys so equal payloads give equal bytes"""
    return json.dumps(payload, cls=NumpyJSONEncoder, sort_keys=True, indent=2)


def write_json(path, payload):
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write(dumps_json(payload))
        handle.write('\n')


def derive_seed(root_seed, *labels):
    """Child seed for a labeled stochastic component, stable across runs and platforms"""
    text = '/'.join([str(root_seed)] + [str(label) for label in labels])
    digest = hashlib.sha256(text.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little') & 0x7FFFFFFFFFFFFFFF


def file_sha256(path, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()


def worker_count(requested=None):
    """Explicit request, else DMOE_THREADS, else the machine's logical CPU count"""
    if requested is not None and int(requested) > 0:
        return int(requested)
    raw = os.environ.get('DMOE_THREADS')
    if raw:
        try:
            value = int(raw)
        except ValueError:
            value = 0
        if value > 0:
            return value
    return psutil.cpu_count(logical=True) or 1


def chunk_ranges(total, chunk_size):
    """Yield (start, stop) pairs covering range(total)"""
    for start in range(0, total, chunk_size):
        yield start, min(start + chunk_size, total)
