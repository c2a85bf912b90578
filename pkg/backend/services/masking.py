# backend/services/masking.py
import numpy as np

from utils.exceptions import ShapeMismatchError, InvalidValueError, NonFiniteError


def _vectors(*named):
    arrays = []
    for name, values in named:
        array = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"{name} contains NaN or Inf")
        arrays.append(array)
    shapes = {array.shape for array in arrays}
    if len(shapes) != 1:
        raise ShapeMismatchError(
            "length mismatch: " + ", ".join(f"{name} {array.shape}" for (name, _), array in zip(named, arrays))
        )
    return arrays


def _beta(value):
    beta = float(getattr(value, "beta", value))
    if not np.isfinite(beta) or beta < 0.0:
        raise InvalidValueError(f"beta must be a finite non-negative number, got {beta}")
    return beta


def max_mask(speech_log, noise_log):
    """Bit is 1 where speech strictly dominates noise; ties go to noise. Works per frame or per grid."""
    speech_log, noise_log = _vectors(('speech', speech_log), ('noise', noise_log))
    return (speech_log > noise_log).astype(np.float64)


def soft_attenuate(x_log, spp, beta):
    """rho*x + (1-rho)*(x-beta), written as x - (1-rho)*beta. `beta` may be an EnhanceConfig."""
    beta = _beta(beta)
    x_log, spp = _vectors(('log-spectrum', x_log), ('spp', spp))
    if np.any((spp < 0.0) | (spp > 1.0)):
        raise InvalidValueError("speech presence probabilities must lie in [0, 1]")
    return x_log - (1.0 - spp) * beta


def hard_mask_apply(x_log, mask, beta):
    beta = _beta(beta)
    x_log, mask = _vectors(('log-spectrum', x_log), ('mask', mask))
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise InvalidValueError("binary mask holds values other than 0 and 1")
    return x_log - (1.0 - mask) * beta
