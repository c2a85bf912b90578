# Data validation
# backend/utils/validators.py
import math

import click


def parse_float_list(text):
    """'-5,0,5' -> [-5.0, 0.0, 5.0]"""
    values = []
    for part in str(text).split(','):
        part = part.strip()
        if not part:
            continue
        value = float(part)
        if not math.isfinite(value):
            raise ValueError(f"{part} is not a finite number")
        values.append(value)
    if not values:
        raise ValueError("empty list")
    return values


def parse_int_list(text, minimum=1):
    values = []
    for part in str(text).split(','):
        part = part.strip()
        if not part:
            continue
        value = int(part)
        if value < minimum:
            raise ValueError(f"{value} is below {minimum}")
        values.append(value)
    if not values:
        raise ValueError("empty list")
    return values


def parse_name_list(text, allowed):
    names = [part.strip() for part in str(text).split(',') if part.strip()]
    unknown = [name for name in names if name not in allowed]
    if unknown or not names:
        raise ValueError(f"expected names from {sorted(allowed)}, got {names}")
    return names


def float_list_option(ctx, param, value):
    """click callback for comma-separated float lists"""
    if value is None:
        return None
    try:
        return parse_float_list(value)
    except ValueError as exc:
        raise click.BadParameter(f"{value!r}: {exc}")


def int_list_option(ctx, param, value):
    if value is None:
        return None
    try:
        return parse_int_list(value)
    except ValueError as exc:
        raise click.BadParameter(f"{value!r}: {exc}")


def noise_kind_list_option(ctx, param, value):
    if value is None:
        return None
    try:
        return parse_name_list(value, {'white', 'pink', 'speech_shaped', 'babble'})
    except ValueError as exc:
        raise click.BadParameter(str(exc))


def validate_fraction(ctx, param, value):
    if value is not None and not 0.0 <= value < 1.0:
        raise click.BadParameter(f"must be in [0, 1), got {value}")
    return value
