# Custom decorators
# backend/utils/decorators.py
import time
from functools import wraps

import click
import structlog

logger = structlog.get_logger('commands')


def config_option(f):
    """--config: JSON settings file (flags override it, it overrides defaults)"""
    return click.option('--config', 'config_file', type=click.Path(exists=True, dir_okay=False),
                        default=None, help='JSON configuration file')(f)


def seed_option(f):
    return click.option('--seed', type=int, default=None, help='Root random seed')(f)


def threads_option(f):
    return click.option('--threads', type=click.IntRange(min=1), default=None,
                        help='Worker threads (default: DMOE_THREADS or CPU count)')(f)


def logged_command(name):
    """Log start, finish and duration of a command body"""
    def decorator(f):
        @wraps(f)
        def decorated_function(*args, **kwargs):
            start_time = time.perf_counter()
            logger.info("command_started", command=name)
            try:
                return f(*args, **kwargs)
            except Exception as exc:
                logger.info("command_failed", command=name, error=type(exc).__name__)
                raise
            finally:
                logger.info("command_finished", command=name,
                            duration=round(time.perf_counter() - start_time, 3))
        return decorated_function
    return decorator
