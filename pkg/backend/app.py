# Command-line application
# backend/app.py
import logging
import os
import sys
from logging.handlers import RotatingFileHandler

import click
import structlog

from config import config, Config
from commands import CliState
from commands.make_data import make_data_cmd
from commands.train import train_cmd
from commands.enhance import enhance_cmd
from commands.evaluate import evaluate_cmd
from commands.analyze import analyze_group
from utils.error_handlers import run_cli, EXIT_USAGE

SHARED_PROCESSORS = [
    structlog.contextvars.merge_contextvars,
    structlog.stdlib.add_log_level,
    structlog.stdlib.add_logger_name,
    structlog.processors.TimeStamper(fmt='iso'),
]


def setup_logging(settings):
    """structlog on top of stdlib logging; stderr always, rotating file when LOG_FILE is set"""
    level = getattr(logging, str(settings.get('log_level', 'INFO')).upper(), logging.INFO)
    if settings.get('log_format') == 'json':
        renderer = structlog.processors.JSONRenderer(sort_keys=True)
    else:
        renderer = structlog.dev.ConsoleRenderer(colors=False)

    formatter = structlog.stdlib.ProcessorFormatter(
        processors=[structlog.stdlib.ProcessorFormatter.remove_processors_meta,
                    structlog.processors.format_exc_info, renderer],
        foreign_pre_chain=SHARED_PROCESSORS,
    )
    handlers = [logging.StreamHandler(sys.stderr)]
    log_file = settings.get('log_file')
    if log_file:
        directory = os.path.dirname(os.path.abspath(log_file))
        os.makedirs(directory, exist_ok=True)
        handlers.append(RotatingFileHandler(log_file, maxBytes=10240000, backupCount=10))

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    for handler in handlers:
        handler.setFormatter(formatter)
        root.addHandler(handler)
    root.setLevel(level)

    structlog.configure(
        processors=SHARED_PROCESSORS + [
            structlog.stdlib.filter_by_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )


def create_cli():
    """Application factory: the click group with every subcommand registered"""

    @click.group(name='dmoe', help='Deep mixture-of-experts speech enhancement toolkit.')
    @click.option('--env', type=click.Choice(sorted(name for name in config if name != 'default')),
                  default=None, help='Configuration profile (default: DMOE_ENV or development)')
    @click.version_option(Config.VERSION, prog_name='dmoe')
    @click.pass_context
    def cli(ctx, env):
        state = ctx.ensure_object(CliState)
        state.env = env
        # profile-level logging until a command resolves its full settings
        if state.configure_logging is not None:
            profile = env or os.environ.get('DMOE_ENV', 'development')
            state.configure_logging(config.get(profile, config['default']).as_dict())

    cli.add_command(make_data_cmd)
    cli.add_command(train_cmd)
    cli.add_command(enhance_cmd)
    cli.add_command(evaluate_cmd)
    cli.add_command(analyze_group)
    return cli


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    cli = create_cli()
    if not argv:
        with click.Context(cli, info_name='dmoe') as ctx:
            click.echo(ctx.get_usage(), err=True)
            click.echo("Try 'dmoe --help' for help.", err=True)
        return EXIT_USAGE
    return run_cli(cli, argv, obj=CliState(argv, setup_logging))


if __name__ == '__main__':
    sys.exit(main())
