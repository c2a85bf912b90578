# backend/utils/error_handlers.py
import click
import structlog

from utils.exceptions import DmoeError

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def exit_code_for(error):
    """Exit code for an exception escaping a command"""
    if isinstance(error, click.exceptions.Exit):
        return error.exit_code
    if isinstance(error, click.ClickException):
        return error.exit_code
    return EXIT_FAILURE


def single_line(message):
    return ' '.join(str(message).split())


def run_cli(cli, argv, obj=None):
    """
    Invoke a click group and turn every outcome into an exit code. Usage
    problems print click's usage text; failures print one line to stderr.
    """
    try:
        result = cli.main(args=list(argv), prog_name='dmoe', standalone_mode=False, obj=obj)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return exit_code_for(exc)
    except click.exceptions.Abort:
        click.echo('error: aborted', err=True)
        return EXIT_FAILURE
    except DmoeError as exc:
        logger.debug("command_error", error_type=type(exc).__name__, message=str(exc))
        click.echo(f"error: {single_line(exc)}", err=True)
        return EXIT_FAILURE
    except Exception as exc:
        logger.error("unexpected_error", error_type=type(exc).__name__, exc_info=True)
        click.echo(f"error: unexpected {type(exc).__name__}: {single_line(exc)}", err=True)
        return EXIT_FAILURE
    return result if isinstance(result, int) else EXIT_OK
