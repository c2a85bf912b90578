# Training command
# backend/commands/train.py
import click
import structlog

from config import training_config_from
from commands import pass_state
from models import DmoeModel
from services.corpus import CorpusStore
from services.mixture import train
from services.model_store import save_model
from services.training_monitor import TrainingMonitor
from utils.decorators import config_option, seed_option, logged_command
from utils.exceptions import TrainingDivergedError
from utils.validators import int_list_option

logger = structlog.get_logger(__name__)


@click.command('train')
@click.option('--corpus', 'corpus_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True, help='Model file to write')
@click.option('--trainer', type=click.Choice(['joint', 'em']), default=None)
@click.option('--experts', 'num_experts', type=click.IntRange(min=1), default=None)
@click.option('--hidden', 'hidden_sizes', callback=int_list_option, default=None, help='Hidden sizes, e.g. 64,64')
@click.option('--gate-hidden', 'gate_hidden_sizes', callback=int_list_option, default=None)
@click.option('--epochs', type=click.IntRange(min=0), default=None)
@click.option('--batch-size', type=click.IntRange(min=1), default=None)
@click.option('--lr', 'learning_rate', type=click.FloatRange(min=0.0, min_open=True), default=None)
@click.option('--dropout', type=click.FloatRange(min=0.0, max=1.0, max_open=True), default=None)
@click.option('--em-iterations', type=click.IntRange(min=0), default=None)
@click.option('--inner-epochs', type=click.IntRange(min=0), default=None)
@click.option('--shared-gate-input', is_flag=True, default=None, help='Feed the gate the expert input')
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), default=None,
              help='Training report (default: <out>.report.json)')
@seed_option
@config_option
@pass_state
@logged_command('train')
def train_cmd(state, corpus_path, out_path, trainer, num_experts, hidden_sizes, gate_hidden_sizes, epochs,
              batch_size, learning_rate, dropout, em_iterations, inner_epochs, shared_gate_input, report_path,
              seed, config_file):
    """Train a mixture of experts on a corpus by joint gradient ascent or EM."""
    settings = state.resolve(config_file, {
        'trainer': trainer, 'num_experts': num_experts, 'hidden_sizes': hidden_sizes,
        'gate_hidden_sizes': gate_hidden_sizes, 'epochs': epochs, 'batch_size': batch_size,
        'learning_rate': learning_rate, 'dropout': dropout, 'em_iterations': em_iterations,
        'inner_epochs': inner_epochs, 'shared_gate_input': shared_gate_input, 'seed': seed,
    })
    cfg = training_config_from(settings)
    features, feature_config, _ = CorpusStore.import_corpus(corpus_path)
    monitor = TrainingMonitor(float(settings['slow_epoch_seconds']))

    try:
        params, report = train(features, cfg, monitor)
    except TrainingDivergedError as exc:
        if exc.last_good is not None:
            rescue_path = f"{out_path}.last_good"
            save_model(DmoeModel(exc.last_good, feature_config, cfg.to_dict(), cfg.shared_gate_input), rescue_path)
            raise TrainingDivergedError(f"{exc}; last good parameters saved to {rescue_path}",
                                        last_good=exc.last_good, report=exc.report)
        raise

    save_model(DmoeModel(params, feature_config, cfg.to_dict(), cfg.shared_gate_input), out_path)
    report_path = report_path or f"{out_path}.report.json"
    written = state.reports.write_train_report(report, report_path)
    state.manifest(out_path, cfg.seed, inputs=[corpus_path, CorpusStore.sidecar_path(corpus_path)],
                   outputs=[out_path] + written, extra={'monitor': monitor.get_summary()})
    click.echo(
        f"{report.trainer} training: mean log-likelihood {report.initial_mean_log_likelihood:.4f} -> "
        f"{report.final_mean_log_likelihood:.4f} over {len(report.records)} "
        f"{'EM iterations' if report.trainer == 'em' else 'epochs'}; model written to {out_path}"
    )
    return 0
