# Evaluation command
# backend/commands/evaluate.py
import click
import structlog

from config import enhance_config_from, eval_config_from
from commands import pass_state, explicit_feature_settings, wav_paths, read_wavs
from models import FeatureConfig
from services.corpus import synth_corpus
from services.enhancement import check_feature_config
from services.evaluation import evaluate_model
from services.model_store import load_model
from services.signal_processing import read_wav
from utils.decorators import config_option, seed_option, threads_option, logged_command
from utils.helpers import derive_seed
from utils.validators import float_list_option, noise_kind_list_option

logger = structlog.get_logger(__name__)


@click.command('eval')
@click.option('--model', 'model_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--clean-dir', type=click.Path(exists=True, file_okay=False), default=None)
@click.option('--synthetic', type=click.IntRange(min=1), default=None,
              help='Evaluate on N held-out synthetic utterances')
@click.option('--noise-file', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--noise-kinds', callback=noise_kind_list_option, default=None,
              help='Noise generators to evaluate, e.g. white,babble')
@click.option('--snr-list', callback=float_list_option, default=None, help='SNRs in dB, e.g. -5,0,5,10,15')
@click.option('--beta', type=click.FloatRange(min=0.0), default=None)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True, help='JSON report path')
@click.option('--resample', is_flag=True)
@seed_option
@threads_option
@config_option
@pass_state
@logged_command('eval')
def evaluate_cmd(state, model_path, clean_dir, synthetic, noise_file, noise_kinds, snr_list, beta, out_path,
                 resample, seed, threads, config_file):
    """Score a model against the noisy input and the oracle mask across SNRs and noise kinds."""
    if (clean_dir is None) == (synthetic is None):
        raise click.UsageError('give exactly one of --clean-dir or --synthetic')
    settings = state.resolve(config_file, {'snr_list': snr_list, 'beta': beta, 'seed': seed})
    model = load_model(model_path)
    pipeline = FeatureConfig.from_dict({**model.feature_config.to_dict(), **explicit_feature_settings(settings)})
    check_feature_config(model.feature_config, pipeline)
    root_seed = int(settings['seed'])

    inputs = [model_path]
    if synthetic is not None:
        utterances = synth_corpus(synthetic, derive_seed(root_seed, 'eval-corpus'), pipeline)
    else:
        paths = wav_paths(clean_dir)
        inputs += paths
        utterances = read_wavs(paths, pipeline.sample_rate, resample)
    noise = None
    if noise_file:
        noise = read_wav(noise_file, pipeline.sample_rate, resample)
        inputs.append(noise_file)

    reports = evaluate_model(
        model, utterances, settings['snr_list'], noise_kinds or [settings['noise_kind']], noise,
        seed=root_seed, enhance_cfg=enhance_config_from(settings), eval_cfg=eval_config_from(settings),
        threads=threads,
    )
    written = state.reports.write_eval_reports(reports, out_path, extra={'model': model_path})
    state.manifest(out_path, root_seed, inputs=inputs, outputs=written)
    for report in reports:
        click.echo(
            f"{report.noise_kind} {report.snr_db:+g} dB: SSNR {report.ssnr_db:.2f} dB "
            f"(noisy {report.noisy_ssnr_db:.2f}, oracle {report.oracle_ssnr_db:.2f}), "
            f"mask accuracy {report.mask_accuracy:.3f}, AUC {report.mask_auc:.3f}, LSD {report.lsd:.3f}"
        )
    return 0
