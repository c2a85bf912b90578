# Analysis commands
# backend/commands/analyze.py
import click
import numpy as np
import structlog

from config import training_config_from
from commands import pass_state, wav_paths, read_wavs
from models import NoiseKind, TrainingConfig
from services.analysis import gating_stats, expert_probe, band_profile, expert_sweep, sweep_summary
from services.corpus import CorpusStore, split_holdout, synth_corpus
from services.model_store import load_model, read_metadata
from utils.decorators import config_option, seed_option, threads_option, logged_command
from utils.helpers import derive_seed, dumps_json
from utils.validators import int_list_option, validate_fraction

logger = structlog.get_logger(__name__)

SWEEP_EVAL_UTTERANCES = 4


def _model_and_corpus(model_path, corpus_path):
    model = load_model(model_path)
    features, _, _ = CorpusStore.import_corpus(corpus_path)
    return model, features


def _training_condition(sidecar, settings):
    """SNR and noise generator the corpus was mixed with; explicit settings win"""
    provenance = sidecar.get('provenance') or {}
    explicit = set(settings.get('explicit_settings', []))
    snr_db = settings['snr_db'] if 'snr_db' in explicit else provenance.get('snr_db', settings['snr_db'])
    noise_kind = provenance.get('noise_kind')
    # recorded noise is not available here, fall back to a generator
    if 'noise_kind' in explicit or noise_kind in (None, NoiseKind.FILE.value):
        noise_kind = settings['noise_kind']
    return float(snr_db), noise_kind


@click.group('analyze')
def analyze_group():
    """Inspect gate routing, expert templates, expert-count sweeps and model files."""


@analyze_group.command('info')
@click.option('--model', 'model_path', type=click.Path(exists=True, dir_okay=False), required=True)
@config_option
@pass_state
@logged_command('analyze info')
def info_cmd(state, model_path, config_file):
    """Print a model's stored architecture, feature and training settings as JSON."""
    state.resolve(config_file)
    click.echo(dumps_json(read_metadata(model_path)))
    return 0


@analyze_group.command('gating')
@click.option('--model', 'model_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--corpus', 'corpus_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True)
@config_option
@pass_state
@logged_command('analyze gating')
def gating_cmd(state, model_path, corpus_path, out_path, config_file):
    """Per-regime gate usage and routing entropy."""
    state.resolve(config_file)
    model, features = _model_and_corpus(model_path, corpus_path)
    stats = gating_stats(model, features)
    written = state.reports.write_gating_stats(stats, out_path)
    state.manifest(out_path, None, inputs=[model_path, corpus_path], outputs=written)
    for regime, row, count in zip(stats.regimes, stats.hard_fraction, stats.frame_counts):
        click.echo(f"regime {regime} ({count} frames): hard routing " +
                   ', '.join(f"expert {i} {fraction:.3f}" for i, fraction in enumerate(row)))
    click.echo(f"routing entropy {stats.routing_entropy:.4f} nats, "
               f"mean frame entropy {stats.mean_frame_entropy:.4f} nats")
    return 0


@analyze_group.command('probe')
@click.option('--model', 'model_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--corpus', 'corpus_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True)
@click.option('--split-hz', type=click.FloatRange(min=0.0, min_open=True), default=2000.0,
              help='Low/high band boundary for band profiles')
@config_option
@pass_state
@logged_command('analyze probe')
def probe_cmd(state, model_path, corpus_path, out_path, split_hz, config_file):
    """Final SPP with every expert fed the all-ones input."""
    state.resolve(config_file)
    model, features = _model_and_corpus(model_path, corpus_path)
    probe = expert_probe(model, features)
    profile = None
    if features.has_regime_tags:
        profile = band_profile(probe.spp, features.regime_tags, model.feature_config, split_hz)
    template_profile = list(band_profile(probe.templates, np.arange(model.num_experts),
                                         model.feature_config, split_hz).values())
    written = state.reports.write_probe(probe, out_path, profile, template_profile)
    state.manifest(out_path, None, inputs=[model_path, corpus_path], outputs=written)
    for index, bands in enumerate(template_profile):
        click.echo(f"expert {index} template: low band {bands['low']:.3f}, high band {bands['high']:.3f}")
    return 0


@analyze_group.command('sweep')
@click.option('--corpus', 'corpus_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True)
@click.option('--model', 'model_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Take training settings from this model')
@click.option('--experts-list', 'm_list', callback=int_list_option, default='1,2,4', show_default=True)
@click.option('--trainer', type=click.Choice(['joint', 'em']), default=None)
@click.option('--hidden', 'hidden_sizes', callback=int_list_option, default=None)
@click.option('--epochs', type=click.IntRange(min=0), default=None)
@click.option('--batch-size', type=click.IntRange(min=1), default=None)
@click.option('--lr', 'learning_rate', type=click.FloatRange(min=0.0, min_open=True), default=None)
@click.option('--holdout', type=float, callback=validate_fraction, default=None,
              help='Fraction of utterances held out for scoring')
@click.option('--parallel', is_flag=True, help='Train the models concurrently')
@click.option('--clean-dir', type=click.Path(exists=True, file_okay=False), default=None,
              help='Clean WAVs scored for segmental SNR')
@click.option('--synthetic', type=click.IntRange(min=1), default=None,
              help=f'Score segmental SNR on N synthetic utterances (default {SWEEP_EVAL_UTTERANCES})')
@click.option('--resample', is_flag=True)
@seed_option
@threads_option
@config_option
@pass_state
@logged_command('analyze sweep')
def sweep_cmd(state, corpus_path, out_path, model_path, m_list, trainer, hidden_sizes, epochs, batch_size,
              learning_rate, holdout, parallel, clean_dir, synthetic, resample, seed, threads, config_file):
    """Train one model per expert count and compare mask quality and segmental SNR."""
    if clean_dir is not None and synthetic is not None:
        raise click.UsageError('give at most one of --clean-dir or --synthetic')
    settings = state.resolve(config_file, {
        'trainer': trainer, 'hidden_sizes': hidden_sizes, 'epochs': epochs, 'batch_size': batch_size,
        'learning_rate': learning_rate, 'holdout': holdout, 'seed': seed,
    })
    cfg = training_config_from(settings)
    inputs = [corpus_path]
    if model_path:
        base = TrainingConfig.from_dict(load_model(model_path).training)
        explicit = set(settings['explicit_settings'])
        overrides = {key: value for key, value in cfg.to_dict().items() if key in explicit}
        cfg = TrainingConfig.from_dict({**base.to_dict(), **overrides})
        inputs.append(model_path)

    features, feature_config, sidecar = CorpusStore.import_corpus(corpus_path)
    train_set, held = split_holdout(features, float(settings['holdout']), cfg.seed)

    if clean_dir is not None:
        paths = wav_paths(clean_dir)
        inputs += paths
        eval_utterances = read_wavs(paths, feature_config.sample_rate, resample)
    else:
        eval_utterances = synth_corpus(synthetic or SWEEP_EVAL_UTTERANCES,
                                       derive_seed(cfg.seed, 'sweep-eval-corpus'), feature_config)
    snr_db, noise_kind = _training_condition(sidecar, settings)

    rows = expert_sweep(train_set, m_list, cfg, eval_features=held, feature_config=feature_config,
                        eval_utterances=eval_utterances, snr_db=snr_db, noise_kind=noise_kind,
                        parallel=parallel, threads=threads)
    written = state.reports.write_sweep(rows, out_path, extra={
        'training': cfg.to_dict(),
        'scored_on': 'holdout' if held is not None else 'training',
        'ssnr_condition': {'snr_db': snr_db, 'noise_kind': noise_kind,
                           'utterances': len(eval_utterances)},
        'summary': sweep_summary(rows),
    })
    state.manifest(out_path, cfg.seed, inputs=inputs, outputs=written)
    for row in rows:
        click.echo(f"m={row.num_experts}: mask accuracy {row.mask_accuracy:.4f}, AUC {row.mask_auc:.4f}, "
                   f"SSNR {row.ssnr_db:.2f} dB, final mean log-likelihood {row.final_mean_log_likelihood:.4f}")
    return 0
