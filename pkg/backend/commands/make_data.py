# Corpus creation command
# backend/commands/make_data.py
import click
import structlog

from config import feature_config_from
from commands import pass_state, wav_paths, read_wavs
from models import MixSpec
from services.corpus import synth_corpus, build_corpus, CorpusStore
from services.signal_processing import read_wav
from utils.decorators import config_option, seed_option, threads_option, logged_command
from utils.helpers import derive_seed

logger = structlog.get_logger(__name__)


@click.command('make-data')
@click.option('--clean-dir', type=click.Path(exists=True, file_okay=False), help='Directory of clean 16-bit mono WAVs')
@click.option('--synthetic', type=click.IntRange(min=1), default=None, help='Generate N synthetic two-regime utterances')
@click.option('--noise-file', type=click.Path(exists=True, dir_okay=False), help='Noise recording (WAV)')
@click.option('--noise-kind', type=click.Choice(['white', 'pink', 'speech_shaped', 'babble']), default=None,
              help='Noise generator used when no --noise-file is given')
@click.option('--snr', 'snr_db', type=float, default=None, help='Mixing SNR in dB')
@click.option('--context', type=click.IntRange(min=0), default=None, help='Context frames on each side')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True, help='Feature file to write')
@click.option('--resample', is_flag=True, help='Linearly resample WAVs at other rates')
@seed_option
@threads_option
@config_option
@pass_state
@logged_command('make-data')
def make_data_cmd(state, clean_dir, synthetic, noise_file, noise_kind, snr_db, context, out_path, resample,
                  seed, threads, config_file):
    """Mix clean speech with noise and write context-stacked features with oracle mask labels."""
    if (clean_dir is None) == (synthetic is None):
        raise click.UsageError('give exactly one of --clean-dir or --synthetic')
    settings = state.resolve(config_file, {
        'snr_db': snr_db, 'noise_kind': noise_kind, 'context': context, 'seed': seed,
    })
    feature_config = feature_config_from(settings)
    root_seed = int(settings['seed'])

    inputs = []
    if synthetic is not None:
        utterances = synth_corpus(synthetic, derive_seed(root_seed, 'corpus'), feature_config)
    else:
        inputs = wav_paths(clean_dir)
        utterances = read_wavs(inputs, feature_config.sample_rate, resample)

    noise = None
    kind = settings['noise_kind']
    if noise_file:
        noise = read_wav(noise_file, feature_config.sample_rate, resample)
        kind = 'file'
        inputs = inputs + [noise_file]

    spec = MixSpec(float(settings['snr_db']), kind, derive_seed(root_seed, 'mix'))
    features = build_corpus(utterances, spec, feature_config, noise=noise, threads=threads)
    provenance = {
        'seed': root_seed,
        'snr_db': spec.snr_db,
        'noise_kind': kind,
        'num_utterances': features.num_utterances,
        'synthetic': synthetic is not None,
    }
    CorpusStore.export_corpus(features, out_path, feature_config, provenance)
    state.manifest(out_path, root_seed, inputs=inputs,
                   outputs=[out_path, CorpusStore.sidecar_path(out_path)])
    click.echo(f"wrote {len(features)} frames from {features.num_utterances} utterances to {out_path}")
    return 0
