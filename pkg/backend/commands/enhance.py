# Enhancement command
# backend/commands/enhance.py
import os

import click
import structlog

from config import enhance_config_from
from commands import pass_state, explicit_feature_settings, wav_paths, read_wavs
from models import FeatureConfig
from services.enhancement import enhance_batch, check_feature_config
from services.model_store import load_model
from services.signal_processing import write_wav
from utils.decorators import config_option, threads_option, logged_command

logger = structlog.get_logger(__name__)


@click.command('enhance')
@click.option('--model', 'model_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--in', 'in_path', type=click.Path(exists=True), required=True, help='Noisy WAV file or directory')
@click.option('--out', 'out_path', type=click.Path(), required=True, help='Output WAV file or directory')
@click.option('--beta', type=click.FloatRange(min=0.0), default=None, help='Attenuation in natural-log units')
@click.option('--no-peak-normalize', is_flag=True, help='Keep samples outside [-1, 1] (clipped on write)')
@click.option('--dump-spp', 'dump_path', type=click.Path(), default=None,
              help='Write the per-frame SPP matrix (float32 + JSON sidecar)')
@click.option('--resample', is_flag=True, help='Linearly resample WAVs at other rates')
@threads_option
@config_option
@pass_state
@logged_command('enhance')
def enhance_cmd(state, model_path, in_path, out_path, beta, no_peak_normalize, dump_path, resample, threads,
                config_file):
    """Enhance noisy speech with a trained model."""
    settings = state.resolve(config_file, {
        'beta': beta, 'peak_normalize': False if no_peak_normalize else None,
    })
    cfg = enhance_config_from(settings)
    model = load_model(model_path)
    pipeline = FeatureConfig.from_dict({**model.feature_config.to_dict(), **explicit_feature_settings(settings)})
    check_feature_config(model.feature_config, pipeline)

    paths = wav_paths(in_path)
    batch = len(paths) > 1 or os.path.isdir(in_path)
    outputs = ([os.path.join(out_path, os.path.basename(p)) for p in paths] if batch else [out_path])
    results = enhance_batch(model, read_wavs(paths, pipeline.sample_rate, resample), cfg, pipeline, threads)

    written = []
    for source, target, (enhanced, spp_track) in zip(paths, outputs, results):
        written.append(write_wav(target, enhanced))
        if dump_path:
            dump = os.path.join(dump_path, os.path.basename(source) + '.spp') if batch else dump_path
            written.extend(state.reports.dump_spp(spp_track, dump, pipeline.frame_len, pipeline.hop,
                                                  pipeline.sample_rate))
        logger.info("file_enhanced", source=source, target=target, frames=spp_track.shape[0],
                    seconds=round(enhanced.duration, 3))

    state.manifest(out_path.rstrip(os.sep), None, inputs=[model_path] + paths, outputs=written)
    click.echo(f"enhanced {len(paths)} file(s) into {out_path}")
    return 0
