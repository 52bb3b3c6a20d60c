# src/ppisp/cli.py
"""CLI commands for ppisp."""

import dataclasses
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import click
from dotenv import load_dotenv

from ppisp.bench import CONTROLLER_BUDGET_MS, PIPELINE_BUDGET_MS, run_bench
from ppisp.calib.calibrate import calibrate as run_calibration
from ppisp.config import AWB_MODES, PRESETS, RunConfig, load_config
from ppisp.controller.network import (
    ControllerWeights,
    controller_forward,
    load_controllers,
    save_controllers,
)
from ppisp.controller.train import frame_metadata, train_controller
from ppisp.core.image_io import load_pfm, save_pfm, save_png8
from ppisp.dataset import Dataset, FrameRecord
from ppisp.errors import (
    DatasetError,
    MetadataMismatchError,
    NumericalFailure,
    PfmFormatError,
)
from ppisp.evaluation.analysis import analyze_params
from ppisp.evaluation.curves import curve_differences, curves_table, plot_curves, write_curves
from ppisp.evaluation.report import EvalReport, evaluate_renders
from ppisp.grad.fd_check import DEFAULT_STEP, DEFAULT_TOLERANCE, fd_check, random_config
from ppisp.isp.edits import apply_edits, parse_edit
from ppisp.isp.params import FrameParams, SensorParams
from ppisp.isp.pipeline import PipelineTrace, run_pipeline
from ppisp.isp.precondition import default_blocks
from ppisp.isp.serialize import ParamSet, load_params, save_params
from ppisp.synth.capture import load_truth, synthesize

# Load .env file
load_dotenv()

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
)
logger = logging.getLogger(__name__)


class UsageFailure(click.ClickException):
    """Bad configuration or conflicting options."""

    exit_code = 2


class IoFailure(click.ClickException):
    """Missing or unreadable input, or unwritable output."""

    exit_code = 3


class NumericFailure(click.ClickException):
    """Optimization diverged."""

    exit_code = 4


@contextmanager
def _errors():
    """Translate library errors into exit codes."""
    try:
        yield
    except click.ClickException:
        raise
    except NumericalFailure as e:
        raise NumericFailure(str(e)) from e
    except (DatasetError, PfmFormatError, OSError) as e:
        raise IoFailure(str(e)) from e
    except ValueError as e:
        raise UsageFailure(str(e)) from e


def _run_config(ctx) -> RunConfig:
    with _errors():
        return load_config(ctx.obj['config_path'])


def _override(section, **flags):
    """Replace config fields by the flags that were given (flag wins)."""
    given = {k: v for k, v in flags.items() if v is not None}
    if not given:
        return section
    try:
        return dataclasses.replace(section, **given)
    except ValueError as e:
        raise UsageFailure(str(e)) from e


@click.group()
@click.option('--config', '-c', default=None, help='Path to config file (YAML or JSON)')
@click.option('--verbose', '-v', is_flag=True, help='Enable verbose output')
@click.pass_context
def cli(ctx, config, verbose):
    """ppisp: differentiable camera ISP calibration toolkit."""
    ctx.ensure_object(dict)
    ctx.obj['config_path'] = config
    ctx.obj['verbose'] = verbose

    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


@cli.command()
@click.option('--out', '-o', required=True, type=click.Path(), help='Dataset directory to write')
@click.option('--seed', type=int, help='Random seed')
@click.option('--frames', type=int, help='Number of frames')
@click.option('--width', type=int, help='Image width')
@click.option('--height', type=int, help='Image height')
@click.option('--preset', type=click.Choice(PRESETS), help='Capture script preset')
@click.option('--sensors', type=int, help='Number of sensors (frames assigned round-robin)')
@click.option('--noise', 'noise_sigma', type=float, help='Gaussian noise sigma on observed images')
@click.option('--awb-mode', type=click.Choice(AWB_MODES), help='White-balance behaviour')
@click.pass_context
def synth(ctx, out, seed, frames, width, height, preset, sensors, noise_sigma, awb_mode):
    """Generate a synthetic dataset with known ground truth."""
    config = _run_config(ctx)
    synth_config = _override(config.synth, seed=seed, frames=frames, width=width,
                             height=height, preset=preset, sensors=sensors,
                             noise_sigma=noise_sigma, awb_mode=awb_mode)
    with _errors():
        root = synthesize(out, synth_config, config.threads)
        with Dataset(root) as dataset:
            n_train = len(dataset.select('train'))
            n_test = len(dataset.select('test'))
    click.echo(f"Wrote {n_train + n_test} frames ({n_train} train, {n_test} test) to {root}")


@cli.command()
@click.option('--dataset', 'dataset_dir', required=True, type=click.Path(),
              help='Dataset directory')
@click.option('--out', '-o', required=True, type=click.Path(),
              help='Output directory for params.json and trace.csv')
@click.option('--iterations', type=int, help='Optimizer iterations')
@click.option('--batch-size', type=int, help='Frames per iteration (0 = all)')
@click.option('--seed', type=int, help='Random seed')
@click.option('--split', type=click.Choice(['train', 'all']), help='Frames to calibrate on')
@click.pass_context
def calibrate(ctx, dataset_dir, out, iterations, batch_size, seed, split):
    """Jointly fit sensor and per-frame parameters to a dataset."""
    config = _run_config(ctx)
    calib_config = _override(config.calibration, iterations=iterations,
                             batch_size=batch_size, seed=seed, split=split)
    out = Path(out)
    with _errors():
        with Dataset(dataset_dir) as dataset:
            result = run_calibration(dataset, calib_config)
        save_params(result.params, out / 'params.json')
        result.write_trace(out / 'trace.csv')

    if len(result.trace):
        last = result.trace.iloc[-1]
        click.echo(f"Final loss {last['total']:.6e} (photometric {last['photometric']:.6e})")
    click.echo(f"Calibrated {len(result.params.sensors)} sensor(s), "
               f"{len(result.params.frames)} frame(s) -> {out / 'params.json'}")


@cli.command('train-controller')
@click.option('--dataset', 'dataset_dir', required=True, type=click.Path(),
              help='Dataset directory')
@click.option('--params', 'params_path', required=True, type=click.Path(),
              help='Calibrated params.json (sensors are kept frozen)')
@click.option('--out', '-o', required=True, type=click.Path(), help='Controller file to write')
@click.option('--iterations', type=int, help='Optimizer iterations per sensor')
@click.option('--batch-size', type=int, help='Frames per iteration')
@click.option('--seed', type=int, help='Random seed')
@click.option('--metadata/--no-metadata', 'use_metadata', default=None,
              help='Condition the controller on per-frame EV metadata')
@click.option('--log-input/--linear-input', 'log_input', default=None,
              help='Compress the controller input with log2(1 + L)')
@click.pass_context
def train_controller_cmd(ctx, dataset_dir, params_path, out, iterations, batch_size, seed,
                         use_metadata, log_input):
    """Train the per-frame controller against frozen sensor parameters."""
    config = _run_config(ctx)
    train_config = _override(config.controller, iterations=iterations, batch_size=batch_size,
                             seed=seed, use_metadata=use_metadata, log_input=log_input)
    out = Path(out)
    with _errors():
        params = load_params(params_path)
        with Dataset(dataset_dir) as dataset:
            result = train_controller(dataset, params, train_config)
        save_controllers(result.controllers, out)
        result.write_trace(out.with_name(f"{out.stem}_trace.csv"))

    for sid in sorted(result.controllers):
        losses = result.trace[result.trace['sensor'] == sid]['loss']
        if len(losses):
            click.echo(f"{sid}: final loss {losses.iloc[-1]:.6e}")
    click.echo(f"Saved {len(result.controllers)} controller(s) to {out}")


def _pick_sensor(sensor_id: Optional[str], params: Optional[ParamSet],
                 controllers: Optional[Dict[str, ControllerWeights]]) -> str:
    if sensor_id:
        return sensor_id
    for source in (params.sensors if params else None, controllers):
        if source:
            if len(source) > 1:
                raise UsageFailure(f"several sensors available ({', '.join(sorted(source))}); "
                                   "choose one with --sensor")
            return next(iter(source))
    return 'cam0'


def _frame_parameters(radiance, frame_id: Optional[str], sensor_id: str,
                      metadata: List[float], params: Optional[ParamSet],
                      controllers: Optional[Dict[str, ControllerWeights]], edits
                      ) -> Tuple[SensorParams, FrameParams]:
    """Base sensor and frame parameters for one render, with edits applied."""
    blocks = params.blocks if params else default_blocks()
    sensor = SensorParams.identity()
    if params is not None:
        if sensor_id not in params.sensors:
            raise DatasetError(f"parameter file has no sensor '{sensor_id}'")
        sensor = params.sensors[sensor_id]

    if controllers is not None:
        if sensor_id not in controllers:
            raise DatasetError(f"controller file has no sensor '{sensor_id}'")
        frame = controller_forward(radiance, metadata, controllers[sensor_id]).frame_params()
    elif params is not None and frame_id in params.frames:
        frame = params.frames[frame_id]
    else:
        if frame_id is not None:
            logger.warning(f"No stored parameters for frame {frame_id}; using identity")
        frame = FrameParams.identity()

    if edits:
        sensor, frame = apply_edits(sensor, frame, edits, blocks)
    return sensor, frame


def _write_render(trace: PipelineTrace, path: Path) -> None:
    save_pfm(trace.output, path)
    save_png8(trace.output, path.with_suffix('.png'))


def _dump_stages(trace: PipelineTrace, out_dir: Path) -> None:
    for name in ('exposed', 'vignetted', 'corrected', 'output'):
        save_pfm(getattr(trace, name), out_dir / f"{name}.pfm")


def _parse_frame_ref(frame_ref: str) -> Tuple[Optional[str], str]:
    split, sep, frame_id = frame_ref.rpartition('/')
    return (split or None) if sep else None, frame_id


@cli.command()
@click.option('--params', 'params_path', type=click.Path(), help='Calibrated params.json')
@click.option('--controller', 'controller_path', type=click.Path(),
              help='Controller file; predicts exposure and color for each frame')
@click.option('--dataset', 'dataset_dir', type=click.Path(),
              help='Dataset to take radiance and metadata from')
@click.option('--frame', 'frame_ref', help='Frame id, optionally with its split (test/0007)')
@click.option('--radiance', 'radiance_path', type=click.Path(),
              help='Radiance PFM to render instead of a dataset frame')
@click.option('--sensor', 'sensor_id', help='Sensor id (defaults to the only one available)')
@click.option('--ev', type=float, help='EV metadata for the controller (with --radiance)')
@click.option('--split', type=click.Choice(['train', 'test', 'all']), default='test',
              show_default=True, help='Frames to render when no --frame is given')
@click.option('--set', 'edit_texts', multiple=True, metavar='KEY=VALUE',
              help='Manual edit, e.g. exposure=+1, wb=0.01,-0.01, crf.gamma=0.45, vig.alpha1=-0.2')
@click.option('--dump-stages', type=click.Path(),
              help='Directory for exposed, vignetted and corrected intermediates')
@click.option('--out', '-o', required=True, type=click.Path(),
              help='Output PFM (single render) or directory (batch)')
def render(params_path, controller_path, dataset_dir, frame_ref, radiance_path, sensor_id, ev,
           split, edit_texts, dump_stages, out):
    """Render radiance through calibrated, predicted or edited parameters."""
    with _errors():
        edits = [parse_edit(text) for text in edit_texts]
    if controller_path and any(e.is_exposure for e in edits):
        raise UsageFailure("--set exposure conflicts with --controller: "
                           "choose one exposure source")
    if radiance_path and (dataset_dir or frame_ref):
        raise UsageFailure("--radiance cannot be combined with --dataset or --frame")
    if not radiance_path and not dataset_dir:
        raise UsageFailure("give --radiance, or --dataset (with --frame for a single render)")
    if frame_ref and not dataset_dir:
        raise UsageFailure("--frame needs --dataset")
    if dump_stages and not (radiance_path or frame_ref):
        raise UsageFailure("--dump-stages needs a single render (--radiance or --frame)")

    out = Path(out)
    with _errors():
        params = load_params(params_path) if params_path else None
        controllers = load_controllers(controller_path) if controller_path else None
        blocks = params.blocks if params else default_blocks()

        if radiance_path:
            radiance = load_pfm(radiance_path)
            sid = _pick_sensor(sensor_id, params, controllers)
            metadata = [] if ev is None else [ev]
            sensor, frame = _frame_parameters(radiance, None, sid, metadata, params,
                                              controllers, edits)
            trace = run_pipeline(radiance, sensor, frame, blocks)
            _write_render(trace, out)
            if dump_stages:
                _dump_stages(trace, Path(dump_stages))
            click.echo(f"Rendered {radiance_path} -> {out}")
            return

        with Dataset(dataset_dir) as dataset:
            dataset.require_radiance()
            if frame_ref:
                want_split, frame_id = _parse_frame_ref(frame_ref)
                record = dataset.frame(frame_id)
                if want_split is not None and want_split != record.split:
                    raise UsageFailure(f"frame {frame_id} is a {record.split} frame, "
                                       f"not {want_split}")
                records = [record]
            else:
                records = dataset.select(split)

            for record in records:
                radiance = dataset.radiance(record.frame_id)
                metadata = _metadata_for(record, controllers)
                sensor, frame = _frame_parameters(radiance, record.frame_id, record.sensor_id,
                                                  metadata, params, controllers, edits)
                trace = run_pipeline(radiance, sensor, frame, blocks)
                target = out if frame_ref else out / f"{record.frame_id}.pfm"
                _write_render(trace, target)
                if dump_stages:
                    _dump_stages(trace, Path(dump_stages))
                logger.debug(f"Rendered {record.frame_id} -> {target}")
    click.echo(f"Rendered {len(records)} frame(s) -> {out}")


def _metadata_for(record: FrameRecord,
                  controllers: Optional[Dict[str, ControllerWeights]]) -> List[float]:
    if not controllers or record.sensor_id not in controllers:
        return []
    config = controllers[record.sensor_id].config
    try:
        return frame_metadata(record, config)
    except DatasetError as e:
        raise MetadataMismatchError(str(e)) from e


@cli.command()
@click.option('--params', 'params_path', required=True, type=click.Path(),
              help='Parameter file (params.json or a dataset truth.json)')
@click.option('--out', '-o', required=True, type=click.Path(), help='Output directory')
@click.option('--svg', is_flag=True, help='Also write curves.svg')
@click.option('--truth', 'truth_dir', type=click.Path(),
              help='Synthetic dataset whose ground truth the curves are compared to')
def inspect(params_path, out, svg, truth_dir):
    """Sample each sensor's CRF and vignetting curves to curves.csv."""
    out = Path(out)
    with _errors():
        params = load_params(params_path)
        table = curves_table(params.sensors)
        write_curves(table, out / 'curves.csv')
        truth_table = curves_table(load_truth(truth_dir).sensors) if truth_dir else None
        if svg:
            plot_curves(table, out / 'curves.svg', truth_table)

    click.echo(f"Wrote curves for {len(params.sensors)} sensor(s) to {out / 'curves.csv'}")
    if truth_table is not None:
        diffs = curve_differences(table, truth_table)
        for _, row in diffs.iterrows():
            crf = ', '.join(f"{row[f'crf_{c}_rmse']:.2e}" for c in 'rgb')
            vig = ', '.join(f"{row[f'vig_{c}_rmse']:.2e}" for c in 'rgb')
            click.echo(f"{row['sensor']}: CRF RMSE (r, g, b) {crf}; vignetting RMSE {vig}")


@cli.command('eval')
@click.option('--dataset', 'dataset_dir', required=True, type=click.Path(),
              help='Dataset directory')
@click.option('--pred', 'pred_dir', type=click.Path(),
              help='Directory of rendered {frame_id}.pfm files')
@click.option('--params', 'params_path', type=click.Path(),
              help='Recovered params.json to analyze against the dataset ground truth')
@click.option('--split', type=click.Choice(['train', 'test', 'all']), default='test',
              show_default=True, help='Frames to evaluate')
@click.option('--out', '-o', required=True, type=click.Path(),
              help='Output directory for report.json and report.csv')
def eval_cmd(dataset_dir, pred_dir, params_path, split, out):
    """Score renders (PSNR, PSNR-CC) and recovered parameters."""
    if not pred_dir and not params_path:
        raise UsageFailure("give --pred, --params, or both")
    with _errors():
        with Dataset(dataset_dir) as dataset:
            report = evaluate_renders(dataset, pred_dir, split) if pred_dir else EvalReport()
            if params_path:
                frame_ids = [r.frame_id for r in dataset.select('all')]
                report.analysis = analyze_params(load_params(params_path),
                                                 load_truth(dataset_dir), frame_ids)
        report.write(out)

    if report.frames:
        click.echo(f"{len(report.frames)} frame(s): PSNR {report.mean_psnr:.3f} dB, "
                   f"PSNR-CC {report.mean_psnr_cc:.3f} dB")
    if report.analysis is not None:
        for sid, sensor in sorted(report.analysis.sensors.items()):
            fit = sensor.identifiability
            if fit is not None:
                click.echo(f"{sid}: exposure fit slope {fit.slope:.4f}, "
                           f"intercept {fit.intercept:.4f}, r {fit.r:.5f}, "
                           f"residual {fit.residual_std:.4f}")
            if sensor.decoupling is not None:
                line = (f"{sid}: PCC(dt, wb) {sensor.decoupling[0]:+.3f}, "
                        f"{sensor.decoupling[1]:+.3f}")
                if sensor.decoupling_truth is not None:
                    line += (f" (ground truth {sensor.decoupling_truth[0]:+.3f}, "
                             f"{sensor.decoupling_truth[1]:+.3f})")
                click.echo(line)
            click.echo(f"{sid}: vignetting RMSE (r, g, b) "
                       f"{', '.join(f'{v:.2e}' for v in sensor.vignetting_rmse)}; "
                       f"CRF RMSE {', '.join(f'{v:.2e}' for v in sensor.crf_rmse)}")
    click.echo(f"Report written to {out}")


@cli.command('fd-check')
@click.option('--seed', type=int, default=0, show_default=True, help='Configuration seed')
@click.option('--configs', type=int, default=1, show_default=True,
              help='Number of random configurations to check')
@click.option('--step', type=float, default=DEFAULT_STEP, show_default=True,
              help='Finite-difference step')
@click.option('--tolerance', type=float, default=DEFAULT_TOLERANCE, show_default=True,
              help='Maximum relative error')
@click.option('--out', '-o', type=click.Path(), help='Directory for fdcheck_{seed}.json reports')
def fd_check_cmd(seed, configs, step, tolerance, out):
    """Check the pipeline gradients against finite differences."""
    failures = 0
    with _errors():
        for k in range(configs):
            report = fd_check(random_config(seed + k, radiance_probes=8), step, tolerance)
            if out:
                report.write(Path(out) / f"fdcheck_{seed + k}.json")
            status = 'ok' if report.passed else 'FAIL'
            click.echo(f"seed {seed + k}: max relative error {report.max_rel_error:.3e}, "
                       f"{len(report.flagged)} flagged [{status}]")
            failures += 0 if report.passed else 1
    if failures:
        raise NumericFailure(f"{failures} of {configs} configuration(s) failed")


@cli.command()
@click.option('--width', type=int, default=1920, show_default=True, help='Image width')
@click.option('--height', type=int, default=1080, show_default=True, help='Image height')
@click.option('--repeat', type=int, default=5, show_default=True, help='Timed runs per path')
def bench(width, height, repeat):
    """Time the forward pipeline against the throughput budget."""
    with _errors():
        result = run_bench(width, height, repeat)
    for label, ms, budget, ok in (
        ('pipeline', result.pipeline_ms, PIPELINE_BUDGET_MS, result.pipeline_within_budget),
        ('controller + pipeline', result.controller_ms, CONTROLLER_BUDGET_MS,
         result.controller_within_budget),
    ):
        click.echo(f"{label} {width}x{height}: median {ms:.1f} ms over {repeat} run(s), "
                   f"budget {budget:.0f} ms [{'ok' if ok else 'over'}]")
