"""Command-line interface.

All batch commands operate on a scene directory produced by `texavatar synth`
and run the pipeline in-process; `texavatar serve` starts the interactive
rendering service.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import io as tio
from . import pipeline, synth
from .unprojection import unproject


def _config_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True),
                     default=None, help="Pipeline config JSON; flags override it."),
        click.option("--texture-resolution", type=int, default=None),
        click.option("--angle-threshold", type=float, default=None,
                     help="Visibility cosine threshold."),
        click.option("--depth-threshold", type=float, default=None,
                     help="Visibility depth threshold in meters."),
        click.option("--fit-steps", type=int, default=None),
        click.option("--fit-step-size", type=float, default=None),
        click.option("--sh-degree", type=int, default=None),
        click.option("--tile-size", type=int, default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _load_config(config_path, **overrides) -> pipeline.PipelineConfig:
    return pipeline.PipelineConfig.load(config_path, **overrides)


@click.group()
def main() -> None:
    """Texture-space Gaussian avatar pipeline."""


@main.command("synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--texture-resolution", type=int, default=256, show_default=True)
@click.option("--image-size", type=int, default=512, show_default=True)
@click.option("--bump-amplitude", type=float, default=0.02, show_default=True,
              help="Ground-truth deformation amplitude in meters.")
def synth_cmd(out_dir, seed, texture_resolution, image_size, bump_amplitude):
    """Generate a synthetic scene with known ground truth."""
    cfg = synth.SceneConfig(
        seed=seed, texture_resolution=texture_resolution,
        image_size=image_size, bump_amplitude=bump_amplitude,
    )
    scene = synth.synth(cfg)
    synth.save_scene(scene, out_dir)
    click.echo(f"scene written to {out_dir} "
               f"({scene.num_frames} frames, {len(scene.rig_condition)} condition views)")


@main.command("unproject")
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--frame", type=int, default=0, show_default=True)
@click.option("--deformation", "deformation_path", type=click.Path(exists=True),
              default=None, help="Deformation map; given one, this is the second pass.")
@click.option("--out", "out_path", required=True, type=click.Path())
@_config_options
def unproject_cmd(scene_dir, frame, deformation_path, out_path, config_path, **overrides):
    """Unproject the condition images into a fused texel texture."""
    cfg = _load_config(config_path, **overrides)
    scene = synth.load_scene(scene_dir)
    d = tio.load_dutf(deformation_path) if deformation_path else None
    images = [scene.images[(frame, v)] for v in range(len(scene.rig_condition))]
    masks = [scene.masks[(frame, v)] for v in range(len(scene.rig_condition))]
    result = unproject(
        scene.tracking_template, scene.motions[frame], d, scene.rig_condition,
        images, masks, cfg.texture_resolution,
        delta=cfg.angle_threshold, epsilon=cfg.depth_threshold,
    )
    tio.save_dutf(out_path, result.fused)
    covered = float((result.coverage_count.data > 0).mean())
    click.echo(f"fused texture written to {out_path} (coverage {covered:.1%})")


@main.command("fit-geo")
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--frame", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="Write the per-step loss log as JSON.")
@_config_options
def fit_geo_cmd(scene_dir, frame, out_path, log_path, config_path, **overrides):
    """Fit the coarse deformation map against the frame's target point cloud."""
    from .deformation import fit_deformation

    cfg = _load_config(config_path, **overrides)
    scene = synth.load_scene(scene_dir)
    images = [scene.images[(frame, v)] for v in range(len(scene.rig_condition))]
    masks = [scene.masks[(frame, v)] for v in range(len(scene.rig_condition))]
    first = unproject(
        scene.tracking_template, scene.motions[frame], None, scene.rig_condition,
        images, masks, cfg.texture_resolution,
        delta=cfg.angle_threshold, epsilon=cfg.depth_threshold,
    )
    d, log = fit_deformation(
        scene.tracking_template, scene.motions[frame], first,
        scene.gt_pointclouds[frame], weights=cfg.loss_weights,
        steps=cfg.fit_steps, step_size=cfg.fit_step_size,
    )
    tio.save_dutf(out_path, d)
    if log_path:
        Path(log_path).write_text(json.dumps(log, indent=1))
    click.echo(f"deformation map written to {out_path} "
               f"(loss {log[0]['loss']:.5g} -> {log[-1]['loss']:.5g})")


@main.command("avatar")
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--frame", type=int, default=0, show_default=True)
@click.option("--mode", type=click.Choice(pipeline.MODES), default="double",
              show_default=True)
@click.option("--out-params", required=True, type=click.Path(),
              help="Texel-space Gaussian parameter map (DUTF).")
@click.option("--out-gaussians", type=click.Path(), default=None,
              help="Flat posed Gaussian set (binary).")
@_config_options
def avatar_cmd(scene_dir, frame, mode, out_params, out_gaussians, config_path, **overrides):
    """Build the per-texel Gaussian avatar for one frame."""
    cfg = _load_config(config_path, **overrides)
    scene = synth.load_scene(scene_dir)
    result = pipeline.run_frame(scene, frame, cfg, mode=mode, render_cameras=())
    tio.save_dutf(out_params, result.params.to_texel_map())
    if out_gaussians:
        g = result.gaussians
        rgb = np.clip(0.5 + g.sh[:, 0, :] * 0.28209479177387814, 0.0, 1.0)
        tio.save_gaussian_set(out_gaussians, g.positions, g.covariances, rgb, g.opacities)
    click.echo(f"avatar built: {len(result.gaussians)} gaussians, "
               f"params -> {out_params}")


@main.command("render")
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--frame", type=int, default=0, show_default=True)
@click.option("--mode", type=click.Choice(pipeline.MODES), default="double",
              show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_config_options
def render_cmd(scene_dir, frame, mode, out_dir, config_path, **overrides):
    """Render the held-out views of one frame and report metrics."""
    cfg = _load_config(config_path, **overrides)
    scene = synth.load_scene(scene_dir)
    result = pipeline.run_frame(scene, frame, cfg, mode=mode)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for v, sf in enumerate(result.renders):
        tio.save_png(out / f"f{frame:03d}_v{v:02d}.png", sf.color.data)
    rep = pipeline.evaluate_frame(scene, result)
    (out / f"f{frame:03d}_report.json").write_text(rep.to_json())
    (out / f"f{frame:03d}_timings.json").write_text(
        json.dumps(result.timings_ms, indent=1)
    )
    click.echo(f"rendered {len(result.renders)} views to {out_dir} "
               f"(PSNR {rep.psnr:.4f} dB, total {result.total_ms:.0f} ms)")


@main.command("eval")
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--frame", type=int, default=1, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@_config_options
def eval_cmd(scene_dir, frame, out_path, config_path, **overrides):
    """Compare single vs double texture unprojection on held-out views."""
    cfg = _load_config(config_path, **overrides)
    scene = synth.load_scene(scene_dir)
    result = pipeline.compare_modes(scene, frame, cfg)
    text = json.dumps(result, indent=1)
    if out_path:
        Path(out_path).write_text(text)
    click.echo(text)


@main.command("serve")
@click.option("--scene", "scene_dir", type=click.Path(exists=True), default=None,
              help="Scene directory; a default synthetic scene when omitted.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
@_config_options
def serve_cmd(scene_dir, host, port, config_path, **overrides):
    """Start the interactive rendering service (HTTP + WebSocket)."""
    import uvicorn

    from .service import app_from_scene_dir

    cfg = _load_config(config_path, **overrides)
    app = app_from_scene_dir(scene_dir, cfg)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
