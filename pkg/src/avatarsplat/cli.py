"""Command-line entry point.  Exit codes: 0 success, 1 usage error, 2 runtime error."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
FIT_MODES = ("single-image", "monocular", "multi-cam")
# scalar labels derivable from a stored identity description
LABEL_ATTRIBUTES = {
    "hair_length": lambda d: float(d["hair_length"]),
    "hair_brightness": lambda d: float(np.mean(d["hair_color"])),
    "skin_brightness": lambda d: float(np.mean(d["skin_color"])),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for all randomness (default 0)")
    common.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS,
                        help="worker threads for the compiled kernels (env GASP_THREADS)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")

    p = _Parser(prog="avatarsplat", description="Mesh-attached Gaussian avatars on a procedural toy head.",
                parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("gen-data", parents=[common], help="render a synthetic multi-identity dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--identities", type=_positive_int)
    g.add_argument("--images", type=_positive_int, help="images per identity")
    g.add_argument("--size", type=_positive_int, help="image side in pixels")

    t = sub.add_parser("train-prior", parents=[common], help="train the identity prior on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="prior file")
    t.add_argument("--epochs", type=_nonneg_int)
    t.add_argument("--uv-resolution", type=_positive_int)
    t.add_argument("--history", help="write the loss history JSON here")

    f = sub.add_parser("fit", parents=[common], help="fit an avatar to an enrollment of one subject")
    mode = f.add_mutually_exclusive_group()
    mode.add_argument("--single-image", dest="mode", action="store_const", const="single-image")
    mode.add_argument("--monocular", dest="mode", action="store_const", const="monocular")
    mode.add_argument("--multi-cam", dest="mode", action="store_const", const="multi-cam")
    f.add_argument("--prior", required=True)
    f.add_argument("--out", required=True, help="avatar file")
    f.add_argument("--subject-seed", type=int, help="seed of a new toy subject (default: --seed)")
    f.add_argument("--data", help="take the subject from this dataset instead")
    f.add_argument("--identity", type=_nonneg_int, default=0, help="identity index within --data")
    f.add_argument("--frames", type=_positive_int, default=8, help="enrollment views for monocular/multi-cam")
    f.add_argument("--size", type=_positive_int, default=64)
    f.add_argument("--steps", type=_floats, help="stage step counts, e.g. 500,500,100")
    f.add_argument("--preview", help="PNG of the final render of enrollment view 0")

    r = sub.add_parser("render", parents=[common], help="render a saved avatar to PNG")
    r.add_argument("--avatar", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--enrollment-view", type=_nonneg_int, help="reuse a stored enrollment camera and expression")
    r.add_argument("--azimuth", type=float, default=0.0)
    r.add_argument("--elevation", type=float, default=0.0)
    r.add_argument("--radius", type=float, default=4.5)
    r.add_argument("--size", type=_positive_int, default=64)
    r.add_argument("--expression", type=_floats, help="comma-separated expression coefficients")
    r.add_argument("--alpha-out", help="also write the alpha mask PNG")

    a = sub.add_parser("animate", parents=[common], help="render a camera/expression trajectory as PNG frames")
    a.add_argument("--avatar", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--frames", type=_positive_int, default=24)
    a.add_argument("--azimuth", type=_floats, default=[-45.0, 45.0], help="start,end azimuth")
    a.add_argument("--elevation", type=float, default=5.0)
    a.add_argument("--expression-amplitude", type=float, default=1.0)
    a.add_argument("--size", type=_positive_int, default=64)

    e = sub.add_parser("eval", parents=[common], help="PSNR/SSIM/L1 of an avatar on held-out views")
    e.add_argument("--avatar", required=True)
    e.add_argument("--azimuths", type=_floats, default=[130.0, -130.0, 160.0, -160.0])
    e.add_argument("--elevation", type=float, default=10.0)
    e.add_argument("--size", type=_positive_int, default=64)
    e.add_argument("--out", help="write the report JSON here (default stdout)")

    an = sub.add_parser("analyze", parents=[common], help="latent-space analysis of a prior")
    an.add_argument("what", choices=("pca", "direction", "edit"))
    an.add_argument("--prior", required=True)
    an.add_argument("--out", required=True, help="output directory (pca), direction file, or PNG (edit)")
    an.add_argument("--k", type=_positive_int, default=3, help="PCA components")
    an.add_argument("--attribute", default="hair_length", help="identity attribute used as label")
    an.add_argument("--threshold", type=float, default=0.5)
    an.add_argument("--direction", help="direction file (edit)")
    an.add_argument("--identity", type=_nonneg_int, default=0, help="prior identity to edit")
    an.add_argument("--magnitude", type=float, default=1.0)
    an.add_argument("--azimuth", type=float, default=150.0)
    an.add_argument("--size", type=_positive_int, default=64)

    b = sub.add_parser("bench", parents=[common], help="throughput benchmarks")
    b.add_argument("what", choices=("posing", "render"))
    b.add_argument("--n", type=_positive_int, help="Gaussian count (posing default 187779, render 2304)")
    b.add_argument("--reps", type=_positive_int, default=20, help="timed poses or frames")
    b.add_argument("--size", type=_positive_int, default=64)
    b.add_argument("--backend", choices=("native", "python"))
    return p


# ---------------------------------------------------------------------------
# helpers

def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _run_config(args):
    from .config import RunConfig

    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if hasattr(args, "seed"):
        cfg.seed = args.seed
    if hasattr(args, "threads"):
        cfg.threads = args.threads
    return cfg


def _write_json(path, obj):
    text = json.dumps(obj, indent=1, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _subject_model(avatar):
    from .geometry import Identity, toy_head_from_params

    prov = avatar.provenance
    if "head_model" not in prov or "identity" not in prov:
        raise ValueError("avatar sidecar lacks head model or subject description; was it written by `fit`?")
    return toy_head_from_params(prov["head_model"]), Identity.from_dict(prov["identity"])


def _dataset_cfg(cfg, size):
    from dataclasses import replace

    return replace(cfg.dataset, image_size=size)


def enrollment_views(mode, frames):
    """(azimuth, elevation, expression scale) per enrollment view for each fitting mode."""
    if mode == "single-image":
        return [(0.0, 0.0, 0.0)]
    if mode == "monocular":
        az = np.linspace(-35.0, 35.0, frames) if frames > 1 else np.zeros(1)
        return [(float(a), 5.0, 1.0) for a in az]
    az = -180.0 + 360.0 * np.arange(frames) / frames
    return [(float(a), 10.0, 0.0) for a in az]


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args, cfg):
    from dataclasses import replace

    from .synthdata import generate_dataset

    d = replace(cfg.dataset, seed=cfg.seed)
    if args.identities:
        d = replace(d, n_identities=args.identities)
    if args.images:
        d = replace(d, images_per_identity=args.images)
    if args.size:
        d = replace(d, image_size=args.size)
    ds = generate_dataset(d, args.out)
    _log(f"wrote {len(ds.samples)} samples of {len(ds.identities)} identities to {args.out}")


def cmd_train_prior(args, cfg):
    from dataclasses import replace

    from .io import save_prior
    from .pipelines import train_prior
    from .synthdata import load_dataset

    t = replace(cfg.train, seed=cfg.seed)
    if args.epochs is not None:
        t = replace(t, epochs=args.epochs)
    if args.uv_resolution:
        t = replace(t, uv_resolution=args.uv_resolution)
    ds = load_dataset(args.data)
    prior, hist = train_prior(ds, t, log=_log)
    save_prior(prior, args.out)
    if args.history:
        _write_json(args.history, hist)
    _log(f"training L1 {hist['l1_start']:.5f} -> {hist['l1_end']:.5f}; prior written to {args.out}")


def cmd_fit(args, cfg):
    from dataclasses import replace

    from .geometry import toy_head_from_params
    from .images import write_png
    from .io import load_prior, save_avatar
    from .pipelines import fit, sample_context
    from .renderer import render
    from .synthdata import load_dataset, make_enrollment, sample_identity

    mode = args.mode or "single-image"
    prior = load_prior(args.prior)
    if "head_model" not in prior.meta:
        raise ValueError("prior carries no head model description")
    model = toy_head_from_params(prior.meta["head_model"])
    if args.data:
        ds = load_dataset(args.data, load_images=False)
        if args.identity >= len(ds.identities):
            raise ValueError(f"identity {args.identity} out of range ({len(ds.identities)} in dataset)")
        ident = ds.identities[args.identity]
    else:
        seed = cfg.seed if args.subject_seed is None else args.subject_seed
        ident = sample_identity((seed, 99), model)
    dcfg = _dataset_cfg(cfg, args.size)
    rng = np.random.default_rng((cfg.seed, 5))
    enrollment = []
    for k, (az, el, amp) in enumerate(enrollment_views(mode, args.frames)):
        expr = amp * rng.uniform(-0.6, 0.6, model.n_expression_dims)
        enrollment += make_enrollment(model, ident, [(az, el)], dcfg, expr, prefix=f"enroll{k:03d}")
    fcfg = replace(cfg.fit, seed=cfg.seed)
    if args.steps:
        if len(args.steps) != 3:
            raise UsageError("--steps takes three comma-separated counts")
        fcfg = replace(fcfg, steps_stage1=int(args.steps[0]), steps_stage2=int(args.steps[1]),
                       steps_stage3=int(args.steps[2]))
    avatar = fit(prior, enrollment, fcfg, model, mode)
    avatar.provenance.pop("stage2_gaussians", None)
    avatar.provenance["identity"] = ident.to_dict()
    avatar.provenance["head_model"] = dict(model.params)
    avatar.provenance["enrollment_views"] = [
        {"camera": s.camera.to_dict(), "expression": [float(x) for x in s.expression_coeffs]} for s in enrollment]
    save_avatar(avatar, args.out)
    if args.preview:
        s = enrollment[0]
        t = render(avatar.gaussians, sample_context(model, s, avatar.bindings), s.camera, fcfg.background,
                   cfg.render)
        write_png(args.preview, t.rgb)
    _log(f"fitted {len(avatar.gaussians)} Gaussians from {len(enrollment)} view(s); avatar written to {args.out}")


def _render_avatar(avatar, model, cam, expression, settings, background=(0.0, 0.0, 0.0)):
    from .geometry import pose_head
    from .renderer import PoseContext, render

    if len(expression) != model.n_expression_dims:
        raise ValueError(f"expression needs {model.n_expression_dims} coefficients, got {len(expression)}")
    mesh = pose_head(model, avatar.identity_coeffs, expression)
    return render(avatar.gaussians, PoseContext.from_mesh(mesh, avatar.bindings), cam, background, settings)


def render_view(avatar, enrollment_view=None, azimuth=0.0, elevation=0.0, radius=4.5, size=64, expression=None,
                settings=None):
    """Render a loaded avatar; an enrollment view index reuses the stored camera and expression."""
    from .renderer.camera import Camera

    model, _ = _subject_model(avatar)
    if enrollment_view is not None:
        views = avatar.provenance.get("enrollment_views", [])
        if enrollment_view >= len(views):
            raise ValueError(f"enrollment view {enrollment_view} out of range ({len(views)} stored)")
        cam = Camera.from_dict(views[enrollment_view]["camera"])
        expr = np.asarray(views[enrollment_view]["expression"])
    else:
        cam = Camera.orbit(azimuth, elevation, radius, size)
        expr = np.zeros(model.n_expression_dims) if expression is None else np.asarray(expression)
    return _render_avatar(avatar, model, cam, expr, settings)


def cmd_render(args, cfg):
    from .images import write_png
    from .io import load_avatar

    avatar = load_avatar(args.avatar)
    t = render_view(avatar, args.enrollment_view, args.azimuth, args.elevation, args.radius, args.size,
                    args.expression, cfg.render)
    write_png(args.out, t.rgb)
    if args.alpha_out:
        write_png(args.alpha_out, t.alpha)


def cmd_animate(args, cfg):
    from .images import write_png
    from .io import load_avatar
    from .renderer.camera import Camera

    if len(args.azimuth) != 2:
        raise UsageError("--azimuth takes start,end")
    avatar = load_avatar(args.avatar)
    model, _ = _subject_model(avatar)
    os.makedirs(args.out_dir, exist_ok=True)
    phase = np.random.default_rng((cfg.seed, 6)).uniform(0.0, 2.0 * np.pi, model.n_expression_dims)
    for i in range(args.frames):
        u = i / max(1, args.frames - 1)
        az = args.azimuth[0] + u * (args.azimuth[1] - args.azimuth[0])
        expr = args.expression_amplitude * np.sin(2.0 * np.pi * u + phase)
        cam = Camera.orbit(az, args.elevation, 4.5, args.size)
        t = _render_avatar(avatar, model, cam, expr, cfg.render)
        write_png(os.path.join(args.out_dir, f"frame_{i:04d}.png"), t.rgb)
    _log(f"wrote {args.frames} frames to {args.out_dir}")


def cmd_eval(args, cfg):
    from .io import load_avatar
    from .pipelines import evaluate
    from .synthdata import make_enrollment

    avatar = load_avatar(args.avatar)
    model, ident = _subject_model(avatar)
    views = [(az, args.elevation) for az in args.azimuths]
    if not views:
        raise UsageError("--azimuths is empty")
    heldout = make_enrollment(model, ident, views, _dataset_cfg(cfg, args.size), prefix="heldout")
    report = evaluate(avatar, model, heldout)
    for v, (az, el) in zip(report["views"], views):
        v["azimuth"], v["elevation"] = az, el
    _write_json(args.out, report)


def cmd_analyze(args, cfg):
    from .analysis import edit_latent, pca_features, projection_colors, scalp_extent, svm_direction, uv_image
    from .geometry import Identity, pose_head, toy_head_from_params
    from .images import write_png
    from .io import load_direction, load_prior, save_direction
    from .prior import decode_with_code
    from .renderer import PoseContext, render
    from .renderer.camera import Camera

    prior = load_prior(args.prior)
    model = toy_head_from_params(prior.meta["head_model"])
    if args.what == "pca":
        if args.k > prior.features.shape[1]:
            raise UsageError(f"--k must be at most {prior.features.shape[1]}")
        res = pca_features(prior.features, args.k)
        os.makedirs(args.out, exist_ok=True)
        neutral = pose_head(model, np.zeros(model.n_identity_dims), np.zeros(model.n_expression_dims))
        res_uv = int(np.ceil(np.sqrt(len(prior.bindings)) * 1.2))
        write_png(os.path.join(args.out, "pca_uv.png"),
                  uv_image(neutral, prior.bindings, projection_colors(res, min(3, args.k)), res_uv))
        _write_json(os.path.join(args.out, "pca.json"), {
            "mean": res.mean.tolist(), "components": res.components.tolist(),
            "explained_variance": res.explained_variance.tolist()})
        return
    if args.what == "direction":
        idents = prior.meta.get("identities")
        if not idents or len(idents) != prior.n_identities:
            raise ValueError("prior carries no identity labels")
        if args.attribute not in LABEL_ATTRIBUTES:
            raise UsageError(f"unsupported attribute {args.attribute!r}; choose from {', '.join(LABEL_ATTRIBUTES)}")
        values = np.array([LABEL_ATTRIBUTES[args.attribute](d) for d in idents])
        d = svm_direction(prior.codes, values >= args.threshold, name=args.attribute, seed=cfg.seed)
        save_direction(d, args.out)
        print(json.dumps({"attribute": args.attribute, "train_accuracy": d.train_accuracy}, sort_keys=True))
        return
    if not args.direction:
        raise UsageError("analyze edit needs --direction")
    if args.identity >= prior.n_identities:
        raise ValueError(f"identity {args.identity} out of range ({prior.n_identities} in prior)")
    d = load_direction(args.direction)
    z = prior.codes[args.identity]
    z_edit = edit_latent(z, d, args.magnitude)
    before = decode_with_code(prior, z)[0]
    after = decode_with_code(prior, z_edit)[0]
    ident = Identity.from_dict(prior.meta["identities"][args.identity])
    mesh = pose_head(model, ident.identity_coeffs, np.zeros(model.n_expression_dims))
    ctx = PoseContext.from_mesh(mesh, prior.bindings)
    cam = Camera.orbit(args.azimuth, 10.0, 4.5, args.size)
    imgs = [render(g, ctx, cam, settings=cfg.render).rgb for g in (before, after)]
    write_png(args.out, np.concatenate(imgs, axis=1))
    print(json.dumps({"score_before": float(d.score(z)), "score_after": float(d.score(z_edit)),
                      "scalp_extent_before": scalp_extent(before, prior.scalp_mask),
                      "scalp_extent_after": scalp_extent(after, prior.scalp_mask)}, sort_keys=True))


def cmd_bench(args, cfg):
    from .bench import bench_posing, bench_render, report_line

    if args.what == "posing":
        res = bench_posing(args.n or 187_779, args.reps, backend=args.backend, threads=cfg.threads, seed=cfg.seed)
    else:
        res = bench_render(args.n or 2304, args.size, args.reps, backend=args.backend, threads=cfg.threads,
                           seed=cfg.seed)
    print(report_line(res))


COMMANDS = {
    "gen-data": cmd_gen_data, "train-prior": cmd_train_prior, "fit": cmd_fit, "render": cmd_render,
    "animate": cmd_animate, "eval": cmd_eval, "analyze": cmd_analyze, "bench": cmd_bench,
}


def main(argv=None) -> int:
    from .parallel import get_threads, set_threads

    try:
        args = build_parser().parse_args(argv)
        cfg = _run_config(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    except (OSError, ValueError) as e:
        print(f"avatarsplat: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        get_threads()  # surface a malformed GASP_THREADS as a runtime error
        if cfg.threads:
            set_threads(cfg.threads)
        COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"avatarsplat {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, KeyError) as e:
        print(f"avatarsplat {args.command}: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if cfg.threads:
            set_threads(None)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
