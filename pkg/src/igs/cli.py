"""Command-line entry point: ``igs {init,stream,render,eval,synth,inspect}``.

Dataset directory layout (written by ``synth``, read by ``stream``/``eval``)::

    cameras.json                   {"cameras": [...], "heldout": {...} | null}
    frame_TTTT_view_VV.igsi        ground-truth views, float32
    heldout_TTTT.igsi              held-out view (if any)
    flow_TTTT.igsf                 (V, 2, H, W) pixel flow from the frame's deformation source
    frame0.ply                     first-frame Gaussians
    weights.igsw                   motion network weights
    config.yaml                    run configuration matching the weights

Reports are ``key=value`` lines. Failures print one ``error: code=... message=...``
line to stderr and exit with status 2 (usage errors) or 1 (everything else).
``IGS_THREADS`` caps the BLAS/OpenMP thread pools.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _apply_thread_cap() -> None:
    n = os.environ.get("IGS_THREADS")
    if not n:
        return
    if not n.isdigit() or int(n) < 1:
        raise CliError("bad_env", f"IGS_THREADS must be a positive integer, got {n!r}")
    for var in _THREAD_VARS:
        os.environ[var] = n
    if "numpy" in sys.modules:
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:
            return
        threadpool_limits(int(n))


def parse_frames(text):
    """``A..B`` (inclusive) or a single index -> (A, B)."""
    if text is None:
        return None
    a, sep, b = text.partition("..")
    try:
        lo = int(a)
        hi = int(b) if sep else lo
    except ValueError:
        raise CliError("bad_frames", f"expected A..B, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise CliError("bad_frames", f"empty or negative frame range {text!r}")
    return lo, hi


def _emit(lines, out=None) -> None:
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 6)) if abs(v) >= 1e-3 or v == 0 else f"{v:.6e}"
    return str(v)


def _kv(key, value) -> str:
    return f"{key}={_fmt(value)}"


def _need_file(path, what) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError("not_found", f"{what} {path} does not exist")
    return p


def _need_dir(path, what) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError("not_found", f"{what} {path} is not a directory")
    return p


# ---------------------------------------------------------------------------
# dataset helpers
# ---------------------------------------------------------------------------


def frame_name(t: int, v: int) -> str:
    return f"frame_{t:04d}_view_{v:02d}.igsi"


def load_cameras(path, views=None):
    from .core import Camera

    p = Path(path)
    if p.is_dir():
        p = p / "cameras.json"
    _need_file(p, "camera file")
    try:
        data = json.loads(p.read_text())
        cams = [Camera.from_dict(d) for d in data["cameras"]]
        held = Camera.from_dict(data["heldout"]) if data.get("heldout") else None
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError("bad_cameras", f"{p}: {exc}") from None
    if views is not None:
        if views < 1 or views > len(cams):
            raise CliError("bad_views", f"--views {views} outside 1..{len(cams)}")
        cams = cams[:views]
    return cams, held


def save_cameras(path, cameras, heldout=None) -> None:
    data = {"cameras": [c.to_dict() for c in cameras], "heldout": heldout.to_dict() if heldout else None}
    Path(path).write_text(json.dumps(data, indent=1))


def dataset_frame_count(root: Path) -> int:
    t = 0
    while (root / frame_name(t, 0)).is_file():
        t += 1
    return t


def load_video(root: Path, views: int, frames=None) -> list:
    from .motion import read_feature_maps
    from .render import read_igsi
    from .stream import FrameInput

    total = dataset_frame_count(root)
    if total == 0:
        raise CliError("empty_dataset", f"no {frame_name(0, 0)} under {root}")
    lo, hi = frames or (0, total - 1)
    if hi >= total:
        raise CliError("bad_frames", f"dataset has frames 0..{total - 1}, asked for ..{hi}")
    out = []
    for t in range(lo, hi + 1):
        imgs = []
        for v in range(views):
            p = root / frame_name(t, v)
            _need_file(p, "view image")
            imgs.append(read_igsi(p))
        fp = root / f"flow_{t:04d}.igsf"
        flows = None
        if fp.is_file():
            maps = read_feature_maps(fp)
            flows = [maps[v].transpose(1, 2, 0) for v in range(views)]
        out.append(FrameInput(t - lo, imgs, flows))
    return out


def _load_first_frame(path):
    from .codec import import_ply, read_stream

    p = _need_file(path, "input")
    if p.suffix.lower() == ".ply":
        return import_ply(p)
    sf = read_stream(p)
    return sf.decode()[0]


def _load_config(args, dataset: Path = None):
    from .stream import load_config

    path = args.config
    if path is None and dataset is not None and (dataset / "config.yaml").is_file():
        path = dataset / "config.yaml"
    if path is not None:
        _need_file(path, "config")
    try:
        cfg = load_config(path, args.preset)
    except (ValueError, TypeError) as exc:
        raise CliError("bad_config", str(exc)) from None
    if args.seed is not None:
        cfg.refine.seed = args.seed
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_init(args) -> None:
    from .codec import StreamFile, storage_report, write_stream

    gs = _load_first_frame(args.input)
    cfg = _load_config(args)
    sf = StreamFile(1, cfg.w, gs.sh_degree)
    sf.add_keyframe(0, gs)
    nbytes = write_stream(args.out, sf)
    _emit([_kv("frames", 1), _kv("gaussians", gs.count), _kv("sh_degree", gs.sh_degree),
           _kv("storage_bytes_per_frame", storage_report(sf)), _kv("file_bytes", nbytes)])


def cmd_stream(args) -> None:
    import dataclasses

    from .codec import container_overhead, storage_report, stream_from_result, write_stream
    from .motion import load_weights
    from .stream import build_schedule, run_stream

    root = _need_dir(args.video, "video directory")
    cfg = _load_config(args, root)
    cams, _ = load_cameras(root, args.views)
    frames = parse_frames(args.frames)
    if frames and frames[0] != 0:
        raise CliError("bad_frames", "streaming starts at frame 0; use --frames 0..B")
    wpath = Path(args.weights) if args.weights else root / "weights.igsw"
    _need_file(wpath, "weights")
    weights = load_weights(wpath)
    mcfg = dataclasses.replace(cfg.motion, views=len(cams))
    if mcfg.channels != weights.channels:
        raise CliError("weights_mismatch", f"weights have {weights.channels} channels, config says {mcfg.channels}")
    first = _load_first_frame(args.input)
    video = load_video(root, len(cams), frames)
    schedule = build_schedule(len(video), cfg.w)
    extractor = cfg.extractor
    if extractor == "oracle" and any(f.flows is None for f in video[1:]):
        raise CliError("missing_flow", "oracle extractor needs flow_TTTT.igsf for every frame after 0")
    result = run_stream(first, video, schedule, weights, cfg.refine, cams, mcfg, extractor, cfg.background)
    sf = stream_from_result(result, schedule)
    nbytes = write_stream(args.out, sf)
    rep = result.report
    lines = [
        _kv("frames", len(video)),
        _kv("w", cfg.w),
        _kv("keyframes", len(schedule.keyframe_indices)),
        _kv("refinements", rep.refinements),
        _kv("refined_keyframes", ",".join(str(k) for k in schedule.keyframe_indices if k > 0)),
        _kv("candidates", rep.candidates),
        _kv("storage_bytes_per_frame", storage_report(sf)),
        _kv("container_overhead_bytes", container_overhead(sf)),
        _kv("file_bytes", nbytes),
        _kv("seconds_per_frame", rep.average_seconds),
    ]
    for t, gs in enumerate(result.frames):
        lines.append(_kv(f"frame_{t:04d}_gaussians", gs.count))
    _emit(lines, args.report)


def _decoded(path, frames):
    from .codec import read_stream

    sf = read_stream(_need_file(path, "stream"))
    decoded = sf.decode()
    lo, hi = frames or (0, max(decoded))
    missing = [t for t in range(lo, hi + 1) if t not in decoded]
    if missing:
        raise CliError("bad_frames", f"stream has no frame(s) {missing[:5]}")
    return sf, {t: decoded[t] for t in range(lo, hi + 1)}


def cmd_render(args) -> None:
    import numpy as np

    from .render import rasterize, write_igsi, write_png

    cams, held = load_cameras(args.cameras, args.views)
    _, frames = _decoded(args.stream, parse_frames(args.frames))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bg = np.asarray(args.background, dtype=np.float64)
    n = 0
    for t, gs in frames.items():
        for v, cam in enumerate(cams):
            img = rasterize(gs, cam, bg).color
            write_igsi(out / frame_name(t, v), img)
            if args.png:
                write_png(out / frame_name(t, v).replace(".igsi", ".png"), img)
            n += 1
        if held is not None and args.heldout:
            write_igsi(out / f"heldout_{t:04d}.igsi", rasterize(gs, held, bg).color)
    _emit([_kv("frames", len(frames)), _kv("views", len(cams)), _kv("images", n), _kv("out", out)])


def cmd_eval(args) -> None:
    import numpy as np

    from .codec import MetricsReport, psnr, ssim, storage_report
    from .render import rasterize, read_igsi

    root = _need_dir(args.gt, "ground-truth directory")
    cams, held = load_cameras(args.cameras or root, args.views)
    sf, frames = _decoded(args.stream, parse_frames(args.frames))
    bg = np.asarray(args.background, dtype=np.float64)
    report = MetricsReport(storage_bytes_per_frame=storage_report(sf))
    for t, gs in frames.items():
        if args.heldout:
            if held is None:
                raise CliError("no_heldout", "camera file has no held-out camera")
            pairs = [(held, root / f"heldout_{t:04d}.igsi")]
        else:
            pairs = [(cam, root / frame_name(t, v)) for v, cam in enumerate(cams)]
        ps, ss = [], []
        for cam, p in pairs:
            gt = read_igsi(_need_file(p, "ground-truth image"))
            img = rasterize(gs, cam, bg).color
            if img.values.shape != gt.values.shape:
                raise CliError("dim_mismatch", f"{p.name}: rendered {img.values.shape} vs {gt.values.shape}")
            ps.append(psnr(img, gt))
            ss.append(ssim(img, gt))
        report.add_scores(np.mean(ps), np.mean(ss))
    _emit(report.to_text().rstrip("\n").split("\n"), args.report)


def cmd_synth(args) -> None:
    import dataclasses

    import numpy as np
    import yaml

    from .codec import export_ply
    from .motion import MotionConfig, save_weights, write_feature_maps
    from .render import write_igsi, write_png
    from .synth import SceneSpec, calibrate_oracle_weights, generate_sequence

    spec = SceneSpec.load(_need_file(args.spec, "scene spec")) if args.spec else SceneSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    if args.views is not None:
        spec = dataclasses.replace(spec, views=args.views)
    frames = parse_frames(args.frames)
    if frames:
        if frames[0] != 0:
            raise CliError("bad_frames", "a synthetic dataset starts at frame 0; use --frames 0..B")
        spec = dataclasses.replace(spec, frames=frames[1] + 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seq = generate_sequence(spec)
    save_cameras(out / "cameras.json", seq.cameras, seq.heldout)
    (out / "scene.yaml").write_text(yaml.safe_dump(spec.to_dict(), sort_keys=True))
    export_ply(out / "frame0.ply", seq.gaussians(0))
    for t in range(spec.frames):
        for v in range(spec.views):
            write_igsi(out / frame_name(t, v), seq.images[t][v])
            if args.png:
                write_png(out / frame_name(t, v).replace(".igsi", ".png"), seq.images[t][v])
        if seq.heldout is not None:
            write_igsi(out / f"heldout_{t:04d}.igsi", seq.heldout_images[t])
        if t > 0:
            src = (t // args.w) * args.w
            if src == t:
                src = t - args.w
            flows = np.stack([seq.flow(src, t, v).transpose(2, 0, 1) for v in range(spec.views)])
            write_feature_maps(out / f"flow_{t:04d}.igsf", flows)
    lines = [_kv("frames", spec.frames), _kv("views", spec.views), _kv("gaussians", spec.gaussian_count)]
    if not args.no_weights:
        mcfg = MotionConfig(anchors=min(256, max(spec.gaussian_count, 1)), channels=8,
                            grid_width=spec.width, grid_height=spec.height, views=spec.views)
        weights, cal = calibrate_oracle_weights(spec, mcfg)
        save_weights(out / "weights.igsw", weights)
        run = {
            "w": args.w,
            "extractor": "oracle",
            "background": list(spec.background),
            "refine": {"n_max": int(round(spec.gaussian_count * 1.05)), "seed": spec.seed},
            "motion": {"m_anchors": mcfg.anchors, "channels": mcfg.channels,
                       "grid_width": mcfg.grid_width, "grid_height": mcfg.grid_height},
        }
        (out / "config.yaml").write_text(yaml.safe_dump(run, sort_keys=True))
        lines.append(_kv("calibration_residual", float(cal.residual)))
    lines.append(_kv("out", out))
    _emit(lines)


def cmd_inspect(args) -> None:
    from .codec import container_overhead, read_stream, storage_report

    sf = read_stream(_need_file(args.stream, "stream"))
    lines = [
        _kv("magic", "IGSS"), _kv("version", sf.version), _kv("frame_count", sf.frame_count),
        _kv("w", sf.w), _kv("sh_degree", sf.sh_degree), _kv("chunks", len(sf.chunks)),
    ]
    count = 0
    for c in sf.chunks:
        if c.kind == "KEY":
            count = int.from_bytes(c.payload[:4], "little")
            extra = f"gaussians={count}"
        else:
            import numpy as np

            mask = np.unpackbits(np.frombuffer(c.payload[: (count + 7) // 8], dtype=np.uint8), count=count,
                                 bitorder="little")
            extra = f"moved={int(mask.sum())}"
        lines.append(f"chunk frame={c.frame} kind={c.kind} bytes={c.size} {extra}")
    lines += [_kv("storage_bytes_per_frame", storage_report(sf)), _kv("container_overhead_bytes", container_overhead(sf))]
    _emit(lines)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p, out_required=False, out_help="output path"):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--preset", choices=["igs-s", "igs-l"], help="refinement preset (50 or 100 iterations)")
    p.add_argument("--seed", type=int, help="random seed override")
    p.add_argument("--frames", metavar="A..B", help="inclusive frame range")
    p.add_argument("--views", type=int, help="use only the first N cameras")
    p.add_argument("--out", required=out_required, help=out_help)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more output on stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="igs",
        description="Streaming Gaussian free-viewpoint video tools.",
        epilog=(
            "common flags: --config PATH, --preset {igs-s,igs-l}, --seed N, --frames A..B, "
            "--views N, --out PATH, -v/--verbose. "
            "Environment: IGS_THREADS caps internal thread pools."
        ),
    )
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("init", help="import frame 0 (PLY) into a single-keyframe stream")
    p.add_argument("input", help="first-frame PLY (or an existing stream)")
    _common(p, True, "output stream (.igss)")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("stream", help="stream a multi-view video into an IGSS file")
    p.add_argument("input", help="first frame: PLY or stream whose frame 0 is used")
    p.add_argument("video", help="dataset directory with views, cameras.json and flows")
    p.add_argument("--weights", help="motion weights (.igsw); default VIDEO/weights.igsw")
    p.add_argument("--report", help="also write the report to this file")
    _common(p, True, "output stream (.igss)")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("render", help="decode a stream and render every frame")
    p.add_argument("stream")
    p.add_argument("cameras", help="cameras.json or a dataset directory")
    p.add_argument("--png", action="store_true", help="also write 8-bit PNGs")
    p.add_argument("--heldout", action="store_true", help="also render the held-out camera")
    p.add_argument("--background", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    _common(p, True, "output directory")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR / SSIM / D-SSIM / storage of a stream against ground truth")
    p.add_argument("stream")
    p.add_argument("gt", help="directory of ground-truth frame_TTTT_view_VV.igsi images")
    p.add_argument("--cameras", help="cameras.json (default GT/cameras.json)")
    p.add_argument("--heldout", action="store_true", help="score the held-out camera only")
    p.add_argument("--report", help="also write the report to this file")
    p.add_argument("--background", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    _common(p, False, "unused; kept for a uniform flag set")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset and calibrated weights")
    p.add_argument("spec", nargs="?", help="scene spec YAML (defaults if omitted)")
    p.add_argument("--w", type=int, default=5, help="keyframe interval the flows are relative to")
    p.add_argument("--png", action="store_true", help="also write 8-bit PNG previews")
    p.add_argument("--no-weights", action="store_true", help="skip weight calibration")
    _common(p, True, "output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="print header, chunk table and sizes of a stream")
    p.add_argument("stream")
    _common(p, False, "unused; kept for a uniform flag set")
    p.set_defaults(func=cmd_inspect)
    return ap


def _error_code(exc: Exception) -> str:
    code = getattr(exc, "code", None)
    if isinstance(code, str):
        return code
    name = type(exc).__name__
    return {
        "PlyFormatError": "bad_ply",
        "ImageFormatError": "bad_image",
        "WeightsFormatError": "bad_weights",
        "FeatureError": "bad_features",
        "ValidationError": "invalid_data",
        "FileNotFoundError": "not_found",
        "PermissionError": "permission_denied",
    }.get(name, "invalid_input" if isinstance(exc, ValueError) else "internal")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        if getattr(args, "w", 1) < 1:
            raise CliError("bad_config", "--w must be >= 1")
        args.func(args)
    except Exception as exc:  # one machine-parsable line, never a traceback
        code = _error_code(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        msg = msg[len(code) + 2:] if msg.startswith(code + ": ") else msg
        sys.stderr.write(f"error: code={code} message={msg}\n")
        if getattr(args, "verbose", 0):
            import traceback

            traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
