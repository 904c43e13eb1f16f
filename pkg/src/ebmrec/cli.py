"""Command-line entry points for phantom generation, masks, training, reconstruction.

Commands
    phantom   write a reproducible CIMG dataset plus manifest
    mask      generate and save an under-sampling mask
    train     train the energy prior, writing checkpoint + CSV log
    recon     reconstruct a measurement (or simulate one from an image)
    eval      PSNR/SSIM of result vs reference (single pair or manifest batch)
    sample    unconditional annealed Langevin samples from a checkpoint

Every command is deterministic given (config, seed): reruns produce
byte-identical outputs, except wallclock fields in train_log.csv and
report.json.  Outputs are staged and renamed as a group, so failures leave no
partial files behind.
"""

from __future__ import annotations

import os

# honor the thread cap before numpy spins up its BLAS pool
_threads = os.environ.get("EBMREC_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import formats
from .config import ConfigError, ExperimentConfig
from .energy import grad_input, init_params
from .kspace import KSpaceMeasurement, forward, make_mask, zero_filled
from .metrics import evaluate_pair
from .numerics import RandomStream, channels_to_complex, uniform
from .phantom import make_dataset, simulate_sensitivities
from .recon import reconstruct
from .sampler import langevin_step
from .trainer import AdamState, train

__all__ = ["main"]

METRICS_HEADER = "image_id,mask,R,psnr_db,ssim\n"


def _metrics_row(image_id: str, mask_label: str, accel, report) -> str:
    r = "" if accel is None else f"{float(accel):g}"
    return f"{image_id},{mask_label},{r},{report.psnr_db:.6f},{report.ssim:.6f}\n"


def _load_config(args) -> ExperimentConfig:
    overrides = [tuple(s.split("=", 1)) for s in (args.set or [])]
    for flag, dotted in (
        ("R", "mask.r"),
        ("pattern", "mask.pattern"),
        ("lam", "recon.lambda"),
        ("init", "recon.init"),
        ("levels", "sample.levels"),
        ("steps", "sample.steps"),
        ("eps", "sample.eps"),
    ):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append((dotted, str(val)))
    if args.seed is not None:
        overrides.append(("experiment.seed", str(args.seed)))
    cfg_path = Path(args.config) if args.config else None
    if cfg_path is not None and not cfg_path.exists():
        raise FileNotFoundError(f"config file not found: {cfg_path}")
    return ExperimentConfig.load(cfg_path, overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# Commands


def cmd_phantom(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    spec = cfg.phantom_spec()
    count = cfg.get("data", "count")
    train_set, test_set = make_dataset(spec, count, RandomStream(cfg.seed))

    entries = []
    with formats.OutputSet() as outputs:
        for i, img in enumerate(train_set + test_set):
            name = f"phantom_{i:04d}.cimg"
            outputs.stage(out / name, formats.image_to_bytes(img))
            entries.append({"file": name, "split": "train" if i < len(train_set) else "test"})
        manifest = {
            "count": count,
            "height": spec.height,
            "width": spec.width,
            "seed": cfg.seed,
            "images": entries,
        }
        outputs.stage(out / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())
        outputs.stage(out / "config.echo.ini", cfg.render().encode())
    print(f"wrote {count} phantoms + manifest to {out}")
    return 0


def cmd_mask(args) -> int:
    cfg = _load_config(args)
    h, w = cfg.get("data", "height"), cfg.get("data", "width")
    mask = make_mask(
        cfg.get("mask", "pattern"),
        cfg.get("mask", "r"),
        h,
        w,
        cfg.get("mask", "center_fraction"),
        RandomStream(cfg.seed, stream=1),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.save_mask(out, mask)
    print(
        f"{mask.pattern} R={mask.accel:g} {h}x{w}: kept fraction "
        f"{mask.kept_fraction:.4f} (target {1.0 / mask.accel:.4f})"
    )
    return 0


def _load_dataset(cfg: ExperimentConfig) -> list[np.ndarray]:
    manifest_path = cfg.get("data", "manifest")
    if manifest_path:
        mpath = _require(Path(manifest_path), "manifest")
        manifest = json.loads(mpath.read_text())
        base = mpath.parent
        return [
            formats.load_image(base / e["file"])
            for e in manifest["images"]
            if e["split"] == "train"
        ]
    spec = cfg.phantom_spec()
    train_set, _ = make_dataset(spec, cfg.get("data", "count"), RandomStream(cfg.seed))
    return train_set


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    dataset = _load_dataset(cfg)
    tcfg = cfg.train_config()
    arch = cfg.architecture()
    base = RandomStream(cfg.seed, stream=2)

    start_iteration = 0
    adam = None
    if args.resume:
        params, extras = formats.load_checkpoint(_require(args.resume, "checkpoint"))
        if params.arch != arch:
            raise ConfigError("resume checkpoint architecture differs from config")
        start_iteration = int(extras["iteration"][0])
        adam = AdamState(
            m={k: extras[f"adam.m.{k}"] for k in params.tensors},
            v={k: extras[f"adam.v.{k}"] for k in params.tensors},
            t=int(extras["adam.t"][0]),
            lr=tcfg.lr,
        )
    else:
        params = init_params(arch, base.child(0))

    result = train(
        dataset,
        tcfg,
        base.child(1 + start_iteration),
        params,
        adam=adam,
        start_iteration=start_iteration,
        log_path=out / "train_log.csv",
    )
    extras = {
        "iteration": np.array([float(result.iterations_done)]),
        "adam.t": np.array([float(result.adam.t)]),
    }
    for k in result.params.tensors:
        extras[f"adam.m.{k}"] = result.adam.m[k]
        extras[f"adam.v.{k}"] = result.adam.v[k]
    formats.save_checkpoint(out / "checkpoint.ebmw", result.params, extras)
    with formats.atomic_write(out / "config.echo.ini") as fh:
        fh.write(cfg.render().encode())
    print(
        f"trained {tcfg.iterations} iterations (total {result.iterations_done}); "
        f"checkpoint -> {out / 'checkpoint.ebmw'}"
    )
    return 0


def _make_measurement(args, cfg: ExperimentConfig):
    """Load k-space directly, or simulate it from a reference image + mask."""
    mask = formats.load_mask(_require(args.mask, "mask file"))
    coils = None
    mode = cfg.get("recon", "mode")
    if args.kspace:
        data = formats.load_image(_require(args.kspace, "k-space file"))
        y = KSpaceMeasurement(data=data, mask=mask, noise_std=0.0)
    else:
        img = formats.load_image(_require(args.image, "image file"))
        n_coils = args.coils or 1
        if n_coils > 1:
            coils = simulate_sensitivities(n_coils, mask.shape)
        stream = RandomStream(cfg.seed, stream=3)
        y = forward(img, mask, coils, noise_std=args.noise_std, stream=stream)
    if mode == "parallel_sens" and coils is None:
        coils = simulate_sensitivities(y.n_coils, mask.shape)
    return y, coils


def cmd_recon(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    if not args.kspace and not args.image:
        raise ConfigError("recon needs --kspace or --image")
    params, _ = formats.load_checkpoint(_require(args.checkpoint, "checkpoint"))
    y, coils = _make_measurement(args, cfg)
    rcfg = cfg.recon_config()
    reference = formats.load_image(_require(args.ref, "reference")) if args.ref else None
    if reference is None and args.image:
        reference = formats.load_image(Path(args.image))

    stream = RandomStream(cfg.seed, stream=4)
    t0 = time.monotonic()
    report = reconstruct(y, params, rcfg, stream, coils=coils, reference=reference)
    zf = zero_filled(y, coils if rcfg.mode == "parallel_sens" else None)

    with formats.OutputSet() as outputs:
        outputs.stage(out / "recon.cimg", formats.image_to_bytes(report.image))
        outputs.stage(out / "zero_filled.cimg", formats.image_to_bytes(zf))
        if reference is not None:
            trace = "iter,psnr_db\n" + "".join(
                f"{i},{p:.6f}\n" for i, p in enumerate(report.psnr_trace)
            )
            outputs.stage(out / "trace.csv", trace.encode())
            m_rec = evaluate_pair(reference, report.image)
            m_zf = evaluate_pair(reference, zf)
            rows = METRICS_HEADER
            rows += _metrics_row("recon", y.mask.pattern, y.mask.accel, m_rec)
            rows += _metrics_row("zero_filled", y.mask.pattern, y.mask.accel, m_zf)
            outputs.stage(out / "metrics.csv", rows.encode())
        if cfg.get("output", "png"):
            peak = float(np.abs(reference).max()) if reference is not None else None
            outputs.stage(out / "magnitude.png", formats.magnitude_png_bytes(report.image, peak))
            if reference is not None:
                outputs.stage(out / "error.png", formats.error_png_bytes(report.image, reference))
        meta = {
            "mode": rcfg.mode,
            "lambda": rcfg.lam,
            "init": rcfg.init,
            "pattern": y.mask.pattern,
            "R": y.mask.accel,
            "final_psnr": report.final_psnr,
            "wallclock_s": time.monotonic() - t0,
        }
        outputs.stage(out / "report.json", (json.dumps(meta, indent=2) + "\n").encode())
        outputs.stage(out / "config.echo.ini", cfg.render().encode())
    if report.final_psnr is not None:
        print(f"reconstructed: PSNR {report.final_psnr:.2f} dB -> {out}")
    else:
        print(f"reconstructed -> {out}")
    return 0


def cmd_eval(args) -> int:
    rows = METRICS_HEADER
    if args.manifest:
        mpath = _require(args.manifest, "manifest")
        results_dir = _require(args.results, "results directory")
        manifest = json.loads(mpath.read_text())
        base = mpath.parent
        for entry in manifest["images"]:
            if entry["split"] != "test":
                continue
            ref = formats.load_image(base / entry["file"])
            stem = Path(entry["file"]).stem
            res_path = results_dir / f"{stem}_recon.cimg"
            res = formats.load_image(_require(res_path, "result"))
            rows += _metrics_row(stem, args.mask_label, args.R, evaluate_pair(ref, res))
    else:
        if not args.result or not args.reference:
            raise ConfigError("eval needs RESULT and REFERENCE paths (or --manifest)")
        res = formats.load_image(_require(args.result, "result"))
        ref = formats.load_image(_require(args.reference, "reference"))
        image_id = Path(args.result).stem
        rows += _metrics_row(image_id, args.mask_label, args.R, evaluate_pair(ref, res))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with formats.atomic_write(Path(args.out)) as fh:
            fh.write(rows.encode())
    sys.stdout.write(rows)
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    params, _ = formats.load_checkpoint(_require(args.checkpoint, "checkpoint"))
    sched = cfg.schedule()
    h, w = cfg.get("data", "height"), cfg.get("data", "width")
    stream = RandomStream(cfg.seed, stream=5)

    grad_fn = lambda x, s: grad_input(params, x, s)
    with formats.OutputSet() as outputs:
        for k in range(args.count):
            chain = stream.child(k)
            x = uniform(chain, (2, h, w), -1.0, 1.0)
            for i, sigma in enumerate(sched.sigmas):
                step = sched.step_size(i)
                sig = sigma if params.arch.conditional else None
                for _ in range(sched.inner_steps):
                    x = langevin_step(grad_fn, x, step, sig, chain)
                    np.clip(x, -1.5, 1.5, out=x)
            img = channels_to_complex(x)
            outputs.stage(out / f"sample_{k:03d}.cimg", formats.image_to_bytes(img))
            if cfg.get("output", "png"):
                outputs.stage(out / f"sample_{k:03d}.png", formats.magnitude_png_bytes(img))
        outputs.stage(out / "config.echo.ini", cfg.render().encode())
    print(f"wrote {args.count} samples to {out}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(p: argparse.ArgumentParser, out_default: str | None = None) -> None:
    p.add_argument("--config", help="experiment config file (INI sections)")
    p.add_argument("--seed", type=int, help="override [experiment] seed")
    p.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override any config value (repeatable)",
    )
    if out_default is not None:
        p.add_argument("--out", default=out_default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ebmrec",
        description="Energy-based prior training and under-sampled MRI reconstruction",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a phantom dataset")
    _add_common(p, out_default="out/phantoms")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("mask", help="generate an under-sampling mask")
    _add_common(p)
    p.add_argument("--out", default="out/mask.mask", help="output mask file")
    p.add_argument("--R", type=float, help="acceleration factor")
    p.add_argument("--pattern", choices=("cartesian1d", "pseudo_radial", "random2d", "poisson_disk"))
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train the energy prior")
    _add_common(p, out_default="out/train")
    p.add_argument("--resume", help="continue from an existing checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recon", help="reconstruct a measurement")
    _add_common(p, out_default="out/recon")
    p.add_argument("--checkpoint", required=True, help="trained EBMW1 checkpoint")
    p.add_argument("--kspace", help="measured k-space (CIMG)")
    p.add_argument("--image", help="simulate the measurement from this image (CIMG)")
    p.add_argument("--mask", required=True, help="sampling mask (MASK1)")
    p.add_argument("--ref", help="reference image for PSNR trace and error map")
    p.add_argument("--coils", type=int, help="simulate this many coils")
    p.add_argument("--noise-std", type=float, default=0.0, help="measurement noise std")
    p.add_argument("--lam", "--lambda", dest="lam", type=float, help="consistency weight")
    p.add_argument("--init", choices=("uniform_noise", "zero_filled"))
    p.add_argument("--levels", type=int, help="number of noise levels")
    p.add_argument("--steps", type=int, help="Langevin steps per level")
    p.add_argument("--eps", type=float, help="base step size")
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("eval", help="PSNR/SSIM of result vs reference")
    p.add_argument("result", nargs="?", help="result CIMG")
    p.add_argument("reference", nargs="?", help="reference CIMG")
    p.add_argument("--manifest", help="evaluate every test image in this manifest")
    p.add_argument("--results", type=Path, help="directory of <stem>_recon.cimg results")
    p.add_argument("--out", help="also write the CSV here")
    p.add_argument("--mask-label", default="", help="mask column value")
    p.add_argument("--R", type=float, default=None, help="acceleration column value")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="unconditional samples from a checkpoint")
    _add_common(p, out_default="out/samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=4)
    p.set_defaults(func=cmd_sample)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, formats.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
