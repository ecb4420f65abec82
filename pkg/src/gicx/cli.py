"""Command line interface.

Verbs: gen-dataset, train, compress, decompress, sweep, eval. Exit codes:
0 success, 2 usage or parameter problems, 3 malformed or mismatched files,
4 numerical failure.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import resolve_config
from .dataset import (ToyDatasetSpec, generate_toy_dataset, load_dataset, read_ppm,
                      save_dataset, write_ppm)
from .errors import DecodeError, FormatError, NumericError, ParameterError
from .inversion import InversionConfig, write_loss_log
from .metrics import QualityReport, psnr, ssim
from .network import Checkpoint
from .pipeline import compress_image, decompress_stream, train_checkpoint


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, metavar="FILE",
                   help="flat key = value configuration file")
    p.add_argument("--preset", default=None, choices=("toy", "paper"))
    p.add_argument("--seed", type=int, default=None, help="master seed")


def _resolve(args, **extra):
    flags = {"seed": getattr(args, "seed", None)}
    flags.update(extra)
    return resolve_config(preset=args.preset, config_file=args.config, **flags)


def _scale_list(raw: str, flag: str) -> list:
    try:
        values = [float(part) for part in raw.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ParameterError(f"{flag}: cannot parse {raw!r}") from exc
    if not values:
        raise ParameterError(f"{flag}: expected at least one value")
    return values


def cmd_gen_dataset(args) -> int:
    cfg = _resolve(args, dataset_count=args.count, dataset_kind=args.kind)
    spec = ToyDatasetSpec(count=cfg.dataset_count, resolution=cfg.image_size,
                          seed=cfg.dataset_seed, kind=cfg.dataset_kind)
    paths = save_dataset(generate_toy_dataset(spec), args.out)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    images, _ = load_dataset(args.data)
    ckpt, result = train_checkpoint(cfg, images)
    ckpt.save(args.out)
    if args.loss_log:
        with open(args.loss_log, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss"])
            for step, loss in enumerate(result.log.losses):
                writer.writerow([step, f"{loss:.8f}"])
    tail = result.log.losses[-min(50, len(result.log.losses)):]
    print(f"checkpoint {ckpt.ident().hex()} -> {args.out}")
    print(f"trained {cfg.train_steps} steps, final loss {float(np.mean(tail)):.6f}")
    return 0


def cmd_compress(args) -> int:
    cfg = _resolve(args, comp_scale=args.sc, cfg_scale=args.sf)
    ckpt = Checkpoint.load(args.ckpt)
    image = read_ppm(args.image)
    inversion = InversionConfig(steps=cfg.inversion_steps, lr=cfg.inversion_lr,
                                tokens=cfg.embed_tokens,
                                quantizer_levels=cfg.embed_levels, seed=cfg.seed)
    result = compress_image(ckpt, image, inversion=inversion,
                            guidance_levels=cfg.guidance_levels,
                            comp_scale=cfg.comp_scale, cfg_scale=cfg.cfg_scale)
    Path(args.out).write_bytes(result.data)
    if args.loss_log:
        write_loss_log(args.loss_log, result.inversion_log)
    b = result.breakdown
    print(f"embedding: {b['embedding_symbols']} symbols, {b['embedding_bytes']} bytes")
    print(f"guidance: {b['guidance_symbols']} symbols, {b['guidance_bytes']} bytes")
    print(f"container: {b['container_bytes']} bytes")
    print(f"total: {b['total_bytes']} bytes, {b['bpp']:.6f} bpp -> {args.out}")
    return 0


def cmd_decompress(args) -> int:
    cfg = _resolve(args, sampler_steps=args.steps, eta=args.eta)
    ckpt = Checkpoint.load(args.ckpt)
    data = Path(args.input).read_bytes()
    # --sc/--sf override the scales recorded in the stream header
    out = decompress_stream(ckpt, data, samples=args.samples, seed=cfg.seed,
                            num_steps=cfg.sampler_steps, eta=cfg.eta,
                            comp_scale=args.sc, cfg_scale=args.sf)
    target = Path(args.out)
    if args.samples == 1:
        write_ppm(target, out.images[0])
        print(f"wrote {target}")
    else:
        for k, image in enumerate(out.images):
            path = target.with_name(f"{target.stem}_{k:03d}{target.suffix}")
            write_ppm(path, image)
            print(f"wrote {path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args, sampler_steps=args.steps, eta=args.eta)
    ckpt = Checkpoint.load(args.ckpt)
    images, names = load_dataset(args.data)
    sc_values = _scale_list(args.sc, "--sc")
    sf_values = _scale_list(args.sf, "--sf")
    compressed = []
    for i, image in enumerate(images):
        inversion = InversionConfig(steps=cfg.inversion_steps, lr=cfg.inversion_lr,
                                    tokens=cfg.embed_tokens,
                                    quantizer_levels=cfg.embed_levels,
                                    seed=cfg.seed + i)
        compressed.append(compress_image(ckpt, image, inversion=inversion,
                                         guidance_levels=cfg.guidance_levels,
                                         comp_scale=cfg.comp_scale,
                                         cfg_scale=cfg.cfg_scale))
    rows = []
    for sc in sc_values:
        for sf in sf_values:
            cell_psnr, cell_ssim, cell_bpp = [], [], []
            for i, image in enumerate(images):
                out = decompress_stream(ckpt, compressed[i].data, samples=1,
                                        seed=cfg.seed, num_steps=cfg.sampler_steps,
                                        eta=cfg.eta, comp_scale=sc, cfg_scale=sf)
                recon = out.images[0]
                p, s = psnr(recon, image), ssim(recon, image)
                bpp = compressed[i].breakdown["bpp"]
                rows.append((sc, sf, names[i], p, s, bpp))
                cell_psnr.append(p)
                cell_ssim.append(s)
                cell_bpp.append(bpp)
            rows.append((sc, sf, "mean", float(np.mean(cell_psnr)),
                         float(np.mean(cell_ssim)), float(np.mean(cell_bpp))))
            print(f"s_c={sc:g} s_f={sf:g}: mean psnr {np.mean(cell_psnr):.2f} dB, "
                  f"mean ssim {np.mean(cell_ssim):.4f}, mean bpp {np.mean(cell_bpp):.4f}")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s_c", "s_f", "image", "psnr_db", "ssim", "bpp"])
        for sc, sf, name, p, s, bpp in rows:
            writer.writerow([f"{sc:g}", f"{sf:g}", name,
                             f"{p:.4f}", f"{s:.6f}", f"{bpp:.6f}"])
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    ckpt = Checkpoint.load(args.ckpt)
    images, names = load_dataset(args.data)
    report = QualityReport()
    for i, image in enumerate(images):
        inversion = InversionConfig(steps=cfg.inversion_steps, lr=cfg.inversion_lr,
                                    tokens=cfg.embed_tokens,
                                    quantizer_levels=cfg.embed_levels,
                                    seed=cfg.seed + i)
        result = compress_image(ckpt, image, inversion=inversion,
                                guidance_levels=cfg.guidance_levels,
                                comp_scale=cfg.comp_scale, cfg_scale=cfg.cfg_scale)
        out = decompress_stream(ckpt, result.data, samples=1, seed=cfg.seed,
                                num_steps=cfg.sampler_steps, eta=cfg.eta)
        recon = out.images[0]
        report.add(names[i], psnr(recon, image), ssim(recon, image),
                   result.breakdown["bpp"])
    report.write_csv(args.out)
    ratio = report.std_bpp / report.mean_bpp if report.mean_bpp else 0.0
    print(f"images: {len(images)}")
    print(f"mean psnr: {report.mean_psnr:.2f} dB   mean ssim: {report.mean_ssim:.4f}")
    print(f"bpp: mean {report.mean_bpp:.6f}, std {report.std_bpp:.6f} "
          f"(stability {ratio:.4f})")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gicx",
        description="generative image compression: train, compress, reconstruct",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="write a synthetic image corpus")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--kind", default=None,
                   choices=("gradients", "shapes", "textures", "mixed"))
    _add_common(p)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train a checkpoint on a directory of images")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="CKPT")
    p.add_argument("--loss-log", default=None, metavar="CSV")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="compress one image to a bitstream")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, metavar="PPM")
    p.add_argument("--out", required=True, metavar="GICX")
    p.add_argument("--loss-log", default=None, metavar="CSV")
    p.add_argument("--sc", type=float, default=None,
                   help="compression guidance scale recorded in the stream")
    p.add_argument("--sf", type=float, default=None,
                   help="classifier-free guidance scale recorded in the stream")
    _add_common(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="reconstruct images from a bitstream")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, metavar="GICX")
    p.add_argument("--out", required=True, metavar="PPM")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--steps", type=int, default=None, help="sampling steps")
    p.add_argument("--eta", type=float, default=None, help="sampler stochasticity")
    p.add_argument("--sc", type=float, default=None,
                   help="override the stream's compression guidance scale")
    p.add_argument("--sf", type=float, default=None,
                   help="override the stream's classifier-free scale")
    _add_common(p)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("sweep", help="quality grid over guidance scales")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="CSV")
    p.add_argument("--sc", default="0,25,75,215",
                   help="comma-separated compression guidance scales")
    p.add_argument("--sf", default="0.95",
                   help="comma-separated classifier-free scales")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="round-trip quality report for a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="CSV")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"gicx: {exc}", file=sys.stderr)
        return 2
    except (FormatError, DecodeError) as exc:
        print(f"gicx: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"gicx: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"gicx: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
