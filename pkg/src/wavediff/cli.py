"""Command line interface.

One executable, one subcommand per pipeline. Every run writes a JSON manifest
(stable key order, input/output checksums, timings) even when it fails; usage
errors exit 2, runtime failures exit 1 with a machine-readable error record
on stderr. Identical arguments and seed reproduce identical output bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .conditioning import (
    INPAINT_VARIANTS,
    SAMPLERS,
    SYNTH_PIPELINES,
    InpaintRequest,
    SynthRequest,
    known_region_inpaint,
    repaint_inpaint,
    synth_missing,
)
from .denoiser import (
    AffineDenoiser,
    GaussianDataSpec,
    GaussianOracleDenoiser,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    synthetic_latent_cases,
    train_affine,
)
from .errors import OddDimension, WavediffError
from .manifest import ManifestWriter, emit_error, error_record
from .maskgen import PlacementPolicy, place_masks
from .metrics import evaluate
from .nifti import (
    crop_pad,
    pad_to_even,
    read_nifti,
    read_subband_stack,
    write_nifti,
    write_subband_stack,
)
from .objectives import OBJECTIVES
from .schedule import SCHEDULE_KINDS, build_schedule, karras_sigmas
from .selftest import run_selftest
from .volume import MODALITIES, MaskVolume, Volume, denormalize_volume, normalize_volume
from .wavelet import dwt3_channels, idwt3_channels

BIG_GUARDRAIL = 96  # volumes beyond this edge length need --big


def _require_small(dims, big_ok: bool) -> None:
    if max(dims) > BIG_GUARDRAIL and not big_ok:
        raise WavediffError(
            f"volume {dims} exceeds the {BIG_GUARDRAIL}^3 desk-scale guardrail; pass --big to proceed"
        )


def _parse_denoiser(spec: str, sched):
    if spec.startswith("oracle:"):
        kv = {}
        for part in spec[len("oracle:") :].split(","):
            if part:
                key, _, val = part.partition("=")
                kv[key.strip()] = float(val)
        gauss = GaussianDataSpec(mu=kv.get("mu", 0.0), sigma0=kv.get("sigma0", 1.0))
        return GaussianOracleDenoiser(gauss, sched)
    params, _meta = load_checkpoint(spec)
    if params.T != sched.T:
        params = params.copy()
        params.T = sched.T  # bins are relative positions; remap onto the run's schedule
    return AffineDenoiser(params, name=Path(spec).name)


def _load_normalized(path: str):
    vol, hdr = read_nifti(path)
    normed, params = normalize_volume(vol)
    data, pad = pad_to_even(normed.data)
    return Volume(data, spacing=normed.spacing, affine=normed.affine), params, pad, hdr


def _load_mask_padded(path: str) -> MaskVolume:
    mask, _ = read_nifti(path, as_mask=True)
    data, _pad = pad_to_even(mask.data)
    return MaskVolume(data, spacing=mask.spacing)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_dwt(args, mw: ManifestWriter) -> None:
    mw.add_input("in", args.infile)
    if args.forward:
        vol, _ = read_nifti(args.infile)
        _require_small(vol.dims, args.big)
        if any(d % 2 for d in vol.dims):
            raise OddDimension(f"dims {vol.dims} must be even; pad the volume first")
        stack = dwt3_channels(vol.data[None])
        write_subband_stack(stack, args.out)
    else:
        stack = read_subband_stack(args.infile)
        data = idwt3_channels(stack)
        if data.shape[0] != 1:
            raise WavediffError(f"stack holds {data.shape[0]} volumes; expected 1")
        write_nifti(Volume(data[0]), args.out)
    mw.phase("transform")
    mw.add_output("out", args.out)


def _cmd_schedule(args, mw: ManifestWriter) -> None:
    sched = build_schedule(args.kind, args.T)
    mw.set_params(**sched.to_manifest())
    print(f"kind={sched.kind} T={sched.T}")
    print(f"beta_1={sched.beta[0]:.8g} beta_T={sched.beta[-1]:.8g}")
    print(f"alpha_bar_1={sched.alpha_bar[0]:.8g} alpha_bar_T={sched.alpha_bar[-1]:.8g}")
    if args.dump:
        with open(args.dump, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "beta", "alpha", "alpha_bar", "posterior_var"])
            for i in range(sched.T):
                writer.writerow(
                    [i + 1, repr(sched.beta[i]), repr(sched.alpha[i]),
                     repr(sched.alpha_bar[i]), repr(sched.posterior_var[i])]
                )
        mw.add_output("dump", args.dump)
    mw.phase("build")


def _cmd_maskgen(args, mw: ManifestWriter) -> None:
    rng = np.random.default_rng(args.seed)
    brain = _load_mask_padded(args.brain)
    mw.add_input("brain", args.brain)
    m_uh = None
    if args.unhealthy:
        m_uh = _load_mask_padded(args.unhealthy)
        mw.add_input("unhealthy", args.unhealthy)
    policy = PlacementPolicy(max_retries=args.max_retries, source_prob_real=0.0)
    out = Path(args.out)
    for i in range(args.count):
        placed = place_masks(rng, brain, m_uh, policy=policy)
        if args.count == 1:
            target = out
        else:
            stem = out.name
            for ext in (".nii.gz", ".nii"):
                if stem.endswith(ext):
                    stem = stem[: -len(ext)] + f"_{i:03d}" + ext
                    break
            else:
                stem = f"{stem}_{i:03d}"
            target = out.with_name(stem)
        write_nifti(placed.mask, target)
        mw.add_output(f"mask_{i:03d}" if args.count > 1 else "mask", target)
    mw.phase("place")


def _cmd_train(args, mw: ManifestWriter) -> None:
    sched = build_schedule(args.kind, args.T)
    groups = 4 if args.objective == "Dg" else 1
    dataset = synthetic_latent_cases(
        args.synthetic_cases, size=args.size, seed=args.seed, groups=groups,
        masks="empty" if args.empty_masks else "boxes",
    )
    mw.phase("dataset")
    opt = TrainConfig(
        lr=args.lr, iters=args.iters, batch=args.batch, seed=args.seed, bins=args.bins
    )
    result = train_affine(dataset, args.objective, args.lambda1, sched, opt)
    mw.phase("train")
    save_checkpoint(result.params, args.out, objective=args.objective, sched=sched)
    with open(args.loss_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "loss"])
        for i, loss in enumerate(result.losses):
            writer.writerow([i, repr(float(loss))])
    mw.set_params(objective=args.objective, lambda1=args.lambda1, iters=args.iters,
                  final_loss=float(result.losses[-1]), **sched.to_manifest())
    mw.add_output("checkpoint", args.out)
    mw.add_output("checkpoint_meta", str(args.out) + ".json")
    mw.add_output("loss_csv", args.loss_csv)
    mw.phase("save")


def _cmd_inpaint(args, mw: ManifestWriter) -> None:
    scan_path = args.scan if args.variant == "replace" else (args.voided or args.scan)
    if scan_path is None:
        raise WavediffError("pass --scan (replace) or --voided (ak/akh)")
    scan, norm, pad, _hdr = _load_normalized(scan_path)
    _require_small(scan.dims, args.big)
    mw.add_input("scan", scan_path)
    m_h = _load_mask_padded(args.healthy_mask)
    mw.add_input("healthy_mask", args.healthy_mask)
    m_uh = None
    if args.unhealthy_mask:
        m_uh = _load_mask_padded(args.unhealthy_mask)
        mw.add_input("unhealthy_mask", args.unhealthy_mask)
    sched = build_schedule(args.kind, args.T)
    grid = None
    if args.sampler == "dpmpp2m":
        grid = karras_sigmas(args.steps, sigma_min=sched.sigma(1), sigma_max=sched.sigma(sched.T))
    denoiser = _parse_denoiser(args.denoiser, sched)
    req = InpaintRequest(
        scan=scan, m_h=m_h, m_uh=m_uh, variant=args.variant, sched=sched,
        sampler=args.sampler, sigma_grid=grid, seed=args.seed,
    )
    mw.phase("load")
    t0 = time.perf_counter()
    out = repaint_inpaint(denoiser, req) if args.variant == "replace" else known_region_inpaint(denoiser, req)
    elapsed = time.perf_counter() - t0
    steps = sched.T if args.sampler == "ddpm" else args.steps
    mw.set_params(
        variant=args.variant, sampler=args.sampler, denoiser=denoiser.name,
        per_step_s=round(elapsed / max(steps, 1), 6),
        **(sched.to_manifest() if args.sampler == "ddpm" else grid.to_manifest()),
    )
    mw.phase("sample")
    out_data = crop_pad(out.data, pad)
    result = denormalize_volume(Volume(out_data, spacing=out.spacing, affine=out.affine), norm)
    write_nifti(result, args.out)
    mw.add_output("out", args.out)
    mw.phase("save")


def _cmd_synth(args, mw: ManifestWriter) -> None:
    paths = {m: getattr(args, m) for m in MODALITIES}
    if paths[args.missing] is not None:
        raise WavediffError(f"--missing {args.missing} but a path for it was supplied")
    known = {m: p for m, p in paths.items() if p is not None}
    if len(known) != 3:
        raise WavediffError(f"need the 3 known modalities, got {sorted(known)}")
    modalities: dict[str, Volume | None] = {args.missing: None}
    pad = (0, 0, 0)
    for name, p in known.items():
        vol, _norm, pad, _hdr = _load_normalized(p)
        _require_small(vol.dims, args.big)
        modalities[name] = vol
        mw.add_input(name, p)
    sched = build_schedule(args.kind, args.T)
    denoiser = _parse_denoiser(args.denoiser, sched)
    req = SynthRequest(modalities=modalities, pipeline=args.pipeline, sched=sched, seed=args.seed)
    mw.phase("load")
    t0 = time.perf_counter()
    out = synth_missing(denoiser, req)
    mw.set_params(
        pipeline=args.pipeline, missing=args.missing, denoiser=denoiser.name,
        per_step_s=round((time.perf_counter() - t0) / sched.T, 6), **sched.to_manifest(),
    )
    mw.phase("sample")
    result = Volume(crop_pad(out.data, pad), spacing=out.spacing, affine=out.affine)
    write_nifti(result, args.out)
    mw.add_output("out", args.out)
    mw.phase("save")


def _cmd_metrics(args, mw: ManifestWriter) -> None:
    pred, _ = read_nifti(args.pred)
    ref, _ = read_nifti(args.ref)
    roi, _ = read_nifti(args.roi, as_mask=True)
    for name, p in (("pred", args.pred), ("ref", args.ref), ("roi", args.roi)):
        mw.add_input(name, p)
    pred_d, ref_d = pred.data, ref.data
    if args.rescale:
        lo, hi = float(ref_d.min()), float(ref_d.max())
        if hi > lo:
            ref_d = (ref_d - lo) / (hi - lo)
            pred_d = np.clip((pred_d - lo) / (hi - lo), 0.0, 1.0)
    records = [evaluate(pred_d, ref_d, roi.data, data_range=args.data_range).to_record(
        Path(args.pred).name)]
    if args.tumor_roi:
        troi, _ = read_nifti(args.tumor_roi, as_mask=True)
        mw.add_input("tumor_roi", args.tumor_roi)
        rec = evaluate(pred_d, ref_d, troi.data, data_range=args.data_range).to_record(
            Path(args.pred).name)
        rec["roi"] = "tumor"
        records.append(rec)
    finite = [r["mse"] for r in records]
    doc = {
        "task": args.task,
        "records": records,
        "aggregate": {
            "mse_mean": float(np.mean(finite)),
            "mse_std": float(np.std(finite)),
            "n": len(records),
        },
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
        mw.add_output("report", args.out)
    else:
        print(text)
    mw.set_params(task=args.task)
    mw.phase("evaluate")


def _cmd_selftest(args, mw: ManifestWriter) -> None:
    results = run_selftest(verbose=True)
    mw.set_params(results={name: ok for name, ok, _ in results})
    failures = [name for name, ok, _ in results if not ok]
    mw.phase("checks")
    if failures:
        raise WavediffError(f"selftest failures: {failures}")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavediff", description=__doc__)
    p.add_argument("--version", action="version", version=f"wavediff {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--manifest", default=None, help="manifest path (default: derived)")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("dwt", help="forward/inverse wavelet transform of a volume file")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--forward", action="store_true")
    g.add_argument("--inverse", action="store_true")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--big", action="store_true")
    common(sp, seed=False)

    sp = sub.add_parser("schedule", help="print/save a noise schedule table")
    sp.add_argument("--kind", choices=SCHEDULE_KINDS, required=True)
    sp.add_argument("--T", type=int, required=True)
    sp.add_argument("--dump", default=None, help="write the full table as CSV")
    common(sp, seed=False)

    sp = sub.add_parser("maskgen", help="place synthetic inpainting masks")
    sp.add_argument("--brain", required=True)
    sp.add_argument("--unhealthy", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--max-retries", type=int, default=200)
    common(sp)

    sp = sub.add_parser("train", help="train the affine denoiser on synthetic cases")
    sp.add_argument("--objective", choices=OBJECTIVES, required=True)
    sp.add_argument("--lambda1", type=float, default=10.0)
    sp.add_argument("--iters", type=int, default=2000)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--bins", type=int, default=4)
    sp.add_argument("--T", type=int, default=1000)
    sp.add_argument("--kind", choices=SCHEDULE_KINDS, default="linear")
    sp.add_argument("--synthetic-cases", type=int, default=8)
    sp.add_argument("--size", type=int, default=16)
    sp.add_argument("--empty-masks", action="store_true",
                    help="build the synthetic cases with all-zero masks")
    sp.add_argument("--out", required=True, help="checkpoint blob path")
    sp.add_argument("--loss-csv", required=True)
    common(sp)

    sp = sub.add_parser("inpaint", help="inpaint the healthy-mask region of a scan")
    sp.add_argument("--variant", choices=INPAINT_VARIANTS, required=True)
    sp.add_argument("--scan", default=None, help="full reference scan (replace)")
    sp.add_argument("--voided", default=None, help="voided scan (ak/akh)")
    sp.add_argument("--healthy-mask", required=True)
    sp.add_argument("--unhealthy-mask", default=None)
    sp.add_argument("--sampler", choices=SAMPLERS, default="ddpm")
    sp.add_argument("--T", type=int, default=1000)
    sp.add_argument("--kind", choices=SCHEDULE_KINDS, default="linear")
    sp.add_argument("--steps", type=int, default=50, help="sigma-grid size for dpmpp2m")
    sp.add_argument("--denoiser", required=True, help="checkpoint path or oracle:mu=..,sigma0=..")
    sp.add_argument("--out", required=True)
    sp.add_argument("--big", action="store_true")
    common(sp)

    sp = sub.add_parser("synth", help="generate the missing modality from the other three")
    sp.add_argument("--pipeline", choices=SYNTH_PIPELINES, required=True)
    sp.add_argument("--missing", choices=MODALITIES, required=True)
    for m in MODALITIES:
        sp.add_argument(f"--{m}", default=None)
    sp.add_argument("--T", type=int, default=1000)
    sp.add_argument("--kind", choices=SCHEDULE_KINDS, default="linear")
    sp.add_argument("--denoiser", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--big", action="store_true")
    common(sp)

    sp = sub.add_parser("metrics", help="ROI-restricted MSE/PSNR/SSIM report")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--roi", required=True)
    sp.add_argument("--task", choices=("inpaint", "synth"), default="inpaint")
    sp.add_argument("--tumor-roi", default=None)
    sp.add_argument("--data-range", type=float, default=1.0)
    sp.add_argument("--no-rescale", dest="rescale", action="store_false",
                    help="skip mapping intensities into [0,1] via the reference window")
    sp.add_argument("--out", default=None)
    common(sp, seed=False)

    sp = sub.add_parser("selftest", help="run the built-in invariant battery")
    common(sp, seed=False)

    return p


HANDLERS = {
    "dwt": _cmd_dwt,
    "schedule": _cmd_schedule,
    "maskgen": _cmd_maskgen,
    "train": _cmd_train,
    "inpaint": _cmd_inpaint,
    "synth": _cmd_synth,
    "metrics": _cmd_metrics,
    "selftest": _cmd_selftest,
}


def _default_manifest(args: argparse.Namespace) -> str:
    out = getattr(args, "out", None)
    if out:
        return str(out) + ".manifest.json"
    return f"wavediff-{args.command}.manifest.json"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    manifest_path = args.manifest or _default_manifest(args)
    public_args = {k: v for k, v in vars(args).items() if k not in ("manifest",)}
    mw = ManifestWriter(args.command, public_args, manifest_path, __version__)
    try:
        HANDLERS[args.command](args, mw)
    except Exception as exc:  # noqa: BLE001 - every failure becomes exit 1 + record
        mw.finish("error", error_record(exc))
        emit_error(exc)
        return 1
    mw.finish("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
