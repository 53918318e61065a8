"""``perfrec`` command line: reproducible pipelines over the library modules.

Every subcommand resolves its parameters, echoes them to ``run.json`` in the
output directory (paths excluded, so a rerun into a different directory is
byte-identical), and writes tensors/CSV/JSON via tensorio.  Exit codes:
0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import tensorio
from .errors import InputError, PerfrecError
from .phantom import (
    PhantomConfig,
    build_phantom,
    load_phantom,
    save_phantom,
)
from .projector import (
    Geometry,
    ScanProtocol,
    load_sinogram,
    make_protocol,
    project_dynamic,
    save_sinogram,
)
from .recon import ReconConfig, reconstruct_static, reconstruct_sweeps
from .segeval import (
    ALPHA,
    confusion_counts,
    largest_component,
    mann_whitney_u,
    metrics,
)
from .datasetgen import (
    generate_suite,
    make_tac_library,
    suite_config_from_dict,
    SuiteConfig,
)
from .tst import (
    first_coeff_image,
    harmonic_basis,
    save_basis,
    svd_basis,
    tst_reconstruct,
)

METRIC_HEADER = ["pred", "gt", "dice", "iou", "precision", "sensitivity", "specificity"]


def thread_cap() -> int:
    """Worker-parallelism cap from PERFREC_THREADS (default 1)."""
    raw = os.environ.get("PERFREC_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise InputError(f"PERFREC_THREADS must be an integer, got {raw!r}") from exc
    return max(1, cap)


def _write_run(out_dir, subcommand: str, params: dict) -> None:
    """Echo the fully-resolved run so it can be replayed; output paths are
    not part of the record."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_json(out / "run.json", {"subcommand": subcommand, "params": params})


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _phantom_config(d: dict) -> PhantomConfig:
    known = PhantomConfig.__dataclass_fields__
    unknown = set(d) - set(known)
    if unknown:
        raise InputError(f"unknown phantom config keys: {sorted(unknown)}")
    coerced = {
        k: tuple(v) if isinstance(known[k].default, tuple) else v for k, v in d.items()
    }
    return PhantomConfig(**coerced)


def cmd_phantom(args) -> int:
    cfg_dict = _load_config_file(args.config)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    config = _phantom_config(cfg_dict)
    phantom = build_phantom(config)
    save_phantom(phantom, args.out)
    tensorio.write_tensor(Path(args.out) / "mask.tsr", phantom.liver_mask())
    _write_run(args.out, "phantom", {"config": asdict(config)})
    print(f"phantom: {phantom.labels.shape[0]}x{phantom.labels.shape[1]}, "
          f"labels {sorted(int(v) for v in np.unique(phantom.labels))} -> {args.out}")
    return 0


def cmd_protocol(args) -> int:
    protocol = make_protocol(
        args.sweeps,
        args.arc,
        args.step,
        args.sweep_duration,
        args.pause,
        not args.no_alternate,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_json(out / "protocol.json", protocol.to_dict())
    _write_run(
        args.out,
        "protocol",
        {
            "sweeps": args.sweeps,
            "arc": args.arc,
            "step": args.step,
            "sweep_duration": args.sweep_duration,
            "pause": args.pause,
            "alternate": not args.no_alternate,
        },
    )
    print(
        f"protocol: {protocol.n_sweeps} sweeps x {protocol.angles_per_sweep} angles, "
        f"total {protocol.total_duration:.2f}s -> {out / 'protocol.json'}"
    )
    return 0


def cmd_project(args) -> int:
    phantom = load_phantom(args.phantom)
    protocol = ScanProtocol.from_dict(tensorio.read_json(args.protocol))
    geometry = Geometry(
        phantom.labels.shape[0],
        phantom.labels.shape[1],
        pixel_spacing=phantom.pixel_spacing,
        truncation=args.truncation,
    )
    sino = project_dynamic(phantom, protocol, geometry, args.noise, args.seed)
    save_sinogram(sino, args.out)
    _write_run(
        args.out,
        "project",
        {
            "noise": args.noise,
            "seed": args.seed,
            "truncation": args.truncation,
            "geometry": geometry.to_dict(),
        },
    )
    print(f"sinogram: {sino.data.shape[0]} rows x {sino.data.shape[1]} bins -> {args.out}")
    return 0


def cmd_recon(args) -> int:
    sino = load_sinogram(args.sinogram)
    config = ReconConfig(
        solver=args.solver,
        max_iters=args.iters,
        tolerance=args.tol,
        nonneg_clamp=args.clamp,
        damping=args.damping,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.sweep is None:
        volumes = reconstruct_sweeps(sino, config)
        indices = range(len(volumes))
    else:
        data, angles = sino.sweep_rows(args.sweep)
        if data.shape[0] == 0:
            raise InputError(f"sweep {args.sweep} not present in sinogram")
        volumes = [reconstruct_static(data, angles, sino.geometry, config)]
        indices = [args.sweep]
    for k, vol in zip(indices, volumes):
        tensorio.write_tensor(out / f"volume_{k}.tsr", vol.data.astype(np.float32))
        tensorio.write_csv(
            out / f"residuals_{k}.csv",
            ["iteration", "relative_residual"],
            [(i, f"{r:.9e}") for i, r in enumerate(vol.residuals)],
        )
    _write_run(
        args.out,
        "recon",
        {
            "solver": args.solver,
            "iters": args.iters,
            "tol": args.tol,
            "clamp": args.clamp,
            "damping": args.damping,
            "sweep": args.sweep,
        },
    )
    print(f"reconstructed {len(volumes)} volume(s) -> {args.out}")
    return 0


def cmd_tst(args) -> int:
    sino = load_sinogram(args.sinogram)
    total = sino.protocol.total_duration
    grid = np.linspace(0.0, total, args.grid_points)
    if args.basis == "harmonic":
        basis = harmonic_basis(grid, total)
    else:
        if args.library:
            library = tensorio.read_tensor(args.library).astype(float)
            if library.ndim != 2 or library.shape[1] != grid.size:
                raise InputError(
                    f"TAC library must be (M, {grid.size}), got {library.shape}"
                )
        else:
            library = make_tac_library(SuiteConfig(), grid, seed=args.seed)
        basis = svd_basis(library, grid, total, n=args.n)
    config = ReconConfig(max_iters=args.iters, tolerance=args.tol)
    cv = tst_reconstruct(sino, basis, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, vol in enumerate(cv.volumes):
        tensorio.write_tensor(out / f"coeff_{i}.tsr", vol.data.astype(np.float32))
    tensorio.write_tensor(
        out / "first_coeff.tsr", first_coeff_image(cv).data.astype(np.float32)
    )
    save_basis(basis, out)
    _write_run(
        args.out,
        "tst",
        {
            "basis": args.basis,
            "n": basis.n_functions,
            "grid_points": args.grid_points,
            "iters": args.iters,
            "tol": args.tol,
            "seed": args.seed,
            "library": bool(args.library),
        },
    )
    print(f"tst: {basis.n_functions} coefficient volumes ({args.basis}) -> {args.out}")
    return 0


def cmd_suite(args) -> int:
    cfg_dict = _load_config_file(args.config)
    if args.seed is not None:
        cfg_dict["master_seed"] = args.seed
    config = suite_config_from_dict(cfg_dict)
    manifest = generate_suite(config, args.out, workers=thread_cap())
    _write_run(args.out, "suite", {"config": asdict(config)})
    print(
        f"suite: {len(manifest.subjects)} subjects, {len(manifest.entries)} images "
        f"-> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    pred = tensorio.read_tensor(args.pred)
    gt = tensorio.read_tensor(args.gt)
    if args.postprocess:
        pred = largest_component(pred, connectivity=args.connectivity)
    report = metrics(confusion_counts(pred, gt))
    row = [args.pred, args.gt] + [f"{getattr(report, m):.6f}" for m in METRIC_HEADER[2:]]
    print(",".join(METRIC_HEADER))
    print(",".join(str(v) for v in row))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        tensorio.write_csv(out / "metrics.csv", METRIC_HEADER, [row])
        _write_run(
            args.out,
            "eval",
            {"postprocess": args.postprocess, "connectivity": args.connectivity},
        )
    return 0


def _parse_sample(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise InputError(f"bad sample list {text!r}") from exc


def _column_from_csv(path, column: str) -> list:
    header, rows = tensorio.read_csv(path)
    if column not in header:
        raise InputError(f"{path}: no column {column!r} in {header}")
    idx = header.index(column)
    return [float(r[idx]) for r in rows]


def cmd_stats(args) -> int:
    if args.a_csv:
        a = _column_from_csv(args.a_csv, args.column)
        b = _column_from_csv(args.b_csv, args.column)
    else:
        a = _parse_sample(args.a)
        b = _parse_sample(args.b)
    result = mann_whitney_u(a, b)
    payload = {**result.as_dict(), "alpha": ALPHA, "significant": result.p_value < ALPHA}
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        tensorio.write_json(out / "utest.json", payload)
        _write_run(args.out, "stats", {"column": args.column})
    return 0


def cmd_plot(args) -> int:
    from .plots import render_metric_report

    header, raw_rows = tensorio.read_csv(args.metrics)
    rows = [dict(zip(header, r)) for r in raw_rows]
    if not rows:
        raise InputError(f"{args.metrics}: no data rows")
    written = render_metric_report(rows, args.group_by, args.out)
    _write_run(args.out, "plot", {"group_by": args.group_by})
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perfrec",
        description="Simulate, reconstruct and evaluate dynamic liver perfusion scans.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("phantom", help="generate a dynamic phantom")
    p.add_argument("--config", help="phantom config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("protocol", help="build a multi-sweep scan protocol")
    p.add_argument("--sweeps", type=int, default=10)
    p.add_argument("--arc", type=float, default=200.0)
    p.add_argument("--step", type=float, default=0.8)
    p.add_argument("--sweep-duration", type=float, default=4.3)
    p.add_argument("--pause", type=float, default=1.0)
    p.add_argument("--no-alternate", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("project", help="acquire a timed sinogram of a phantom")
    p.add_argument("--phantom", required=True, help="phantom directory")
    p.add_argument("--protocol", required=True, help="protocol.json path")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--truncation", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("recon", help="straightforward per-sweep reconstruction")
    p.add_argument("--sinogram", required=True, help="sinogram directory")
    p.add_argument("--sweep", type=int, default=None, help="single sweep index")
    p.add_argument("--solver", choices=["cgls", "sirt"], default="cgls")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--clamp", action="store_true")
    p.add_argument("--damping", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("tst", help="time-separation reconstruction")
    p.add_argument("--sinogram", required=True)
    p.add_argument("--basis", choices=["harmonic", "svd"], default="harmonic")
    p.add_argument("--n", type=int, default=5, help="SVD basis size")
    p.add_argument("--library", default=None, help="TAC library tensor for svd")
    p.add_argument("--grid-points", type=int, default=256)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tst)

    p = sub.add_parser("suite", help="generate the multi-modality dataset suite")
    p.add_argument("--config", help="suite config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("eval", help="score a predicted mask against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--postprocess", action="store_true",
                   help="keep only the largest connected component first")
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="Mann-Whitney U test between two groups")
    p.add_argument("--a", help="comma-separated sample")
    p.add_argument("--b", help="comma-separated sample")
    p.add_argument("--a-csv", help="metrics CSV for group A")
    p.add_argument("--b-csv", help="metrics CSV for group B")
    p.add_argument("--column", default="dice")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("plot", help="render box plots + summary CSV from metrics")
    p.add_argument("--metrics", required=True, help="metrics CSV path")
    p.add_argument("--group-by", default="modality")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand == "stats" and not args.a_csv and (not args.a or not args.b):
            parser.error("stats needs either --a/--b or --a-csv/--b-csv")
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except PerfrecError as exc:
        print(f"perfrec {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"perfrec {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
