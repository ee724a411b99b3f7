"""Command-line pipeline: sample, reconstruct, baseline, compare.

Exit codes: 0 success, 1 usage or I/O error, 2 numerical watchdog abort
(the last valid mesh is still written).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace

import numpy as np

from .baseline import GridField, extract_baseline
from .driver import ReconstructionAborted, reconstruct, reconstruct_with_resampling
from .fileio import normalize_mesh, read_obj, read_samples, write_obj, write_samples
from .flow import sdf_energy
from .mesh import ReconstructionConfig
from .metrics import chamfer, hausdorff
from .sampling import GridSpec, sample_grid, sample_pointcloud
from .spatial import batch_signed_distance_arrays, build_bvh


def _parse_variant(token: str):
    if token == "signed" or token == "unsigned":
        return token, None
    if token == "swept":
        return "swept_volume", None
    if token.startswith("clamped:"):
        return "clamped", float(token.split(":", 1)[1])
    raise argparse.ArgumentTypeError(
        f"variant must be signed|unsigned|clamped:<value>|swept, got {token!r}")


def cmd_sample(args) -> int:
    mesh = read_obj(args.mesh)
    if not args.no_normalize:
        mesh = normalize_mesh(mesh)
    if args.grid is not None:
        spec = GridSpec.cube(args.grid, mesh.dim)
        samples = sample_grid(mesh, spec)
        write_samples(args.out, samples, grid=spec)
    else:
        mode = "near_surface" if args.noise_pos > 0.0 else "uniform_box"
        samples = sample_pointcloud(mesh, args.cloud, mode=mode,
                                    stddev=args.noise_pos, seed=args.seed)
        write_samples(args.out, samples)
    print(f"wrote {len(samples)} samples to {args.out} "
          f"(values in [{samples.values.min():.6g}, {samples.values.max():.6g}])")
    return 0


def _build_init(args, samples, grid):
    if args.init == "icosphere":
        return None, True
    if args.init == "mc":
        if grid is None:
            raise ValueError("--init mc requires a grid-sampled file")
        mesh = extract_baseline(GridField(grid, samples.values))
        if mesh.n_elements == 0:
            raise ValueError("marching extraction produced an empty mesh; cannot init")
        return mesh, False
    return read_obj(args.init), False


def cmd_reconstruct(args) -> int:
    samples, grid = read_samples(args.samples)
    variant, sigma_c = _parse_variant(args.variant)
    config = ReconstructionConfig(
        epsilon=args.eps, h_min=args.hmin, variant=variant,
        sigma_c=sigma_c if sigma_c is not None else samples.clamp_value,
        rng_seed=args.seed)
    init, check_enclosure = _build_init(args, samples, grid)
    if not check_enclosure:
        config = replace(config, check_enclosure=False)

    t0 = time.perf_counter()
    aborted = False
    try:
        if args.resample_rounds > 0:
            if not args.oracle_mesh:
                raise ValueError("--resample-rounds requires --oracle-mesh")
            gt = read_obj(args.oracle_mesh)
            bvh = build_bvh(gt)

            def oracle(p):
                v, _ = batch_signed_distance_arrays(bvh, gt, np.asarray(p)[None, :])
                return float(v[0])

            mesh, report = reconstruct_with_resampling(
                samples, oracle, args.resample_rounds, config, init)
        else:
            mesh, report = reconstruct(samples, config, init)
    except ReconstructionAborted as exc:
        mesh, report = exc.mesh, exc.report
        aborted = True
    runtime = time.perf_counter() - t0

    write_obj(args.out, mesh)
    if args.report:
        report.write_csv(args.report)
        summary = report.summary_dict()
        summary["runtime_seconds"] = runtime
        summary_path = args.report.rsplit(".", 1)[0] + ".json"
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2)
    status = "ABORTED (watchdog); last valid mesh written" if aborted else "converged"
    print(f"{status}: {mesh.n_vertices} vertices, final energy "
          f"{report.final_energy:.6g}, max violation {report.final_max_violation:.6g}, "
          f"{runtime:.2f}s -> {args.out}")
    return 2 if aborted else 0


def cmd_baseline(args) -> int:
    samples, grid = read_samples(args.samples)
    if grid is None:
        raise ValueError("baseline extraction requires a grid-sampled file")
    mesh = extract_baseline(GridField(grid, samples.values))
    write_obj(args.out, mesh)
    if mesh.n_elements == 0:
        print("warning: field has no sign changes; wrote an empty mesh")
    else:
        print(f"wrote {mesh.n_vertices} vertices, {mesh.n_elements} elements to {args.out}")
    return 0


def cmd_compare(args) -> int:
    gt = read_obj(args.gt)
    samples, _ = read_samples(args.samples)
    rows = ["mesh,hausdorff,chamfer,sdf_energy,seconds"]
    for label, path in (("A", args.mesh_a), ("B", args.mesh_b)):
        mesh = read_obj(path)
        t0 = time.perf_counter()
        hdf = hausdorff(mesh, gt, seed=args.seed)
        chr_ = chamfer(mesh, gt, seed=args.seed)
        energy = sdf_energy(mesh, build_bvh(mesh), samples)
        dt = time.perf_counter() - t0
        rows.append(f"{path},{hdf:.6g},{chr_:.6g},{energy:.6g},{dt:.4f}")
    out = "\n".join(rows) + "\n"
    with open(args.out, "w") as fh:
        fh.write(out)
    print(out, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sphere-reach",
        description="Surface reconstruction from signed-distance samples")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("sample", help="sample an SDF from a ground-truth OBJ")
    ps.add_argument("mesh")
    group = ps.add_mutually_exclusive_group(required=True)
    group.add_argument("--grid", type=int, help="k samples per axis in [-1,1]^d")
    group.add_argument("--cloud", type=int, help="unstructured point count")
    ps.add_argument("--noise-pos", type=float, default=0.0,
                    help="near-surface position noise stddev for --cloud")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--no-normalize", action="store_true",
                    help="skip rescaling the shape to [-1/2,1/2]^d")
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_sample)

    pr = sub.add_parser("reconstruct", help="run the reconstruction flow")
    pr.add_argument("samples")
    pr.add_argument("--out", required=True)
    pr.add_argument("--hmin", type=float, default=None)
    pr.add_argument("--eps", type=float, default=None)
    pr.add_argument("--variant", default="signed")
    pr.add_argument("--init", default="icosphere",
                    help="icosphere | mc | path to an OBJ mesh")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--resample-rounds", type=int, default=0)
    pr.add_argument("--oracle-mesh", default=None,
                    help="ground-truth OBJ queried for resampled values")
    pr.add_argument("--report", default=None, help="per-iteration CSV path")
    pr.set_defaults(func=cmd_reconstruct)

    pb = sub.add_parser("baseline", help="marching cubes/squares extraction")
    pb.add_argument("samples")
    pb.add_argument("--out", required=True)
    pb.set_defaults(func=cmd_baseline)

    pc = sub.add_parser("compare", help="metric table for two meshes")
    pc.add_argument("gt")
    pc.add_argument("samples")
    pc.add_argument("mesh_a")
    pc.add_argument("mesh_b")
    pc.add_argument("--out", required=True)
    pc.add_argument("--seed", type=int, default=0)
    pc.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ReconstructionAborted:
        return 2
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
