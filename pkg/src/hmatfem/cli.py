"""Command line driver: ``mesh``, ``run`` and ``verify``."""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from . import clustering, fem, hmatrix, theory
from .config import ConfigError, ExperimentConfig, field_names, load_config
from .mesh import MeshError, generate_mesh, grading_ratios, regularity_cardinality_report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmatfem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = ExperimentConfig()
    for name, text in (
        ("mesh", "generate a mesh and its regularity report"),
        ("run", "compress the inverse for a range of ranks"),
        ("verify", "run the verification suites"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key = value configuration file")
        for f in fields(ExperimentConfig):
            flag = "--" + f.name.replace("_", "-")
            hidden = f.name in ExperimentConfig.HIDDEN
            p.add_argument(
                flag,
                dest=f.name,
                default=None,
                help=argparse.SUPPRESS if hidden else f"(default {getattr(defaults, f.name)})",
            )
    return parser


def _mesh(cfg: ExperimentConfig):
    if cfg.uniform_width > 0:
        return generate_mesh(cfg.domain, uniform_width=cfg.uniform_width)
    return generate_mesh(cfg.domain, grading=cfg.grading())


def _write(path, text) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def cmd_mesh(cfg: ExperimentConfig) -> int:
    mesh = _mesh(cfg)
    mesh.check()
    dofmap = fem.DofMap.from_mesh(mesh)
    card = regularity_cardinality_report(mesh, cfg.effective_c_card(), cfg.sample_count, cfg.seed)
    lines = [
        f"domain = {mesh.domain}",
        f"nodes = {mesh.n_nodes}",
        f"elements = {mesh.n_elements}",
        f"N = {dofmap.N}",
        f"h_min = {mesh.h_min:.16e}",
        f"h_max = {mesh.h_max:.16e}",
        f"h_max/h_min = {mesh.h_max / mesh.h_min:.16e}",
        f"shape_constant = {mesh.shape_constant:.16e}",
    ]
    if mesh.grading is not None:
        r = grading_ratios(mesh)
        lines += [f"grading_c1 = {r.min():.16e}", f"grading_c2 = {r.max():.16e}"]
    text = "\n".join(lines) + "\n" + card.to_text()
    mesh.write(os.path.join(cfg.out, "mesh.txt"))
    _write(os.path.join(cfg.out, "mesh_report.txt"), text)
    sys.stdout.write(text)
    return 0 if card.passed else 1


def cmd_run(cfg: ExperimentConfig) -> int:
    mesh = _mesh(cfg)
    A, dofmap = fem.assemble_system(mesh, cfg.coefficient_object())
    if dofmap.N > cfg.dense_budget:
        raise hmatrix.DenseBudgetError(
            f"N = {dofmap.N} exceeds the dense budget {cfg.dense_budget}: "
            f"the inverse needs {8 * dofmap.N**2 / 2**30:.2f} GiB"
        )
    dual = fem.build_dual_system(mesh, dofmap)
    tree = clustering.build_cluster_tree(mesh, dual, cfg.c_small)
    part = clustering.build_block_partition(tree, cfg.c_adm)
    M = hmatrix.invert_dense(A, cfg.dense_budget, cfg.seed)
    rows = hmatrix.rank_sweep(M, part, range(cfg.r_min, cfg.r_max + 1), seed=cfg.seed)
    hmatrix.write_sweep_csv(rows, os.path.join(cfg.out, "hmatrix.csv"))
    part.write(os.path.join(cfg.out, "partition.txt"))

    rep = clustering.partition_report(part)
    norm_m = hmatrix.spectral_norm(M, seed=cfg.seed)
    lines = [f"N = {dofmap.N}", f"norm_inverse = {norm_m:.16e}"] + rep.to_text().splitlines()
    try:
        fit = hmatrix.bound_decay_fit(rows)
        lines.append(f"log10_bound_slope = {fit.slope:.16e} over {fit.n_points} ranks")
    except ValueError:
        lines.append("log10_bound_slope = undefined")
    mem_rows = [r for r in rows if 5 <= r.r <= 40]
    if len(mem_rows) >= 2:
        mfit = hmatrix.memory_fit(rows)
        lines.append(f"memory_slope_bytes_per_rank = {mfit.slope:.16e} (R^2 = {mfit.r_squared:.16e})")
    lines.append(f"dense_bytes = {8 * dofmap.N**2}")
    lines.append("r relative_bound relative_error")
    lines += [f"{r.r} {r.computable_bound / norm_m:.16e} {r.spectral_error / norm_m:.16e}" for r in rows]
    text = "\n".join(lines) + "\n"
    _write(os.path.join(cfg.out, "summary.txt"), text)
    sys.stdout.write(text)
    return 0


def cmd_verify(cfg: ExperimentConfig) -> int:
    report = theory.VerificationReport()
    add = report.rows.append
    rng = np.random.default_rng(cfg.seed)

    # duality and representation formula on the configured mesh
    mesh = _mesh(cfg)
    A, dofmap = fem.assemble_system(mesh, cfg.coefficient_object())
    dual = fem.build_dual_system(mesh, dofmap)
    if cfg.perturb_dual:
        dual = dual.perturbed(cfg.perturb_dual)
    dd = fem.duality_defect(dual)
    add(theory.ReportRow("duality_defect", -1, 0.0, 0, dd, dd <= 1e-12))
    rr = fem.representation_residual(A, dual, cfg.trials, cfg.seed)
    add(theory.ReportRow("representation", -1, 0.0, 0, rr, rr <= 1e-10))

    # Clement: constants and ranges
    const = theory.clement(mesh, np.full(mesh.n_elements, 0.7)).nodal
    err = float(np.abs(const - 0.7).max())
    add(theory.ReportRow("clement_constants", -1, 0.0, 0, err, err <= 1e-14))
    cv = theory.clement(mesh, rng.random(mesh.n_elements)).nodal
    add(theory.ReportRow("clement_range", -1, 0.0, 0, float(cv.max()), bool(cv.min() >= 0 and cv.max() <= 1)))

    # inverse inequality on two uniform levels
    ratios = []
    for level in range(2):
        um = generate_mesh("unit_square", uniform_width=cfg.cutoff_width * 4 / 2**level)
        ratios.append(theory.inverse_inequality_ratio(um, rng.standard_normal(um.n_nodes)))
        add(theory.ReportRow("inverse_inequality", -1, 0.0, level, ratios[-1], True))
    stable = abs(ratios[1] / ratios[0] - 1.0) <= 0.1
    add(theory.ReportRow("inverse_stability", -1, 0.0, 1, ratios[1] / ratios[0], stable))

    # cut-off function: structure and 1/delta law on a fine uniform mesh
    cm = generate_mesh("unit_square", uniform_width=cfg.cutoff_width)
    ball = theory.ball_clusters(cm, np.array([[0.5, 0.5]]), np.array([0.05]))[0]
    sweep = theory.cutoff_sweep(cm, ball, [0.1, 0.2, 0.4])
    report.rows += sweep.rows
    gr = sweep.summary["max_gradient_ratio"]
    add(theory.ReportRow("cutoff_gradient_ratio", 0, 0.0, 0, gr, gr <= 0.75))

    # Caccioppoli growth under refinement
    cacc = theory.caccioppoli_grid(
        cfg.cacc_width, cfg.cacc_levels, cluster_count=cfg.cacc_clusters, seed=cfg.seed,
        coeffs=cfg.coefficient_object(),
    )
    report.rows += cacc.rows
    g = cacc.summary["growth_factor"]
    add(theory.ReportRow("caccioppoli_growth", -1, 0.0, cfg.cacc_levels - 1, g, bool(cacc.summary["growth_ok"])))

    text = report.to_text()
    _write(os.path.join(cfg.out, "verify_report.txt"), text)
    sys.stdout.write(text)
    if not report.passed:
        for row in report.rows:
            if not row.passed:
                sys.stderr.write("failed: " + row.to_text() + "\n")
        return 1
    return 0


COMMANDS = {"mesh": cmd_mesh, "run": cmd_run, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in field_names()}
    try:
        cfg = load_config(args.config, overrides)
        os.makedirs(cfg.out, exist_ok=True)
        return COMMANDS[args.command](cfg)
    except (ConfigError, MeshError, hmatrix.DenseBudgetError, fem.CoercivityError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
