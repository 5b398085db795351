"""Command-line interface: rve, micro, mesh, data, nn, fe2, compare, bench."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import fem, nn, plots, reporting, solvers, vtkio
from .constitutive import BeamMaterial, NeuralMaterial
from .micro import micro_stress, solve_micro, von_mises_per_element
from .rve import (
    PoreSizeDistribution,
    load_network,
    pack_disks,
    save_network,
    tessellate_periodic,
    validate_network,
)


def load_distribution(path) -> PoreSizeDistribution:
    """Distribution file: 'edge <v>' line, then 'diameter weight' lines."""
    edge = 1.0
    diam, wts = [], []
    with open(path) as f:
        for line in f:
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "edge":
                edge = float(tok[1])
            else:
                diam.append(float(tok[0]))
                wts.append(float(tok[1]))
    return PoreSizeDistribution(
        diameters=np.array(diam), weights=np.array(wts), domain_edge=edge
    )


def _parse_tensor(text: str, dim_hint=None) -> np.ndarray:
    vals = np.array([float(x) for x in text.replace(",", " ").split()])
    d = int(round(np.sqrt(vals.size)))
    if d * d != vals.size or d not in (2, 3):
        raise SystemExit("--F must have 4 or 9 comma-separated values")
    return vals.reshape(d, d)


def _solver_config(args) -> solvers.SolverConfig:
    return solvers.SolverConfig(
        method=args.solver,
        rel_residual_tol=args.tol,
        fd_epsilon=args.fd_eps,
        load_steps=args.load_steps,
    )


def _add_solver_flags(p):
    p.add_argument("--solver", choices=("bfgs", "newton"), default="bfgs")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--fd-eps", type=float, default=1e-6)
    p.add_argument("--load-steps", type=int, default=4)


def cmd_rve_gen(args):
    dist = load_distribution(args.dist)
    packing = pack_disks(
        dist, seed=args.seed, max_attempts=args.max_attempts,
        mode=args.mode, packing_fraction=args.fraction,
    )
    net = tessellate_periodic(packing)
    save_network(net, args.out)
    print(f"wrote {args.out}: {net.n_nodes} nodes, {net.n_elements} beams, "
          f"{len(net.periodic_pairs)} periodic pairs "
          f"(packing fraction {packing.packing_fraction():.3f})")
    if args.plot:
        plots.save_fig(plots.packing_figure(packing), Path(args.plot).with_suffix(".packing.png"))
        plots.save_fig(plots.network_figure(net), args.plot)
        print(f"wrote {args.plot}")


def cmd_rve_validate(args):
    net = load_network(args.file)
    validate_network(net)
    print(f"{args.file}: valid {net.dim}D network, {net.n_nodes} nodes, "
          f"{net.n_elements} beams, {len(net.periodic_pairs)} pairs")


def cmd_micro_solve(args):
    net = load_network(args.net)
    F = _parse_tensor(args.F)
    if F.shape[0] != net.dim:
        raise SystemExit(f"--F is {F.shape[0]}D but the network is {net.dim}D")
    sol = solve_micro(net, F)
    P = micro_stress(net, F)
    np.set_printoptions(precision=6, suppress=True)
    print("averaged first Piola-Kirchhoff stress [MPa]:")
    print(P)
    if args.vtk:
        vm = von_mises_per_element(net, sol)
        vtkio.write_beam_network(
            args.vtk, net, element_values=vm,
            displacements=sol.displacements,
            title="porohom micro solution",
        )
        print(f"wrote {args.vtk}")
    if args.plot:
        if net.dim != 2:
            raise SystemExit("--plot supports 2D networks only")
        vm = von_mises_per_element(net, sol)
        fig = plots.network_figure(net, element_values=vm,
                                   displacements=sol.displacements,
                                   title="deformed RVE")
        plots.save_fig(fig, args.plot)
        print(f"wrote {args.plot}")


def cmd_mesh_gen(args):
    mesh = fem.generate_mesh(args.shape, args.etype, args.refine)
    fem.save_mesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_nodes} nodes, {mesh.n_elements} "
          f"{args.etype} elements, {mesh.n_dofs} dofs")


def cmd_data_gen2d(args):
    net = load_network(args.net)
    ds = data_mod.generate_2d(net, n_simulations=args.n, seed=args.seed)
    data_mod.save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.n} samples "
          f"({int((ds.split == 1).sum())} validation), "
          f"{ds.provenance['n_duplicates_removed']} duplicates removed")
    if args.csv:
        data_mod.export_csv(ds, args.csv)
        print(f"wrote {args.csv}")


def cmd_data_gen3d(args):
    net = load_network(args.net)
    ds = data_mod.generate_3d(
        net, n_samples=args.n, seed=args.seed, amplitude=args.amplitude
    )
    data_mod.save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.n} samples "
          f"({int((ds.split == 1).sum())} validation)")
    if args.csv:
        data_mod.export_csv(ds, args.csv)
        print(f"wrote {args.csv}")


def cmd_data_stats(args):
    ds = data_mod.load_dataset(args.file)
    st = data_mod.compute_stats(ds)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    names_in = st.input_names()
    names_out = st.output_names()
    with open(out / "stats.csv", "w") as f:
        f.write("component,mean,std,min,max\n")
        for i, nm in enumerate(names_in):
            f.write(f"{nm},{st.input_mean[i]:.6g},{st.input_std[i]:.6g},"
                    f"{st.input_min[i]:.6g},{st.input_max[i]:.6g}\n")
        for i, nm in enumerate(names_out):
            f.write(f"{nm},{st.output_mean[i]:.6g},{st.output_std[i]:.6g},"
                    f"{st.output_min[i]:.6g},{st.output_max[i]:.6g}\n")
    with open(out / "correlation.csv", "w") as f:
        f.write("," + ",".join(names_out) + "\n")
        for i, nm in enumerate(names_in):
            f.write(nm + "," + ",".join(
                f"{st.correlation[i, j]:.4f}" for j in range(len(names_out))
            ) + "\n")
    X, Y = ds.arrays("all")
    plots.save_fig(plots.histogram_figure(X, names_in, "input distribution"),
                   out / "inputs.png")
    plots.save_fig(plots.histogram_figure(Y, names_out, "output distribution"),
                   out / "outputs.png")
    plots.save_fig(plots.correlation_figure(st, "input-output correlation"),
                   out / "correlation.png")
    print(f"{args.file}: n={ds.n}")
    print(f"wrote {out}/stats.csv, correlation.csv, inputs.png, outputs.png, "
          f"correlation.png")
    if st.degenerate:
        print("warning: zero-variance component; correlations reported as 0")


def cmd_nn_train(args):
    ds = data_mod.load_dataset(args.data)
    hidden = [int(x) for x in args.arch.split(",") if x]
    model = nn.init_model(ds.dim, hidden, args.act, seed=args.seed)
    cfg = nn.TrainConfig(epochs=args.epochs, batch_size=args.batch,
                         lr=args.lr, seed=args.seed,
                         lr_decay_epoch=args.lr_decay_epoch,
                         log_every=args.log_every)
    model, rep = nn.train(model, ds, cfg)
    nn.save_model(model, args.out)
    print(f"wrote {args.out}: final train MSE {rep.final_train_loss:.3e}, "
          f"validation MSE {rep.final_val_loss:.3e} "
          f"({rep.wall_time:.1f}s)")
    if args.report:
        out = Path(args.report)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "loss.csv", "w") as f:
            f.write("epoch,train_loss,val_loss\n")
            for e, (tr, va) in enumerate(
                zip(rep.train_loss,
                    rep.val_loss or [float("nan")] * len(rep.train_loss))
            ):
                f.write(f"{e + 1},{tr:.8e},{va:.8e}\n")
        plots.save_fig(plots.loss_figure(rep, "training loss"),
                       out / "loss.png")
        print(f"wrote {out}/loss.csv, loss.png")


def cmd_nn_grid(args):
    ds = data_mod.load_dataset(args.data)
    if args.subsample and args.subsample < ds.n:
        rng = np.random.default_rng(args.seed)
        ds = ds.subset(np.sort(rng.choice(ds.n, args.subsample, replace=False)))
    cfg = nn.TrainConfig(epochs=args.epochs, batch_size=args.batch,
                         seed=args.seed, lr_decay_epoch=max(1, 2 * args.epochs // 3))
    res = nn.grid_search(
        ds,
        activations=args.activations.split(","),
        widths=[int(x) for x in args.widths.split(",")],
        depths=[int(x) for x in args.depths.split(",")],
        config=cfg,
    )
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "grid.csv", "w") as f:
        f.write("activation,width,depth,train_loss\n")
        for act, w, d, loss in res.to_rows():
            f.write(f"{act},{w},{d},{loss:.8e}\n")
    plots.save_fig(plots.grid_search_figure(res, "grid search"),
                   out / "grid.png")
    print(f"best cell: {res.best} "
          f"(loss {np.nanmin(res.losses):.3e})")
    print(f"wrote {out}/grid.csv, grid.png")


def cmd_fe2(args):
    spec = reporting.RunSpec(
        shape=args.shape, etype=args.etype, refine=args.refine,
        backend=args.backend, net_path=args.net, weights_path=args.weights,
        case=args.case, magnitude=args.magnitude,
        solver=_solver_config(args), out_dir=args.out,
    )
    result = reporting.run_fe2(spec)
    rep = result.report
    print(f"converged: {rep.converged}; iterations per load step: "
          f"{rep.iterations_per_step} (mean {rep.mean_iterations_per_step:.2f})")
    if args.out:
        print(f"wrote outputs to {result.out_dir}")


def cmd_compare(args):
    rep = reporting.compare_runs(args.run_a, args.run_b, out_dir=args.out)
    print("deviation norms (a vs b):")
    print(f"  |u|_2   relative: {rep.u_rel_l2:.3e}")
    print(f"  |u|_inf relative: {rep.u_rel_max:.3e}")
    print(f"  |vM|_2  relative: {rep.vm_rel_l2:.3e}")
    print(f"  |vM|_inf relative: {rep.vm_rel_max:.3e}")
    if args.out:
        print(f"wrote {args.out}/comparison.csv, difference.png")


def cmd_bench(args):
    net = load_network(args.net)
    beam = BeamMaterial(net)
    if args.weights:
        model = nn.load_model(args.weights, expect_dim=net.dim)
    else:
        hidden = [128, 256, 128] if net.dim == 2 else [512, 512]
        model = nn.init_model(net.dim, hidden, "gelu", seed=0)
    surrogate = NeuralMaterial(model)
    result = reporting.benchmark_backend(beam, surrogate, n_evals=args.n,
                                         seed=args.seed)
    print(f"beam median  {result['beam_median_s'] * 1e3:.3f} ms/eval")
    print(f"nn   median  {result['nn_median_s'] * 1e3:.3f} ms/eval")
    print(f"speedup      {result['speedup']:.1f}x")
    if args.out:
        reporting.write_benchmark_outputs(result, args.out)
        print(f"wrote {args.out}/bench.csv, bench.png")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="porohom",
        description="Two-scale homogenization for open-porous materials: "
                    "beam-frame RVEs, FE2 macro solves, neural surrogates.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    rve = sub.add_parser("rve", help="RVE generation and validation")
    rve_sub = rve.add_subparsers(dest="subcommand", required=True)
    g = rve_sub.add_parser("gen", help="pack disks and tessellate")
    g.add_argument("--dist", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--mode", choices=("volume", "count"), default="volume")
    g.add_argument("--fraction", type=float, default=0.42)
    g.add_argument("--max-attempts", type=int, default=5000)
    g.add_argument("--plot")
    g.set_defaults(func=cmd_rve_gen)
    v = rve_sub.add_parser("validate", help="check network invariants")
    v.add_argument("file")
    v.set_defaults(func=cmd_rve_validate)

    micro = sub.add_parser("micro", help="single RVE solves")
    micro_sub = micro.add_subparsers(dest="subcommand", required=True)
    s = micro_sub.add_parser("solve", help="solve one deformation gradient")
    s.add_argument("--net", required=True)
    s.add_argument("--F", required=True,
                   help="4 or 9 comma-separated row-major entries")
    s.add_argument("--vtk")
    s.add_argument("--plot")
    s.set_defaults(func=cmd_micro_solve)

    mesh = sub.add_parser("mesh", help="macro mesh generation")
    mesh_sub = mesh.add_subparsers(dest="subcommand", required=True)
    m = mesh_sub.add_parser("gen")
    m.add_argument("--shape", required=True,
                   choices=("square", "cube", "plate1", "plate5",
                            "cubehole", "cylinder"))
    m.add_argument("--etype", choices=fem.ETYPES, default="q1")
    m.add_argument("--refine", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mesh_gen)

    dat = sub.add_parser("data", help="training data generation/statistics")
    dat_sub = dat.add_subparsers(dest="subcommand", required=True)
    d2 = dat_sub.add_parser("gen2d")
    d2.add_argument("--net", required=True)
    d2.add_argument("--n", type=int, required=True,
                    help="number of FE2 simulations")
    d2.add_argument("--seed", type=int, default=0)
    d2.add_argument("--out", required=True)
    d2.add_argument("--csv")
    d2.set_defaults(func=cmd_data_gen2d)
    d3 = dat_sub.add_parser("gen3d")
    d3.add_argument("--net", required=True)
    d3.add_argument("--n", type=int, required=True,
                    help="number of random affine draws")
    d3.add_argument("--seed", type=int, default=0)
    d3.add_argument("--amplitude", type=float, default=0.25)
    d3.add_argument("--out", required=True)
    d3.add_argument("--csv")
    d3.set_defaults(func=cmd_data_gen3d)
    st = dat_sub.add_parser("stats")
    st.add_argument("file")
    st.add_argument("--out")
    st.set_defaults(func=cmd_data_stats)

    net = sub.add_parser("nn", help="surrogate training and grid search")
    net_sub = net.add_subparsers(dest="subcommand", required=True)
    t = net_sub.add_parser("train")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", default="128,256,128")
    t.add_argument("--act", choices=tuple(nn.ACTIVATION_TAGS), default="gelu")
    t.add_argument("--epochs", type=int, default=1500)
    t.add_argument("--batch", type=int, default=256)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lr-decay-epoch", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--report")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_nn_train)
    gr = net_sub.add_parser("grid")
    gr.add_argument("--data", required=True)
    gr.add_argument("--activations", default="sigmoid,tanh,gelu")
    gr.add_argument("--widths", default="64,128,256,512")
    gr.add_argument("--depths", default="1,2,3")
    gr.add_argument("--epochs", type=int, default=300)
    gr.add_argument("--batch", type=int, default=256)
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("--subsample", type=int, default=0)
    gr.add_argument("--out")
    gr.set_defaults(func=cmd_nn_grid)

    fe2 = sub.add_parser("fe2", help="two-scale macroscopic solve")
    fe2.add_argument("--shape", default="square",
                     choices=("square", "cube", "plate1", "plate5",
                              "cubehole", "cylinder"))
    fe2.add_argument("--etype", choices=fem.ETYPES, default="q1")
    fe2.add_argument("--refine", type=int, default=0)
    fe2.add_argument("--backend", choices=("beam", "nn"), default="beam")
    fe2.add_argument("--net")
    fe2.add_argument("--weights")
    fe2.add_argument("--case")
    fe2.add_argument("--magnitude", type=float)
    fe2.add_argument("--out")
    _add_solver_flags(fe2)
    fe2.set_defaults(func=cmd_fe2)

    cmp_ = sub.add_parser("compare", help="field deviation norms of two runs")
    cmp_.add_argument("run_a")
    cmp_.add_argument("run_b")
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_compare)

    bench = sub.add_parser("bench", help="beam vs surrogate evaluation timing")
    bench.add_argument("--net", required=True)
    bench.add_argument("--weights")
    bench.add_argument("--n", type=int, default=100)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out")
    bench.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
