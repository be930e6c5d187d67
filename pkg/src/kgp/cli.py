"""Command-line surface.

Subcommands: ``generate`` (datasets), ``train``, ``predict``, ``verify``
(property suites), ``bench`` (lattice scaling), ``bench-kernels`` (numba vs
numpy backends).  Exit codes are fixed for scripting: 0 success, 1 usage,
2 validation, 3 numerical failure (including failed verify suites).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .config import validate_config
from .errors import NumericalError, ValidationError
from .io import read_json, read_tensor, write_json, write_tensor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser():
    p = _Parser(prog="kgp", description=__doc__)
    p.add_argument("--version", action="version", version=f"kgp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="JSON run config")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory")

    common(sub.add_parser("generate", help="generate a dataset"))
    common(sub.add_parser("train", help="train a model on a dataset"))

    sp = sub.add_parser("predict", help="predict from a trained model")
    sp.add_argument("--model", required=True, help="model directory")
    common(sp, config_required=False)

    sp = sub.add_parser("verify", help="run a verification suite")
    sp.add_argument("--suite", required=True,
                    choices=["kron", "oracle", "lemma1", "lemma2", "logdet"])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("bench", help="lattice-size scaling benchmark")
    sp.add_argument("--sizes", required=True,
                    help="comma-separated spatial sizes, e.g. 64,128,256")
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("bench-kernels", help="numba vs numpy kernel benchmark")
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)
    return p


def _load_config(args):
    doc = read_json(args.config) if args.config else {}
    cfg = validate_config(doc)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["output"]["dir"] = args.out
    return cfg


def _outdir(cfg):
    path = cfg["output"]["dir"]
    os.makedirs(path, exist_ok=True)
    return path


# generate ---------------------------------------------------------------------

def cmd_generate(args):
    from .datagen import burgers_dataset, sobol_parameters, synthetic_gappy_field

    cfg = _load_config(args)
    out = _outdir(cfg)
    ds = cfg["dataset"]
    seed = cfg["seed"]
    manifest = {"preset": ds["preset"], "seed": seed, "files": []}

    if ds["preset"] == "burgers":
        params = ds.get("parameters")
        params = (np.asarray(params, dtype=np.float64) if params
                  else sobol_parameters(ds["n_param"], seed))
        fields = burgers_dataset(params, m_spatial=ds["m_spatial"],
                                 n_time=ds["n_time"], t_final=ds["t_final"],
                                 x_max=ds["x_max"])
        xs = np.linspace(0.0, ds["x_max"], ds["m_spatial"])
        times = np.linspace(0.0, ds["t_final"], ds["n_time"])
        for i in range(params.shape[0]):
            name = f"snap_{i:03d}.kgp"
            write_tensor(os.path.join(out, name), fields[i],
                         ["spatial", "temporal"])
            manifest["files"].append(name)
        manifest["parameters"] = params.tolist()
        manifest["spatial_axes"] = [xs.tolist()]
        manifest["times"] = times.tolist()
    else:  # gappy2d
        params, axes, times, values, mask = synthetic_gappy_field(
            nx=ds["nx"], ny=ds["ny"], n_param=ds["n_param"],
            n_time=ds["n_time"], hole_radius=ds["hole_radius"], seed=seed)
        mask_field = mask.regular_field().astype(bool)
        for i in range(params.shape[0]):
            name = f"snap_{i:03d}.kgp"
            snap_mask = np.broadcast_to(mask_field[..., None], values[i].shape)
            write_tensor(os.path.join(out, name), values[i],
                         ["spatial", "spatial", "temporal"], mask=snap_mask)
            manifest["files"].append(name)
        manifest["parameters"] = params.tolist()
        manifest["spatial_axes"] = [a.tolist() for a in axes]
        manifest["times"] = times.tolist()

    write_json(os.path.join(out, "manifest.json"), manifest)
    write_json(os.path.join(out, "resolved_config.json"), cfg)
    print(f"wrote {len(manifest['files'])} snapshots + manifest to {out}")
    return EXIT_OK


# train --------------------------------------------------------------------------

def _grid_from_manifest(manifest, params):
    from .grids import ProductGrid

    spatial = [np.asarray(a, dtype=np.float64)[:, None]
               for a in manifest["spatial_axes"]]
    times = np.asarray(manifest["times"], dtype=np.float64)[:, None]
    return ProductGrid.from_arrays(np.asarray(params, dtype=np.float64),
                                   spatial, times)


def _load_dataset(cfg):
    """Returns (grid, y field, mask or None, holdout params, holdout fields)."""
    manifest_path = cfg["data"].get("manifest")
    if not manifest_path:
        raise ValidationError("config needs data.manifest for this command")
    manifest = read_json(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    params = np.asarray(manifest["parameters"], dtype=np.float64)
    snaps, masks = [], []
    for name in manifest["files"]:
        data = read_tensor(os.path.join(base, name))
        snaps.append(data.values)
        masks.append(data.mask)
    fields = np.stack(snaps)
    holdout = cfg["data"].get("holdout", 0)
    if holdout >= params.shape[0]:
        raise ValidationError(
            f"holdout {holdout} leaves no training parameters "
            f"(dataset has {params.shape[0]})"
        )
    train_p, test_p = params[:params.shape[0] - holdout], params[params.shape[0] - holdout:]
    train_f, test_f = fields[:train_p.shape[0]], fields[train_p.shape[0]:]
    grid = _grid_from_manifest(manifest, train_p)

    mask = None
    if masks[0] is not None:
        from .gappy_gp import GappyMask
        spatial_mask = masks[0][..., 0]  # time-invariant by construction
        for m in masks[:train_p.shape[0]]:
            if not np.array_equal(m, masks[0]):
                raise ValidationError("snapshots disagree on the gap mask")
        mask = GappyMask.from_bool_field(spatial_mask)
    return grid, train_f, mask, manifest, test_p, test_f


def _build_spec(cfg, grid):
    from .kernels import default_spec_for_grid

    k = cfg["kernel"]
    return default_spec_for_grid(
        grid, family=k["family"], widths=tuple(k["widths"]),
        latent_dim=k["latent_dim"], activation=k["activation"],
        seed=cfg["seed"], deep=k["deep"])


def _train_config(cfg):
    from .training import TrainConfig

    t = cfg["training"]
    g = cfg["gappy"]
    return TrainConfig(
        learning_rate=t["learning_rate"], beta1=t["beta1"], beta2=t["beta2"],
        weight_decay=t["weight_decay"], max_iters=t["max_iters"],
        fd_step=t["fd_step"], seed=cfg["seed"], cg_tol=g["cg_tol"],
        cg_maxiter=g["cg_maxiter"], lr_decay_step=t["lr_decay_step"],
        lr_decay_factor=t["lr_decay_factor"])


def cmd_train(args):
    from .gappy_gp import lift_mask
    from .kernels import spec_to_config
    from .training import GappyProblem, GridProblem, train

    cfg = _load_config(args)
    out = _outdir(cfg)
    grid, fields, mask, manifest, _, _ = _load_dataset(cfg)
    spec = _build_spec(cfg, grid)
    tc = _train_config(cfg)
    use_gappy = cfg["gappy"]["enabled"] or mask is not None

    if use_gappy:
        if mask is None:
            raise ValidationError("gappy training requested but dataset has no mask")
        reg_full, _ = lift_mask(mask, grid.n_param, grid.n_time)
        y_r = fields.reshape(grid.shape).ravel()[reg_full]
        problem = GappyProblem(spec, grid, mask, y_r, cg_tol=tc.cg_tol,
                               cg_maxiter=tc.cg_maxiter)
    else:
        problem = GridProblem(spec, grid, fields.reshape(grid.shape))

    model, trace = train(problem, tc)
    fitted = model.fitted if use_gappy else model

    y_store = fields.reshape(grid.shape)
    mask_store = None
    if use_gappy:
        mask_store = np.broadcast_to(
            mask.regular_field().astype(bool).reshape(
                (1,) + mask.spatial_shape + (1,)), grid.shape)
        y_store = y_store.copy()
        y_store[~mask_store] = np.nan

    roles = [a.role for a in grid.axes]
    write_tensor(os.path.join(out, "ytrain.kgp"), y_store, roles, mask=mask_store)
    trace.to_csv(os.path.join(out, "trace.csv"))
    model_doc = {
        "kernel_spec": spec_to_config(fitted.spec),
        "sigma2": fitted.sigma2,
        "y_mean": fitted.y_mean,
        "centered": True,
        "grid": {
            "parameters": grid.axes[0].points.tolist(),
            "spatial_axes": [a.points[:, 0].tolist() for a in grid.spatial_axes],
            "times": grid.axes[-1].points[:, 0].tolist() if grid.has_time else None,
        },
        "gappy": ({"cg_tol": tc.cg_tol, "cg_maxiter": tc.cg_maxiter}
                  if use_gappy else None),
        "train_tensor": "ytrain.kgp",
        "final_nlml": float(min(trace.nlmls())),
    }
    write_json(os.path.join(out, "model.json"), model_doc)
    write_json(os.path.join(out, "resolved_config.json"), cfg)
    print(f"trained {'gappy' if use_gappy else 'grid'} model: "
          f"best NLML {model_doc['final_nlml']:.6g} -> {out}")
    return EXIT_OK


# predict ------------------------------------------------------------------------

def load_model(model_dir):
    """Rebuild a fitted model from a model directory.

    Eigendecompositions, representer weights, and pseudovalues are not
    stored; they are recomputed from the kernel spec and training data.
    """
    from .gappy_gp import GappyMask, fit_gappy, lift_mask
    from .grid_gp import fit
    from .grids import ProductGrid
    from .kernels import spec_from_config

    doc = read_json(os.path.join(model_dir, "model.json"))
    spec = spec_from_config(doc["kernel_spec"])
    g = doc["grid"]
    spatial = [np.asarray(a, dtype=np.float64)[:, None] for a in g["spatial_axes"]]
    times = (np.asarray(g["times"], dtype=np.float64)[:, None]
             if g["times"] is not None else None)
    grid = ProductGrid.from_arrays(np.asarray(g["parameters"]), spatial, times)
    data = read_tensor(os.path.join(model_dir, doc["train_tensor"]))
    center = bool(doc.get("centered", False))
    if doc["gappy"] is not None:
        mask = GappyMask.from_bool_field(data.mask.reshape(grid.shape)[0, ..., 0])
        reg_full, _ = lift_mask(mask, grid.n_param, grid.n_time)
        y_r = data.values.ravel()[reg_full]
        return fit_gappy(spec, grid, mask, y_r, doc["sigma2"],
                         cg_tol=doc["gappy"]["cg_tol"],
                         cg_maxiter=doc["gappy"]["cg_maxiter"], center=center)
    return fit(spec, grid, data.values, doc["sigma2"], center=center)


def cmd_predict(args):
    from .gappy_gp import GappyModel, gappy_predict_mean, gappy_predict_var_bounds
    from .grid_gp import predict_mean, predict_var
    from .grids import ProductGrid

    cfg = _load_config(args)
    out = _outdir(cfg)
    model = load_model(args.model)
    fitted = model.fitted if isinstance(model, GappyModel) else model
    train_grid = fitted.grid

    pd = cfg["predict"]
    params = np.asarray(pd.get("parameters", train_grid.axes[0].points.tolist()))
    spatial = [np.asarray(a, dtype=np.float64)[:, None]
               for a in pd.get("spatial_axes",
                               [ax.points[:, 0].tolist()
                                for ax in train_grid.spatial_axes])]
    times = pd.get("times")
    if times is None and train_grid.has_time:
        times = train_grid.axes[-1].points[:, 0].tolist()
    test_grid = ProductGrid.from_arrays(
        params, spatial,
        np.asarray(times, dtype=np.float64)[:, None] if times is not None else None)
    roles = [a.role for a in test_grid.axes]

    if isinstance(model, GappyModel):
        mean = gappy_predict_mean(model, test_grid).reshape(test_grid.shape)
        lower, upper = gappy_predict_var_bounds(model, test_grid)
        write_tensor(os.path.join(out, "mean.kgp"), mean, roles)
        write_tensor(os.path.join(out, "var_lower.kgp"),
                     lower.reshape(test_grid.shape), roles)
        write_tensor(os.path.join(out, "var_upper.kgp"),
                     upper.reshape(test_grid.shape), roles)
        names = "mean.kgp, var_lower.kgp, var_upper.kgp"
    else:
        mean = predict_mean(model, test_grid)
        var = predict_var(model, test_grid)
        write_tensor(os.path.join(out, "mean.kgp"), mean, roles)
        write_tensor(os.path.join(out, "var.kgp"), var, roles)
        names = "mean.kgp, var.kgp"
    write_json(os.path.join(out, "resolved_config.json"), cfg)
    print(f"wrote {names} to {out}")
    return EXIT_OK


# verify / bench -----------------------------------------------------------------

def cmd_verify(args):
    from .verify import run_suite

    report = run_suite(args.suite, seed=args.seed)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, f"verify_{args.suite}.json"), report)
    for c in report["checks"]:
        tol = "-" if c["tolerance"] is None else f"{c['tolerance']:.1e}"
        status = "pass" if c["passed"] else "FAIL"
        print(f"[{status}] {c['name']}: margin={c['margin']:.3e} tol={tol}")
    print(f"suite {args.suite}: {'PASS' if report['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


def cmd_bench(args):
    from .bench import bench_grid, write_bench_csv

    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise ValidationError(f"bad --sizes value {args.sizes!r}")
    rows = bench_grid(sizes, repeats=args.repeats, seed=args.seed)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "bench.csv")
    write_bench_csv(rows, path)
    for r in rows:
        ratio = f"{r['ratio_nlml']:.2f}" if r["ratio_nlml"] else "-"
        dense = f"{r['t_dense']:.3g}s" if r["t_dense"] else "-"
        print(f"M={r['M']:5d} n={r['n_total']:7d} nlml={r['t_nlml']:.4g}s "
              f"ratio={ratio} dense={dense}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bench_kernels(args):
    from .bench import bench_kernels, write_kernel_bench_csv

    rows = bench_kernels(repeats=args.repeats, seed=args.seed)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "bench_kernels.csv")
    write_kernel_bench_csv(rows, path)
    for r in rows:
        print(f"{r['kernel']:14s} size={r['size']:6d} {r['backend']:5s} "
              f"{r['seconds']:.4g}s (speedup {r['speedup']:.2f}x)")
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "verify": cmd_verify,
    "bench": cmd_bench,
    "bench-kernels": cmd_bench_kernels,
}


def main(argv=None):
    if os.environ.get("KGP_THREADS"):
        try:
            import numba

            numba.set_num_threads(max(1, int(os.environ["KGP_THREADS"])))
        except (ImportError, ValueError):
            pass
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
