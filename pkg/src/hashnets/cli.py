"""Command-line verification suites writing CSV.

Exit status: 0 when the suite's property holds, 2 when it does not, 1 on
usage or I/O errors. ``HASHNETS_THREADS`` caps the number of worker processes
used for the per-seed loop; rows are always written in seed order.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np

from . import classifier as clf
from . import data as ds
from . import hashednet as hn
from . import hashing, sketch, sketchnet, spectra
from .activations import parse_activation
from .errors import HashNetsError
from .linalg import Rng, sym_eig

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(rows: list[dict], out: str, columns: list[str]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    if out == "-":
        sys.stdout.write(buf.getvalue())
        sys.stdout.flush()
    else:
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(buf.getvalue())


def worker_count() -> int:
    raw = os.environ.get("HASHNETS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"HASHNETS_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("HASHNETS_THREADS must be >= 1")
    return n


def map_seeds(fn, seeds) -> list:
    """``[fn(s) for s in seeds]``, possibly in parallel, always in seed order."""
    seeds = list(seeds)
    workers = min(worker_count(), len(seeds))
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def _seeds(args) -> range:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    return range(args.seed, args.seed + args.seeds)


def _need(args, count: int) -> int:
    return args.min_pass if args.min_pass is not None else count


# ---------------------------------------------------------------------------
# sketch-check

SKETCH_COLUMNS = ["seed", "kind", "n", "d", "rows", "norm_distortion", "inner_distortion",
                  "exact_distortion", "pass"]


def _sketch_seed(opts: dict, seed: int) -> dict:
    r = Rng(seed)
    basis = sketch.random_basis(opts["n"], opts["d"], r.spawn(0))
    if opts["kind"] == "count-sketch":
        S = sketch.count_sketch_new(opts["rows"], opts["n"], r.spawn(1))
    else:
        S = sketch.sparse_embedding_new(opts["rows"], opts["n"], opts["sparsity"], r.spawn(1))
    dist = sketch.distortion(S, basis, opts["pairs"], r.spawn(2))
    return {"seed": seed, "kind": opts["kind"], "n": opts["n"], "d": opts["d"], "rows": opts["rows"],
            "norm_distortion": dist.norm, "inner_distortion": dist.inner,
            "exact_distortion": dist.exact, "pass": dist.norm <= opts["eps"]}


def cmd_sketch_check(args) -> int:
    rows = args.rows or sketch.suggest_sketch_rows(args.kind, args.d, args.eps, args.delta, args.c)
    opts = dict(kind=args.kind, n=args.n, d=args.d, rows=rows, sparsity=args.sparsity,
                pairs=args.pairs, eps=args.eps)
    seeds = _seeds(args)
    out = map_seeds(partial(_sketch_seed, opts), seeds)
    write_rows(out, args.out, SKETCH_COLUMNS)
    need = _need(args, math.ceil(0.9 * len(seeds)))
    return EXIT_OK if sum(r["pass"] for r in out) >= need else EXIT_FAIL


# ---------------------------------------------------------------------------
# bucket-check

BUCKET_COLUMNS = ["seed", "min_load", "max_load", "pass", "worst_deviation"]


def _bucket_seed(opts: dict, seed: int) -> dict:
    h = hashing.kwise_hash_new(opts["t"], opts["n"], opts["b"], Rng(seed))
    res = hashing.concentration_check(hashing.bucket_loads(h), opts["low"], opts["high"])
    return {"seed": seed, "min_load": res.min_load, "max_load": res.max_load, "pass": res.passed,
            "worst_deviation": res.worst_deviation}


def cmd_bucket_check(args) -> int:
    t = args.t or hashing.default_degree(args.n)
    opts = dict(n=args.n, b=args.b, t=t, low=args.low, high=args.high)
    seeds = _seeds(args)
    out = map_seeds(partial(_bucket_seed, opts), seeds)
    write_rows(out, args.out, BUCKET_COLUMNS)
    need = _need(args, math.ceil(0.95 * len(seeds)))
    return EXIT_OK if sum(r["pass"] for r in out) >= need else EXIT_FAIL


# ---------------------------------------------------------------------------
# gap-curve

GAP_COLUMNS = ["kind", "rows", "seed", "max_gap", "mean_gap", "bound"]


def _gap_seed(opts: dict, seed: int) -> list[dict]:
    r = Rng(seed)
    widths = (opts["n1"], *opts["widths"])
    net = sketchnet.random_net(widths, r.spawn(0), normalize=opts["normalize"], A=opts["A"])
    basis = sketch.random_basis(opts["n1"], opts["d"], r.spawn(1))
    X = sketchnet.sample_subspace_points(basis, opts["A"], opts["samples"], r.spawn(3))
    exact, _ = sketchnet.forward_exact(net, X)
    stacks = [(opts["kind"], s, sketchnet.build_stack(net, s, r.spawn(2, s), opts["kind"], opts["sparsity"]))
              for s in opts["rows"]]
    stacks.append(("identity", opts["n1"], sketchnet.identity_stack(net)))
    rows = []
    for kind, s, stack in stacks:
        sk, _ = sketchnet.forward_sketched(net, stack, X)
        gap = np.abs(exact - sk)
        eps = sketchnet.measured_layer_eps(net, stack, X)
        bound = sketchnet.gap_bound(net.depth, 1.0, net.B_norm, opts["A"], eps)
        rows.append({"kind": kind, "rows": s, "seed": seed, "max_gap": float(gap.max()),
                     "mean_gap": float(gap.mean()), "bound": bound})
    return rows


def cmd_gap_curve(args) -> int:
    try:
        sizes = sorted(int(x) for x in args.rows.split(","))
        widths = tuple(int(x) for x in args.widths.split(","))
    except ValueError:
        raise UsageError("--rows and --widths take comma-separated integers") from None
    opts = dict(n1=args.n1, widths=widths, d=args.d, rows=sizes, kind=args.kind, sparsity=args.sparsity,
                samples=args.samples, A=args.A, normalize=not args.no_normalize)
    per_seed = map_seeds(partial(_gap_seed, opts), _seeds(args))
    out = [row for rows in per_seed for row in rows]
    write_rows(out, args.out, GAP_COLUMNS)
    medians = [statistics.median(r["max_gap"] for r in out if r["rows"] == s and r["kind"] != "identity")
               for s in sizes]
    monotone = all(b <= a for a, b in zip(medians, medians[1:]))
    identity_zero = all(r["max_gap"] == 0.0 for r in out if r["kind"] == "identity")
    return EXIT_OK if monotone and identity_zero else EXIT_FAIL


# ---------------------------------------------------------------------------
# hessian-check

HESSIAN_COLUMNS = ["seed", "max_rel_error", "lambda_min", "lambda_max", "A_min", "A_max", "pass"]


def _hessian_seed(opts: dict, seed: int) -> dict:
    r = Rng(seed)
    phi = parse_activation(opts["activation"])
    teacher = hn.sample_teacher(opts["n"], opts["k"], opts["b"], r.spawn(0), phi=phi)
    samples = hn.sample_dataset(teacher, opts["m"], r.spawn(1))
    red = hn.hessian_reduction_check(teacher, samples, opts["trials"], r.spawn(2))
    eig = sym_eig(hn.risk_hessian(teacher.w, samples, teacher.v, teacher.layer.index, phi))
    params = hn.spectrum_bounds(teacher, samples)
    ok = red.max_rel_error <= opts["tol"] and eig[-1] > 0
    return {"seed": seed, "max_rel_error": red.max_rel_error, "lambda_min": float(eig[-1]),
            "lambda_max": float(eig[0]), "A_min": params.A_min, "A_max": params.A_max, "pass": ok}


def cmd_hessian_check(args) -> int:
    opts = dict(n=args.n, k=args.k, b=args.b, m=args.m, trials=args.trials, tol=args.tol,
                activation=args.activation)
    out = map_seeds(partial(_hessian_seed, opts), _seeds(args))
    write_rows(out, args.out, HESSIAN_COLUMNS)
    return EXIT_OK if all(r["pass"] for r in out) else EXIT_FAIL


# ---------------------------------------------------------------------------
# recover

RECOVER_COLUMNS = ["seed", "step", "sq_error", "rel_error", "ratio"]


def _recover_seed(opts: dict, seed: int) -> tuple[list[dict], bool]:
    r = Rng(seed)
    teacher = hn.sample_teacher(opts["n"], opts["k"], opts["b"], r.spawn(0))
    samples = hn.sample_dataset(teacher, opts["m"], r.spawn(1))
    params = hn.spectrum_bounds(teacher, samples)
    w0 = hn.perturbed_init(teacher.w, opts["fraction"], r.spawn(2))
    step = opts["step_size"]
    if step is None and opts["m0"] == "formula":
        step = 1.0 / params.M0_formula
    trace = hn.gd_recover(teacher, samples, w0, opts["steps"], step, params)
    rel = trace.rel_errors
    rows = [{"seed": seed, "step": t, "sq_error": float(trace.sq_errors[t]), "rel_error": float(rel[t]),
             "ratio": float(trace.ratios[t - 1]) if t else math.nan} for t in range(rel.size)]
    ok = (not trace.diverged and rel[-1] <= opts["target"]
          and trace.non_increasing_fraction() >= opts["monotone"])
    return rows, ok


def cmd_recover(args) -> int:
    opts = dict(n=args.n, k=args.k, b=args.b, m=args.m, fraction=args.fraction, steps=args.steps,
                step_size=args.step_size, m0=args.m0, target=args.target, monotone=args.monotone)
    res = map_seeds(partial(_recover_seed, opts), _seeds(args))
    write_rows([row for rows, _ in res for row in rows], args.out, RECOVER_COLUMNS)
    return EXIT_OK if all(ok for _, ok in res) else EXIT_FAIL


# ---------------------------------------------------------------------------
# compress-train and spectra

TRAIN_COLUMNS = ["variant", "epoch", "loss", "train_error", "test_error"]
SPECTRA_COLUMNS = ["seed", "layer", "rows", "cols", "sigma_min", "sigma_max", "condition_number",
                   "stable_rank", "full_rank"]


def _load_data(args) -> tuple[ds.Dataset, ds.Dataset]:
    if args.csv:
        data = ds.load_csv(args.csv, scale=args.csv_scale, n_classes=10)
    elif args.images or args.labels:
        if not (args.images and args.labels):
            raise UsageError("--images and --labels must be given together")
        data = ds.load_idx(args.images, args.labels)
    else:
        data = ds.load_bundled_mnist()
    if args.test_images or args.test_labels:
        if not (args.test_images and args.test_labels):
            raise UsageError("--test-images and --test-labels must be given together")
        train, test = data, ds.load_idx(args.test_images, args.test_labels)
    else:
        train, test = ds.train_test_split(data, min(args.n_test, data.m), Rng(args.split_seed))
    if args.n_train is not None:
        train = train.subset(slice(0, args.n_train))
    return train, test


def _config(args, seed: int) -> clf.TrainConfig:
    return clf.TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, lr_decay=args.lr_decay,
                           momentum=args.momentum, keep=args.keep, seed=seed)


def cmd_compress_train(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants or any(v not in clf.VARIANTS for v in variants):
        raise UsageError(f"--variants must be a comma-separated subset of {clf.VARIANTS}")
    train, test = _load_data(args)
    reports = {}
    for v in variants:
        arch = clf.size_match(v, train.n, args.k, args.ratio, 10, args.hash_first_only)
        reports[v] = clf.train_classifier(train, arch, _config(args, args.seed), test)
    write_rows([row for rep in reports.values() for row in rep.rows()], args.out, TRAIN_COLUMNS)
    if "hashed" not in reports:
        return EXIT_OK
    h = reports["hashed"].final_test_error
    ok = all(h < rep.final_test_error for v, rep in reports.items() if v in ("thin", "small"))
    return EXIT_OK if ok else EXIT_FAIL


def _spectra_seed(opts: dict, seed: int) -> list[dict]:
    train, test, args = opts["train"], opts["test"], opts["args"]
    arch = clf.size_match("hashed", train.n, args.k, args.ratio, 10, args.hash_first_only)
    rep = clf.train_classifier(train, arch, _config(args, seed), test)
    mats = [L.virtual() for L in rep.model.layers]
    rows = spectra.spectra_batch(mats, [seed] * len(mats), args.rank_tol, args.svd)
    for i, row in enumerate(rows, 1):
        row["layer"] = f"W{i}"
    return rows


def _read_matrix(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def cmd_spectra(args) -> int:
    if args.matrix:
        mats = [_read_matrix(p) for p in args.matrix]
        out = spectra.spectra_batch(mats, range(len(mats)), args.rank_tol, args.svd)
        for row, p in zip(out, args.matrix):
            row["layer"] = os.path.basename(p)
    else:
        train, test = _load_data(args)
        per_seed = map_seeds(partial(_spectra_seed, {"train": train, "test": test, "args": args}), _seeds(args))
        out = [row for rows in per_seed for row in rows]
    write_rows(out, args.out, SPECTRA_COLUMNS)
    return EXIT_OK if all(r["full_rank"] for r in out) else EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, seeds: int) -> None:
    p.add_argument("--seeds", type=int, default=seeds, help=f"number of seeds (default {seeds})")
    p.add_argument("--seed", type=int, default=0, help="first seed (default 0)")
    p.add_argument("--out", default="-", help="output CSV path, '-' for stdout (default)")


def _data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data (default: 5000-sample MNIST CSV bundled with mlxtend)")
    g.add_argument("--csv", help="CSV with one sample per line, label last")
    g.add_argument("--csv-scale", type=float, default=255.0, help="divide CSV features by this (default 255)")
    g.add_argument("--images", help="IDX image file (optionally gzipped)")
    g.add_argument("--labels", help="IDX label file")
    g.add_argument("--test-images", help="IDX test images; otherwise a split of the training data is held out")
    g.add_argument("--test-labels", help="IDX test labels")
    g.add_argument("--n-test", type=int, default=1000, help="held-out samples when splitting (default 1000)")
    g.add_argument("--n-train", type=int, help="truncate the training set")
    g.add_argument("--split-seed", type=int, default=0)
    t = p.add_argument_group("training")
    t.add_argument("--k", type=int, default=500, help="hidden units of the hashed net (default 500)")
    t.add_argument("--ratio", type=float, default=64.0, help="compression ratio (default 64)")
    t.add_argument("--hash-first-only", action="store_true", help="keep the output layer dense")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--lr-decay", choices=("inv-sqrt", "none"), default="inv-sqrt")
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--keep", type=float, default=0.9, help="dropout keep probability (default 0.9)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="hashnets", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sketch-check", formatter_class=fmt, help="subspace-embedding distortion",
                       description="Distortion of a random sketch on a random d-dimensional subspace.\n"
                                   f"CSV columns: {','.join(SKETCH_COLUMNS)}\n"
                                   "Passes when norm_distortion <= eps in at least --min-pass seeds "
                                   "(default 90%).")
    p.add_argument("--kind", choices=("count-sketch", "sparse-embedding"), default="count-sketch")
    p.add_argument("--n", type=int, default=8192)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--eps", type=float, default=0.25)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--rows", type=int, help="sketch rows (default: suggested from d, eps, delta)")
    p.add_argument("--c", type=float, default=1.0, help="constant in the row formula (default 1)")
    p.add_argument("--sparsity", type=int, default=4, help="nonzeros per column for sparse-embedding")
    p.add_argument("--pairs", type=int, default=10000, help="sampled unit vectors per seed")
    p.add_argument("--min-pass", type=int)
    _common(p, 20)
    p.set_defaults(func=cmd_sketch_check)

    p = sub.add_parser("bucket-check", formatter_class=fmt, help="hash bucket-load concentration",
                       description="Bucket loads of a t-wise polynomial hash from [N] to [B].\n"
                                   f"CSV columns: {','.join(BUCKET_COLUMNS)}\n"
                                   "pass means every load lies in [low*N/B, high*N/B]; the run passes "
                                   "when at least --min-pass seeds do (default 95%).")
    p.add_argument("--n", type=int, default=50176)
    p.add_argument("--b", type=int, default=784)
    p.add_argument("--t", type=int, help="independence degree (default ceil(log2 N))")
    p.add_argument("--low", type=float, default=0.9)
    p.add_argument("--high", type=float, default=1.1)
    p.add_argument("--min-pass", type=int)
    _common(p, 20)
    p.set_defaults(func=cmd_bucket_check)

    p = sub.add_parser("gap-curve", formatter_class=fmt, help="sketched-net output gap versus sketch size",
                       description="Output gap between exact and sketched deep nets on subspace inputs.\n"
                                   f"CSV columns: {','.join(GAP_COLUMNS)}\n"
                                   "Layers narrower than the requested rows use the identity sketch. "
                                   "bound is the analytic gap bound with each sketch's measured "
                                   "distortion. Passes when the median max_gap is non-increasing in rows "
                                   "and every identity row has gap exactly 0.")
    p.add_argument("--n1", type=int, default=256, help="input width (default 256)")
    p.add_argument("--widths", default="256,256", help="hidden widths n_2..n_{q+1} (default 256,256)")
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--rows", default="16,32,64,128,256", help="sketch sizes")
    p.add_argument("--kind", choices=("count-sketch", "sparse-embedding"), default="sparse-embedding")
    p.add_argument("--sparsity", type=int, default=4)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--A", type=float, default=1.0, help="input radius")
    p.add_argument("--no-normalize", action="store_true", help="plain ReLU instead of 1/sqrt(width) scaling")
    _common(p, 10)
    p.set_defaults(func=cmd_gap_curve)

    p = sub.add_parser("hessian-check", formatter_class=fmt, help="Hessian lifting identity and positivity",
                       description="Hashed versus lifted unshared Hessian quadratic forms at the teacher, "
                                   "and the smallest hashed Hessian eigenvalue.\n"
                                   f"CSV columns: {','.join(HESSIAN_COLUMNS)}\n"
                                   "pass means max_rel_error <= tol and lambda_min > 0.")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--b", type=int, default=6)
    p.add_argument("--m", type=int, default=500)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--activation", default="relu", help="relu or leaky-relu[:alpha]")
    _common(p, 1)
    p.set_defaults(func=cmd_hessian_check)

    p = sub.add_parser("recover", formatter_class=fmt, help="gradient-descent recovery of a hashed teacher",
                       description="Full-batch GD from a perturbed teacher.\n"
                                   f"CSV columns: {','.join(RECOVER_COLUMNS)}\n"
                                   "Passes when, for every seed, the final rel_error <= target, the error "
                                   "is non-increasing in at least --monotone of the steps, and GD did not "
                                   "diverge.")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--b", type=int, default=12)
    p.add_argument("--m", type=int, default=20000)
    p.add_argument("--fraction", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--step-size", type=float, help="override the 1/M0 step")
    p.add_argument("--m0", choices=("exact", "formula"), default="exact",
                   help="M0 from the measured Hessian spectrum (default) or the closed-form bound")
    p.add_argument("--target", type=float, default=1e-6)
    p.add_argument("--monotone", type=float, default=0.95)
    _common(p, 1)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("compress-train", formatter_class=fmt, help="HashedNets vs SmallNets vs ThinNets",
                       description="Train size-matched classifiers on one seed.\n"
                                   f"CSV columns: {','.join(TRAIN_COLUMNS)}\n"
                                   "Passes when the hashed net's final test error is below every thin and "
                                   "small variant's.")
    p.add_argument("--variants", default="hashed,thin,small")
    _data_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_compress_train)

    p = sub.add_parser("spectra", formatter_class=fmt, help="singular-value diagnostics",
                       description="Spectra of trained hashed-net weight matrices per seed, or of "
                                   "matrices given with --matrix (.npy or comma-separated text).\n"
                                   f"CSV columns: {','.join(SPECTRA_COLUMNS)}\n"
                                   "Passes when every matrix is full rank.")
    p.add_argument("--matrix", action="append", help="matrix file; repeatable")
    p.add_argument("--rank-tol", type=float, default=1e-6)
    p.add_argument("--svd", choices=("jacobi", "lapack"), default="jacobi")
    _data_flags(p)
    _common(p, 1)
    p.set_defaults(func=cmd_spectra)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, HashNetsError, OSError) as e:
        print(f"hashnets {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
