"""Command-line entry point: ``sdfad <command> [flags]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
Tunable flags can also come from a ``key=value`` file given with
``--config``; flags on the command line win.
"""

import argparse
import logging
import sys

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import SdfAdError
from .infer import evaluate, metrics_json, noise_sweep, read_scores, score_points, write_scores
from .mesh import fit_transform, load_cloud, load_labels, load_mesh
from .npg import SamplingConfig, generate_training_set
from .synth import ANOMALIES, SHAPES, SynthSpec, synth
from .train import ModelConfig, TrainConfig, TrainedModel, gradient_check, init_model, train

# flag dest -> (type, default); these may also come from --config
TUNABLES = {
    "seed": (int, 0),
    "base_lod": (int, 2),
    "lod_levels": (int, 3),
    "surface_count": (int, 20000),
    "ratio": (str, "2:2:1"),
    "near_sigma": (float, 0.05),
    "lr": (float, 1e-4),
    "steps": (int, 2000),
    "batch": (int, 4096),
    "dtype": (str, "float32"),
}


class UsageError(Exception):
    def __init__(self, message, flag=None):
        self.flag = flag
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_tunables(p, names):
    help_text = {
        "seed": "random seed for every stream",
        "base_lod": "base number of divisions; level l has 2**(l+base_lod) cells per axis",
        "lod_levels": "number of feature-grid levels L (1..6)",
        "surface_count": "surface points per mesh (s)",
        "ratio": "surface:near:uniform sampling ratio, e.g. 2:2:1",
        "near_sigma": "std of near-surface Gaussian offsets (normalised units)",
        "lr": "Adam learning rate",
        "steps": "optimisation steps",
        "batch": "mini-batch size",
        "dtype": "parameter precision: float32 or float64",
    }
    for name in names:
        typ, default = TUNABLES[name]
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None,
                       help=f"{help_text[name]} (default: {default})")
    p.add_argument("--config", help="plain-text key=value file; command-line flags override it")


def build_parser():
    parser = _Parser(prog="sdfad", description="Signed-distance anomaly detection on 3D point clouds.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic training mesh and labelled test cloud")
    p.add_argument("--shape", choices=SHAPES, default="sphere", help="base shape (default: sphere)")
    p.add_argument("--subdivisions", type=int, default=4, help="mesh resolution (default: 4)")
    p.add_argument("--anomaly", choices=ANOMALIES, default="bump", help="anomaly type (default: bump)")
    p.add_argument("--anomaly-radius", type=float, default=0.2, help="geodesic patch radius (default: 0.2)")
    p.add_argument("--anomaly-height", type=float, default=0.1, help="patch displacement (default: 0.1)")
    p.add_argument("--points", type=int, default=10000, help="test cloud size (default: 10000)")
    p.add_argument("--mesh-out", required=True, help="clean mesh output (.obj)")
    p.add_argument("--cloud-out", required=True, help="test cloud output (x,y,z CSV)")
    p.add_argument("--labels-out", required=True, help="labels output (index,label CSV)")
    _add_tunables(p, ["seed"])

    p = sub.add_parser("train", help="train a model on one or more normal meshes")
    p.add_argument("--mesh", action="append", required=True, help="training mesh (.obj/.ply); repeatable")
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_tunables(p, ["seed", "base_lod", "lod_levels", "surface_count", "ratio", "near_sigma",
                      "lr", "steps", "batch", "dtype"])

    p = sub.add_parser("score", help="score a test cloud with a trained model")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--cloud", required=True, help="test cloud (.csv/.xyz/.ply)")
    p.add_argument("--labels", help="optional labels CSV; prints metrics when given")
    p.add_argument("--out", required=True, help="scores CSV output")

    p = sub.add_parser("eval", help="AUROC and AUPR of a scores file against labels")
    p.add_argument("--scores", required=True, help="scores CSV written by 'score'")
    p.add_argument("--labels", required=True, help="labels CSV (index,label)")
    p.add_argument("--out", help="also write the metrics JSON here")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--mesh", required=True, help="mesh to draw the check batch from")
    p.add_argument("--model", help="checkpoint to check (default: freshly initialised model)")
    p.add_argument("--epsilon", type=float, default=1e-5, help="finite-difference step (default: 1e-5)")
    p.add_argument("--tolerance", type=float, default=1e-4, help="fail above this error (default: 1e-4)")
    _add_tunables(p, ["seed", "base_lod", "lod_levels", "surface_count", "ratio", "near_sigma", "batch"])

    p = sub.add_parser("noise-sweep", help="AUROC under injected Gaussian noise")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--cloud", required=True, help="test cloud")
    p.add_argument("--labels", required=True, help="labels CSV")
    p.add_argument("--sigmas", default="0,0.001,0.003,0.005,0.01",
                   help="comma-separated noise std values (default: 0,0.001,0.003,0.005,0.01)")
    p.add_argument("--out", help="also write the table as CSV here")
    _add_tunables(p, ["seed"])
    return parser


def read_config(path):
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}", "--config") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value", "--config")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args):
    """Fill unset tunables from ``--config`` then from the defaults."""
    config = read_config(args.config) if getattr(args, "config", None) else {}
    for key in config:
        if key not in TUNABLES:
            raise UsageError(f"unknown config key {key!r}", "--config")
    for name, (typ, default) in TUNABLES.items():
        if not hasattr(args, name):
            continue
        if getattr(args, name) is None:
            raw = config.get(name)
            try:
                setattr(args, name, default if raw is None else typ(raw))
            except ValueError:
                raise UsageError(f"bad value {raw!r} for {name}", "--config") from None
    return args


def parse_ratio(text):
    try:
        parts = tuple(int(x) for x in text.split(":"))
    except ValueError:
        parts = ()
    if len(parts) != 3 or min(parts) < 0 or parts[0] == 0:
        raise UsageError(f"ratio must look like a:b:c with a > 0, got {text!r}", "--ratio")
    return parts


def _sampling(args):
    return SamplingConfig(args.surface_count, parse_ratio(args.ratio), args.near_sigma, args.seed)


def _model_cfg(args):
    return ModelConfig(base_lod=args.base_lod, n_levels=args.lod_levels,
                       dtype=getattr(args, "dtype", "float32"))


def cmd_synth(args):
    spec = SynthSpec(args.shape, args.subdivisions, args.anomaly, args.anomaly_radius,
                     args.anomaly_height, args.seed, args.points)
    _, cloud = synth(spec, args.mesh_out, args.cloud_out, args.labels_out)
    print(f"wrote {args.mesh_out}, {args.cloud_out} ({len(cloud)} points, "
          f"{int(cloud.labels.sum())} anomalous), {args.labels_out}")


def cmd_train(args):
    train_cfg = TrainConfig(learning_rate=args.lr, steps=args.steps, batch_size=args.batch,
                            seed=args.seed)
    model = train(args.mesh, _sampling(args), _model_cfg(args), train_cfg)
    save_checkpoint(model, args.out)
    print(f"wrote {args.out}: loss {model.loss_history[0]:.6g} -> {model.loss_history[-1]:.6g}")


def cmd_score(args):
    model = load_checkpoint(args.model)
    cloud = load_cloud(args.cloud, args.labels)
    report = score_points(model, cloud)
    write_scores(args.out, report)
    print(f"object_score={report.object_score!r}")
    if report.metrics:
        print(metrics_json(report.metrics))


def cmd_eval(args):
    scores = read_scores(args.scores)
    labels = load_labels(args.labels, len(scores))
    text = metrics_json(evaluate(scores, labels))
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def cmd_gradcheck(args):
    mesh = load_mesh(args.mesh)
    sampling = _sampling(args)
    if args.model:
        model = load_checkpoint(args.model)
        sampling = model.sampling
    else:
        cfg = _model_cfg(args)
        cfg.dtype = "float64"
        pyramid, net = init_model(cfg, args.seed)
        model = TrainedModel(pyramid, net, fit_transform(mesh.vertices), sampling, cfg,
                             TrainConfig(seed=args.seed))
    points = generate_training_set(mesh.transformed(model.transform), sampling)
    n = min(args.batch, len(points), 512)
    idx = np.random.Generator(np.random.Philox(args.seed)).choice(len(points), n, replace=False)
    batch = points.subset(np.sort(idx))
    err = gradient_check(model, batch, args.epsilon, seed=args.seed)
    ok = err < args.tolerance
    print(f"max_relative_error={err:.3e} ({'ok' if ok else 'FAIL'}, tolerance {args.tolerance:g})")
    return 0 if ok else 2


def cmd_noise_sweep(args):
    try:
        sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --sigmas list {args.sigmas!r}", "--sigmas") from None
    if not sigmas or min(sigmas) < 0:
        raise UsageError("--sigmas needs non-negative values", "--sigmas")
    model = load_checkpoint(args.model)
    cloud = load_cloud(args.cloud, args.labels)
    rows = noise_sweep(model, cloud, sigmas, args.seed)
    lines = ["sigma,auroc,aupr,object_score"]
    for sigma, rep in rows:
        lines.append(f"{sigma!r},{rep.metrics.get('auroc', float('nan'))!r},"
                     f"{rep.metrics.get('aupr', float('nan'))!r},{rep.object_score!r}")
    print("\n".join(lines))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "noise-sweep": cmd_noise_sweep,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; choose from " + ", ".join(COMMANDS))
        resolve(args)
        if hasattr(args, "ratio"):
            parse_ratio(args.ratio)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        rc = COMMANDS[args.command](args)
    except UsageError as exc:
        flag = f" (flag {exc.flag})" if exc.flag else ""
        print(f"sdfad: usage error: {exc}{flag}", file=sys.stderr)
        return 1
    except (SdfAdError, ValueError, OSError) as exc:
        print(f"sdfad: error: {exc}", file=sys.stderr)
        return 2
    return rc or 0


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
