"""Command-line entry point: ``teachrobust <experiment> [flags]``.

Every run writes into its own output directory and always produces a
``report.json`` holding the headline numbers and the fully resolved config.
Flags override values from ``--config FILE``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import framework as fw
from . import linlab, nn, parity, shapes

log = logging.getLogger("teachrobust")

EXPERIMENTS = ("parity-active", "parity-sq", "example1", "shapes-gen", "shapes-train", "robust-eval", "lp-dist")

DEFAULTS = {
    "parity-active": {"d": 100, "trials": 100},
    "parity-sq": {
        "d": 16, "support_size": 8, "budget": 1000, "tolerance": 0.01,
        "max_feature_size": 2, "noise": "uniform",
    },
    "example1": {"n_per_class": 1000, "n_test": 1000, "eps_extra": 1e-6, "sparse_seeds": 20},
    "shapes-gen": {"count": 1000, "dist": "clean", "balance": "exact", "out": "dataset.shd", "pgm": 0},
    "shapes-train": {
        "train_count": 1000, "epochs": 10, "batch_size": 50, "lr": 0.001,
        "eval_count": 1000, "prefilter": False, "save_params": False,
    },
    "robust-eval": {
        "mode": "strong", "pairing": "quadrant", "attack": "identity",
        "delta": 0.1, "n_samples": 1000, "resolution": 201,
    },
    "lp-dist": {"p": 2, "a": None, "b": None},
}
COMMON = {"experiment": None, "seed": 0, "out_dir": None, "force": False}

_CHOICES = {
    "noise": ("uniform", "exact"),
    "dist": ("clean", "adversarial"),
    "balance": ("exact", "bernoulli"),
    "mode": ("strong", "weak"),
    "pairing": ("quadrant", "max-margin", "rounded-comparison"),
    "attack": ("identity", "lp2", "lpinf", "fast-gradient", "density"),
    "p": (0, 1, 2),
}
_POSITIVE = {
    "d", "trials", "support_size", "budget", "max_feature_size", "n_per_class", "n_test",
    "sparse_seeds", "count", "train_count", "epochs", "batch_size", "eval_count",
    "n_samples", "resolution", "lr", "eps_extra", "delta",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    params: dict = field(default_factory=dict)
    out_dir: Path = Path("runs")
    force: bool = False

    def resolved(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, **self.params}


def _bool(value, key):
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("on", "true", "yes", "1"):
        return True
    if isinstance(value, str) and value.lower() in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected on/off, got {value!r}")


def _coerce(key, value, default):
    if value is None:
        return None
    if isinstance(default, bool):
        return _bool(value, key)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if isinstance(default, float):
        try:
            out = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
        if not math.isfinite(out):
            raise ConfigError(f"{key}: must be finite")
        return out
    return value


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a flat dict of settings; unknown keys and bad values are rejected."""
    raw = dict(raw)
    experiment = raw.pop("experiment", None)
    if experiment is None:
        raise ConfigError("experiment: missing")
    if experiment not in DEFAULTS:
        raise ConfigError(f"experiment: unknown experiment {experiment!r}")
    defaults = DEFAULTS[experiment]
    unknown = sorted(set(raw) - set(defaults) - set(COMMON))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key for {experiment}")

    seed = _coerce("seed", raw.pop("seed", 0), 0)
    out_dir = raw.pop("out_dir", None)
    force = _bool(raw.pop("force", False), "force")
    params = dict(defaults)
    for key, value in raw.items():
        params[key] = _coerce(key, value, defaults[key])

    for key, value in params.items():
        if key in _CHOICES and value not in _CHOICES[key]:
            raise ConfigError(f"{key}: must be one of {_CHOICES[key]}, got {value!r}")
        if key in _POSITIVE and value <= 0:
            raise ConfigError(f"{key}: must be positive, got {value!r}")
    _validate(experiment, params)
    if out_dir is None:
        out_dir = Path("runs") / f"{experiment}-seed{seed}"
    return ExperimentConfig(experiment, seed, params, Path(out_dir), force)


def _validate(experiment, p):
    if experiment == "parity-sq":
        if p["support_size"] > p["d"]:
            raise ConfigError(f"support_size: {p['support_size']} exceeds d={p['d']}")
        if not 0 < p["tolerance"] < 1:
            raise ConfigError("tolerance: must lie in (0, 1)")
        if p["d"] > parity.ENUMERATION_LIMIT:
            raise ConfigError(f"d: exact scoring enumerates the cube, needs d <= {parity.ENUMERATION_LIMIT}")
    if experiment == "shapes-gen" and p["balance"] == "exact" and p["count"] % 2:
        raise ConfigError(f"count: exact balance needs an even count, got {p['count']}")
    if experiment == "shapes-train" and p["train_count"] % 2:
        raise ConfigError(f"train_count: must be even, got {p['train_count']}")
    if experiment == "lp-dist" and (p["a"] is None or p["b"] is None):
        raise ConfigError("a: two PGM paths are required")
    if experiment == "robust-eval" and p["resolution"] < 2:
        raise ConfigError("resolution: needs at least 2 points per axis")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="teachrobust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="experiment", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON config file; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--force", action="store_true", default=None, help="allow a non-empty out dir")
        return p

    common(sub.add_parser("run", help="run the experiment named in --config"))

    p = common(sub.add_parser("parity-active", help="recover parity supports with d+1 queries"))
    p.add_argument("--d", type=int)
    p.add_argument("--trials", type=int)

    p = common(sub.add_parser("parity-sq", help="linear fit on two points and SQ feature search"))
    p.add_argument("--d", type=int)
    p.add_argument("--support-size", dest="support_size", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--max-feature-size", dest="max_feature_size", type=int)
    p.add_argument("--noise", choices=_CHOICES["noise"])

    p = common(sub.add_parser("example1", help="dense, sparse and rounded linear students"))
    p.add_argument("--n-per-class", dest="n_per_class", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--eps-extra", dest="eps_extra", type=float)
    p.add_argument("--sparse-seeds", dest="sparse_seeds", type=int)

    p = common(sub.add_parser("shapes-gen", help="write a square/disk dataset file"))
    p.add_argument("--count", type=int)
    p.add_argument("--dist", choices=_CHOICES["dist"])
    p.add_argument("--balance", choices=_CHOICES["balance"])
    p.add_argument("--out", help="dataset file name inside the out dir")
    p.add_argument("--pgm", type=int, help="also export the first N images as PGM")

    p = common(sub.add_parser("shapes-train", help="train the CNN, with or without the prefilter"))
    p.add_argument("--prefilter", choices=("on", "off"))
    p.add_argument("--train-count", dest="train_count", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-count", dest="eval_count", type=int)
    p.add_argument("--save-params", dest="save_params", action="store_true", default=None)

    p = common(sub.add_parser("robust-eval", help="strong or attack-conditioned robustness"))
    p.add_argument("--mode", choices=_CHOICES["mode"])
    p.add_argument("--pairing", choices=_CHOICES["pairing"])
    p.add_argument("--attack", choices=_CHOICES["attack"])
    p.add_argument("--delta", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--resolution", type=int)

    p = common(sub.add_parser("lp-dist", help="l0/l1/l2 distance between two PGM images"))
    p.add_argument("--p", type=int, choices=_CHOICES["p"])
    p.add_argument("a", nargs="?")
    p.add_argument("b", nargs="?")
    return parser


def parse_config(argv=None) -> ExperimentConfig:
    args = vars(_build_parser().parse_args(argv))
    args.pop("verbose")
    path = args.pop("config")
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: malformed JSON in {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a JSON object")
    command = args.pop("experiment")
    if command != "run":
        if raw.get("experiment", command) != command:
            raise ConfigError(f"experiment: file says {raw['experiment']!r}, command says {command!r}")
        raw["experiment"] = command
    raw.update({k: v for k, v in args.items() if v is not None})
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# Artifact writers
# ---------------------------------------------------------------------------


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_loss,test_accuracy,adversarial_accuracy\n")
        for r in history:
            fh.write(f"{r.epoch},{r.train_loss:.6f},{r.test_accuracy:.6f},{r.adversarial_accuracy:.6f}\n")


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _run_parity_active(cfg, out):
    p = cfg.params
    d = p["d"]
    rng = np.random.default_rng(cfg.seed)
    rows = []
    recovered = 0
    for trial in range(p["trials"]):
        extra = np.flatnonzero(rng.integers(0, 2, size=d - 1)) + 2
        support = parity.ParitySupport(d, (1, *extra.tolist()))
        teacher = parity.ParityTeacher(support)
        query = parity.CountingQuery(teacher)
        learned = parity.active_teacher_learn(query, d)
        ok = learned == support
        recovered += ok
        rows.append((trial, len(support), int(ok), query.count))
    _write_rows(out / "trials.csv", ("trial", "support_size", "recovered", "queries"), rows)
    counts = sorted({r[3] for r in rows})
    return {
        "recovery_rate": recovered / p["trials"],
        "queries_per_trial": counts[0] if len(counts) == 1 else counts,
    }


def _run_parity_sq(cfg, out):
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    support = parity.random_teacher_support(p["d"], p["support_size"], rng)
    teacher = parity.ParityTeacher(support)
    cube = parity.UniformCube(p["d"])
    mu = parity.TwoPoint(p["d"])

    linear = parity.train_linear_on_mu(teacher)
    oracle = parity.SQOracle(teacher, cube, p["tolerance"], p["noise"], seed=cfg.seed)
    hyp = parity.sq_student_learn(oracle, p["budget"], p["max_feature_size"])
    return {
        "support": list(support.members),
        "linear_on_mu": {
            "weights_nonzero": {str(i + 1): float(w) for i, w in enumerate(linear.weights) if w != 0},
            "bias": linear.bias,
            "accuracy_mu": parity.agreement_on(linear.predict, teacher, mu),
            "accuracy_nu": parity.agreement_on(linear.predict, teacher, cube),
        },
        "sq_student": {
            "hypothesis": _describe_hypothesis(hyp),
            "queries": oracle.query_count,
            "accuracy_nu": parity.agreement_on(hyp.predict, teacher, cube),
        },
    }


def _describe_hypothesis(h):
    if isinstance(h, parity.SupportGuess):
        return {"kind": "support", "members": list(h.support.members)}
    return {"kind": "constant", "value": int(h.bias >= 0.5)}


def _run_example1(cfg, out):
    p = cfg.params
    train = linlab.gen_example1(p["n_per_class"], seed=cfg.seed)
    dense = linlab.fit_linear(train)
    sparse = linlab.fit_linear(train, mask=linlab.SPARSE_MASK)
    rounded = linlab.round_coefficients(sparse)
    train_acc = float(np.mean(linlab.predict(dense, train.X) == train.y))

    test = linlab.gen_example1(p["n_test"], seed=[cfg.seed, 1])
    correct = linlab.predict(dense, test.X) == test.y
    flips = []
    for x in test.X[correct]:
        res = linlab.adversarial_flip(x, dense, p["eps_extra"])
        same_teacher = fw.evaluate_teacher(linlab.TEACHER, res.x_hat) == fw.evaluate_teacher(linlab.TEACHER, x)
        flips.append((res.eps_min, res.flipped, same_teacher, res.left_box))
    eps = np.array([f[0] for f in flips])

    sparse_runs = []
    for s in range(p["sparse_seeds"]):
        coef = linlab.fit_linear(linlab.gen_example1(p["n_per_class"], seed=[cfg.seed, 2, s]), linlab.SPARSE_MASK)
        sparse_runs.append((coef.alpha[0], coef.alpha[-1]))
    sparse_runs = np.array(sparse_runs)
    dev = np.abs(sparse_runs - np.array([-2.0, 2.0])).max()

    grid = linlab.grid_disagreements(rounded)
    counter = linlab.find_sparse_counterexample(sparse)

    _write_rows(
        out / "coefficients.csv",
        ("index", "dense", "sparse", "rounded"),
        [(i + 1, f"{dense.alpha[i]:.10f}", f"{sparse.alpha[i]:.10f}", f"{rounded.alpha[i]:.0f}") for i in range(linlab.DIM)],
    )
    _write_rows(
        out / "flips.csv",
        ("eps_min", "flipped", "teacher_unchanged", "left_box"),
        [(f"{e:.10f}", int(f), int(t), int(b)) for e, f, t, b in flips],
    )
    return {
        "dense_train_accuracy": train_acc,
        "test_points_correct": int(correct.sum()),
        "flip_success_rate": float(np.mean([f[1] for f in flips])) if flips else None,
        "teacher_unchanged_rate": float(np.mean([f[2] for f in flips])) if flips else None,
        "left_box_rate": float(np.mean([f[3] for f in flips])) if flips else None,
        "eps_min": {
            "mean": float(eps.mean()), "median": float(np.median(eps)),
            "min": float(eps.min()), "max": float(eps.max()),
        } if len(eps) else None,
        "sparse_coefficients": [float(sparse.alpha[0]), float(sparse.alpha[-1])],
        "sparse_seed_max_deviation": float(dev),
        "rounded_coefficients": [float(rounded.alpha[0]), float(rounded.alpha[-1])],
        "rounded_grid": {"n_evaluated": grid.n_evaluated, "n_disagree": grid.n_disagree},
        "sparse_counterexample": None if counter is None else [float(counter[0]), float(counter[-1])],
    }


def _run_shapes_gen(cfg, out):
    p = cfg.params
    ds = shapes.gen_dataset(p["count"], p["dist"], p["balance"], cfg.seed)
    name = Path(p["out"]).name
    shapes.save_dataset(ds, out / name)
    for k in range(min(p["pgm"], len(ds))):
        shapes.export_pgm(ds[k], out / f"image_{k:04d}.pgm")
    textured = np.array([s.textured for s in ds.specs])
    return {
        "file": name,
        "count": len(ds),
        "squares": int((ds.labels == shapes.SQUARE).sum()),
        "disks": int((ds.labels == shapes.DISK).sum()),
        "textured_squares": int((textured & (ds.labels == shapes.SQUARE)).sum()),
        "textured_disks": int((textured & (ds.labels == shapes.DISK)).sum()),
    }


def _run_shapes_train(cfg, out):
    p = cfg.params
    train_ds = shapes.gen_dataset(p["train_count"], shapes.CLEAN, "exact", cfg.seed)
    config = nn.TrainConfig(epochs=p["epochs"], batch_size=p["batch_size"], lr=p["lr"], eval_count=p["eval_count"])

    def progress(r):
        log.info("epoch %d loss %.4f test %.3f adversarial %.3f",
                 r.epoch, r.train_loss, r.test_accuracy, r.adversarial_accuracy)

    params, history = nn.train(train_ds, config, prefilter=p["prefilter"], seed=cfg.seed, progress=progress)
    write_history_csv(history, out / "history.csv")
    if p["save_params"]:
        nn.save_params(params, out / "params.nnp")
    final = history.final
    return {
        "final_train_loss": final.train_loss,
        "final_test_accuracy": final.test_accuracy,
        "final_adversarial_accuracy": final.adversarial_accuracy,
        "epochs": len(history),
    }


def _two_square_mu(n, rng):
    """Uniform on [0.5, 1]^2 union [-1, -0.5]^2."""
    x = rng.uniform(0.5, 1.0, size=(n, 2))
    flip = rng.integers(0, 2, size=n).astype(bool)
    x[flip] *= -1
    return x


def _off_diagonal_mu(n, rng):
    """Uniform on [-1, -0.5] x [0.5, 1] union [0.5, 1] x [-1, -0.5]."""
    x = rng.uniform(0.5, 1.0, size=(n, 2))
    x[:, 0] *= -1
    flip = rng.integers(0, 2, size=n).astype(bool)
    x[flip] *= -1
    return x


def _pairing(name):
    """(student, teacher, gradient, base sampler, strong-check domain) for a named pairing."""
    if name == "quadrant":
        def student(x):
            if x[1] > x[0]:
                return fw.CLASS_A
            if x[1] < x[0]:
                return fw.CLASS_B
            return fw.UNCERTAIN
        return student, fw.Quadrant(), lambda x: np.array([-1.0, 1.0]), _off_diagonal_mu, 2
    if name == "max-margin":
        student = lambda x: fw.CLASS_A if x[0] + x[1] >= 0 else fw.CLASS_B  # noqa: E731
        teacher = fw.LinearThreshold(hi=0.5, lo=-0.5, axis=0, dim=2)
        return student, teacher, lambda x: np.array([1.0, 1.0]), _two_square_mu, 2
    rounded = linlab.LinearCoefficients(_rounded_alpha(), linlab.SPARSE_MASK)
    student = lambda x: linlab.predict(rounded, x)  # noqa: E731
    base = lambda n, rng: rng.uniform(0.0, 1.0, size=(n, linlab.DIM))  # noqa: E731
    return student, linlab.TEACHER, lambda x: rounded.alpha, base, linlab.DIM


def _rounded_alpha():
    a = np.zeros(linlab.DIM)
    a[0], a[-1] = -2.0, 2.0
    return a


def _run_robust_eval(cfg, out):
    p = cfg.params
    student, teacher, gradient, base, dim = _pairing(p["pairing"])
    if p["mode"] == "strong":
        res = p["resolution"]
        if dim == 2:
            domain = fw.Grid((-1.0, -1.0), (1.0, 1.0), res)
        else:
            domain = fw.Grid((0.0, 0.0), (1.0, 1.0), res, axes=(0, dim - 1), base=np.zeros(dim))
        report = fw.strong_robustness_check(student, teacher, domain)
    else:
        kinds = {
            "identity": lambda: fw.Explicit([base]),
            "lp2": lambda: fw.LpBall(2, p["delta"]),
            "lpinf": lambda: fw.LpBall(math.inf, p["delta"]),
            "fast-gradient": lambda: fw.FastGradient(p["delta"]),
            "density": lambda: fw.DensityRatio(lambda x: 1.0, 1.0),
        }
        attack = fw.AttackFamily(kinds[p["attack"]](), base)
        report = fw.weak_robustness_estimate(student, teacher, attack, p["n_samples"], cfg.seed, gradient=gradient)
    return report.to_dict()


def _run_lp_dist(cfg, out):
    p = cfg.params
    a = shapes.import_pgm(p["a"])
    b = shapes.import_pgm(p["b"])
    distance = fw.lp_distance(a, b, p["p"])
    print(distance)
    return {"p": p["p"], "distance": distance}


_RUNNERS = {
    "parity-active": _run_parity_active,
    "parity-sq": _run_parity_sq,
    "example1": _run_example1,
    "shapes-gen": _run_shapes_gen,
    "shapes-train": _run_shapes_train,
    "robust-eval": _run_robust_eval,
    "lp-dist": _run_lp_dist,
}


def run_experiment(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    if out.exists() and any(out.iterdir()) and not cfg.force:
        log.error("output directory %s is not empty; pass --force to reuse it", out)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    try:
        results = _RUNNERS[cfg.experiment](cfg, out)
    except Exception as exc:  # module errors end the run, artifacts are marked partial
        log.error("%s failed: %s", cfg.experiment, exc)
        (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        return 1
    _write_json({"config": cfg.resolved(), "results": results}, out / "report.json")
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(
        level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"teachrobust: config error: {exc}", file=sys.stderr)
        return 2
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
