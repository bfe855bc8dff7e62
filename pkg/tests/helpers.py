"""Checks shared by the module tests and the acceptance suite."""

import numpy as np

from teachrobust import cli, nn, shapes


def _loss_and_pattern(params, batch, labels):
    logits, c = nn.forward(params, batch, return_cache=True)
    shifted = logits - logits.max(axis=1, keepdims=True)
    n = len(labels)
    loss = float(np.mean(np.log(np.exp(shifted).sum(axis=1)) - shifted[np.arange(n), labels]))
    pattern = [c["z1"] > 0, c["z2"] > 0, c["z3"] > 0, c["idx1"], c["idx2"]]
    return loss, pattern


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(n_params=200, h=1e-4, seed=0, n_images=4):
    """Max relative error between analytic and central-difference gradients.

    The network is piecewise smooth.  A coordinate whose +-h perturbation moves
    any ReLU or max-pool switch has no derivative estimate on that interval, so
    it is redrawn.  Returns (worst relative error, checked count, redrawn count).
    """
    rng = np.random.default_rng(seed)
    params = nn.init_params(seed)
    for name in params:
        if name.endswith("_b"):
            params[name] = rng.uniform(-0.1, 0.1, size=params[name].shape)
    ds = shapes.gen_dataset(n_images, "clean", "exact", seed=seed)
    batch = (ds.pixels + 0.05 * rng.standard_normal(ds.pixels.shape))[:, None]
    labels = ds.labels
    _, grads = nn.loss_and_grad(params, batch, labels)
    _, base = _loss_and_pattern(params, batch, labels)

    names = list(nn.PARAM_SHAPES)
    sizes = np.array([params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    order = rng.permutation(sizes.sum())

    worst, checked, redrawn = 0.0, 0, 0
    for f in order:
        if checked == n_params:
            break
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        name, idx = names[k], int(f - offsets[k])
        p = params[name].reshape(-1)
        old = p[idx]
        p[idx] = old + h
        up, pat_up = _loss_and_pattern(params, batch, labels)
        p[idx] = old - h
        down, pat_down = _loss_and_pattern(params, batch, labels)
        p[idx] = old
        if not (_same(pat_up, base) and _same(pat_down, base)):
            redrawn += 1
            continue
        numeric = (up - down) / (2 * h)
        analytic = grads[name].reshape(-1)[idx]
        scale = max(abs(analytic), abs(numeric))
        rel = abs(analytic - numeric) / scale if scale > 1e-10 else abs(analytic - numeric)
        worst = max(worst, rel)
        checked += 1
    return worst, checked, redrawn


SAME_SEED_RUNS = [
    ["parity-active", "--d", 30, "--trials", 10],
    ["parity-sq", "--d", 10, "--support-size", 4],
    ["example1", "--n-per-class", 200, "--n-test", 100, "--sparse-seeds", 2],
    ["shapes-gen", "--count", 6, "--pgm", 3, "--balance", "bernoulli"],
    ["shapes-train", "--train-count", 10, "--epochs", 1, "--batch-size", 5, "--eval-count", 10,
     "--prefilter", "on", "--save-params"],
    ["robust-eval", "--mode", "weak", "--pairing", "quadrant", "--attack", "fast-gradient", "--delta", 0.5],
    ["robust-eval", "--mode", "strong", "--pairing", "max-margin", "--resolution", 21],
]


def run(argv):
    return cli.main([str(a) for a in argv])


def tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def same_seed_identical(argv, root, seed=3):
    """Run a CLI experiment twice into fresh dirs and compare every artifact byte for byte."""
    a, b = root / "a", root / "b"
    if run([*argv, "--seed", seed, "--out-dir", a]) or run([*argv, "--seed", seed, "--out-dir", b]):
        return False
    return tree(a) == tree(b) and "report.json" in tree(a)
