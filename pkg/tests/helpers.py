"""Shared test utilities: FD gradient oracle, smoothness guard, synthetic corpora."""

import numpy as np
from PIL import Image

from quanvnet.nn import MaxPool2x2, Network, ReLU, cross_entropy_grad, softmax_cross_entropy


# ---------------------------------------------------------------------------
# finite-difference gradient oracle
# ---------------------------------------------------------------------------

def fd_gradients(model, x, y, h=1e-3):
    """Central finite differences of the eval-mode loss, parameter by parameter."""
    grads = []
    for p in model.parameters():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = softmax_cross_entropy(model.forward(x), y)
            flat[i] = orig - h
            lm, _ = softmax_cross_entropy(model.forward(x), y)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradients(model, x, y):
    loss, probs = softmax_cross_entropy(model.forward(x), y)
    model.backward(cross_entropy_grad(probs, y))
    return [g.copy() for g in model.gradients()]


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def tiny_network(seed):
    return Network(
        n_classes=2,
        seed=seed,
        input_shape=(6, 6, 1),
        conv_channels=(2, 2, 3),
        dense_units=(5, 4),
        dropout_rate=0.0,
    )


def kink_distance(model, x):
    """Distance of the forward pass from the nearest non-smooth point.

    Finite differences are only a valid derivative oracle where the loss is
    smooth in the perturbation ball: away from ReLU kinks (pre-activation 0)
    and max-pool ties between two active units. Dead units are pinned at 0,
    so all-zero or single-active windows are smooth and only the gap between
    two positive window entries matters.
    """
    dist = np.inf
    act = x
    for layer in model.layers:
        if isinstance(layer, ReLU):
            dist = min(dist, float(np.min(np.abs(act))))
        elif isinstance(layer, MaxPool2x2):
            n, h, w, c = act.shape
            h2, w2 = h // 2, w // 2
            windows = (
                act[:, : h2 * 2, : w2 * 2, :]
                .reshape(n, h2, 2, w2, 2, c)
                .transpose(0, 1, 3, 5, 2, 4)
                .reshape(-1, 4)
            )
            top2 = np.sort(windows, axis=1)[:, -2:]
            contested = top2[:, 0] > 0
            if contested.any():
                dist = min(dist, float(np.min(top2[contested, 1] - top2[contested, 0])))
        act = layer.forward(act)
    return dist


def draw_smooth_instance(rng, h):
    """Sample (model, x, y) until the loss is smooth within the FD ball."""
    while True:
        model = tiny_network(int(rng.integers(0, 2**31)))
        x = rng.uniform(-1.0, 1.0, size=(3, 6, 6, 1))
        y = rng.integers(0, 2, size=3)
        if kink_distance(model, x) > 6 * h:
            return model, x, y


# ---------------------------------------------------------------------------
# synthetic image corpora
# ---------------------------------------------------------------------------

def write_blob_corpus(root, n_train, n_test, seed=123, classes=("normal", "covid19")):
    """Two-class 28x28 PNG corpus: a bright blob in disjoint positions per class.

    Returns the manifest path.
    """
    rng = np.random.default_rng(seed)
    img_dir = root / "images"
    img_dir.mkdir(exist_ok=True)
    rows = []
    for split, count in (("train", n_train), ("test", n_test)):
        for i in range(count):
            label = classes[i % len(classes)]
            pixels = rng.integers(0, 40, size=(28, 28)).astype(np.uint8)
            block = rng.integers(215, 256, size=(8, 8)).astype(np.uint8)
            if label == classes[0]:
                pixels[4:12, 4:12] = block
            else:
                pixels[16:24, 16:24] = block
            path = img_dir / f"{split}_{i}.png"
            Image.fromarray(pixels, mode="L").save(path)
            rows.append(f"{path},{label},{split}")
    manifest = root / "manifest.csv"
    manifest.write_text("path,label,split\n" + "\n".join(rows) + "\n")
    return manifest
