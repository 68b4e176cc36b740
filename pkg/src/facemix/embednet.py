"""Small embedding network with the four training objectives.

The backbone is a deliberately small MLP (two ReLU hidden layers, then a
linear embedding layer) trained by hand-written backpropagation in float64,
so every gradient is an exact analytic derivative and checkable against
finite differences. The classifier on top of the embedding is bias-free; the
four heads differ only in how its logits are formed:

* softmax: plain logits ``e @ W``.
* center: softmax plus a squared-distance pull toward per-identity centers;
  centers are updated by their own incremental rule, not by SGD.
* sphereface: the target class logit becomes ``|e| * psi(theta)`` where psi
  is the monotonic piecewise extension of cos(m*theta); other logits are
  ``e @ W_hat`` with unit-norm classifier columns.
* arcface: all logits ``s * cos(theta)`` on the unit hypersphere, with the
  additive angular margin m folded into the target angle.

Angular heads keep classifier columns L2-normalized after every update.
Zero-norm embeddings under angular heads raise instead of being clamped:
silent epsilon floors would hide initialization bugs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DatasetManifest, FeatureStore
from .seeds import stream

__all__ = [
    "SoftmaxCE",
    "CenterLoss",
    "SphereFace",
    "ArcFace",
    "LossHead",
    "head_from_spec",
    "EmbeddingModel",
    "TrainConfig",
    "init_model",
    "forward",
    "loss_and_grad",
    "center_update",
    "train",
    "embed_all",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class SoftmaxCE:
    kind: str = field(default="softmax", init=False)


@dataclass(frozen=True)
class CenterLoss:
    """Cross-entropy plus (lam/2) * mean squared distance to class centers."""

    lam: float = 0.003
    alpha: float = 0.5

    kind: str = field(default="center", init=False)

    def __post_init__(self) -> None:
        if self.lam <= 0 or self.alpha <= 0:
            raise ValueError("lam and alpha must be positive")


@dataclass(frozen=True)
class SphereFace:
    """Multiplicative angular margin: target logit |e| * psi(m * theta)."""

    m: int = 4

    kind: str = field(default="sphereface", init=False)

    def __post_init__(self) -> None:
        if not isinstance(self.m, int) or self.m < 1:
            raise ValueError("sphereface margin must be an integer >= 1")


@dataclass(frozen=True)
class ArcFace:
    """Additive angular margin: target logit s * cos(theta + m)."""

    s: float = 16.0
    m: float = 0.5

    kind: str = field(default="arcface", init=False)

    def __post_init__(self) -> None:
        if self.s <= 0:
            raise ValueError("scale must be positive")
        if not 0 <= self.m < math.pi:
            raise ValueError("additive margin must lie in [0, pi)")


LossHead = SoftmaxCE | CenterLoss | SphereFace | ArcFace

_ANGULAR = (SphereFace, ArcFace)


def head_from_spec(spec: str | dict) -> LossHead:
    """Build a head from its name or a {"kind": ..., params} mapping."""
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind", "").lower()
    args = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "sphereface" and "m" in args:
        args["m"] = int(args["m"])
    table = {
        "softmax": SoftmaxCE,
        "center": CenterLoss,
        "sphereface": SphereFace,
        "arcface": ArcFace,
    }
    if kind not in table:
        raise ValueError(f"unknown loss head: {spec!r}")
    return table[kind](**args)


@dataclass
class EmbeddingModel:
    """Dense layers, the classifier matrix, and (for center loss) centers.

    ``layers`` holds (W, b) per dense layer; all but the last are followed by
    ReLU, the last produces the embedding. ``classifier`` is D x C with no
    bias. ``centers`` is C x D, present only under the center-loss head.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    classifier: np.ndarray
    head: LossHead
    seed: int
    centers: np.ndarray | None = None

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.classifier.shape[0]

    @property
    def num_identities(self) -> int:
        return self.classifier.shape[1]

    def params(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(self.layers):
            out.append((f"layer{i}.W", w))
            out.append((f"layer{i}.b", b))
        out.append(("classifier", self.classifier))
        return out


def init_model(
    input_dim: int,
    num_identities: int,
    head: LossHead,
    hidden: tuple[int, ...] = (64, 64),
    embed_dim: int = 32,
    seed: int = 0,
) -> EmbeddingModel:
    """Scaled-uniform fan-in initialization from the seed's own streams."""
    widths = (input_dim, *hidden, embed_dim)
    layers = []
    for i in range(len(widths) - 1):
        bound = 1.0 / math.sqrt(widths[i])
        rng = stream(seed, "init", i)
        w = rng.uniform(-bound, bound, size=(widths[i], widths[i + 1]))
        b = rng.uniform(-bound, bound, size=widths[i + 1])
        layers.append((w, b))
    rng = stream(seed, "init", "classifier")
    bound = 1.0 / math.sqrt(embed_dim)
    classifier = rng.uniform(-bound, bound, size=(embed_dim, num_identities))
    if isinstance(head, _ANGULAR):
        classifier = _normalize_columns(classifier)
    centers = np.zeros((num_identities, embed_dim)) if isinstance(head, CenterLoss) else None
    return EmbeddingModel(layers, classifier, head, seed, centers)


def _normalize_columns(w: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms == 0):
        raise ValueError("classifier has a zero-norm column")
    return w / norms


def _dense_forward(model: EmbeddingModel, x: np.ndarray):
    """Run the backbone; returns per-layer pre-activations and activations."""
    acts = [x]
    pre = []
    h = x
    last = len(model.layers) - 1
    for i, (w, b) in enumerate(model.layers):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return pre, acts


def _logits(model: EmbeddingModel, emb: np.ndarray) -> np.ndarray:
    head = model.head
    if isinstance(head, (SoftmaxCE, CenterLoss)):
        return emb @ model.classifier
    w_hat = _normalize_columns(model.classifier)
    if isinstance(head, SphereFace):
        return emb @ w_hat
    norms = np.linalg.norm(emb, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding under an angular head")
    return head.s * ((emb / norms) @ w_hat)


def forward(model: EmbeddingModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Embedding and margin-free logits for one input or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise ValueError(f"input dim {x.shape[1]}, model expects {model.input_dim}")
    _, acts = _dense_forward(model, x)
    emb = acts[-1]
    logits = _logits(model, emb)
    if single:
        return emb[0], logits[0]
    return emb, logits


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _ce_and_dlogits(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    n = z.shape[0]
    zs = z - z.max(axis=1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(n), y].mean())
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    return loss, dz / n


def _head_loss(model: EmbeddingModel, head: LossHead, emb: np.ndarray, y: np.ndarray):
    """Loss, d(loss)/d(embedding), and d(loss)/d(classifier) for one batch."""
    w = model.classifier
    n = emb.shape[0]

    if isinstance(head, (SoftmaxCE, CenterLoss)):
        logits = emb @ w
        loss, dz = _ce_and_dlogits(logits, y)
        demb = dz @ w.T
        dw = emb.T @ dz
        if isinstance(head, CenterLoss):
            if model.centers is None:
                raise ValueError("center-loss head but model has no centers")
            diff = emb - model.centers[y]
            loss += 0.5 * head.lam * float((diff * diff).sum()) / n
            demb = demb + (head.lam / n) * diff
        return loss, demb, dw

    col_norms = np.linalg.norm(w, axis=0)
    if np.any(col_norms == 0):
        raise ValueError("classifier has a zero-norm column")
    w_hat = w / col_norms
    emb_norms = np.linalg.norm(emb, axis=1)
    if np.any(emb_norms == 0):
        raise ValueError("zero-norm embedding under an angular head")
    rows = np.arange(n)

    if isinstance(head, ArcFace):
        e_hat = emb / emb_norms[:, None]
        cos = e_hat @ w_hat
        c = np.clip(cos[rows, y], -1.0, 1.0)
        sin = np.sqrt(1.0 - c * c)
        if np.any(sin < 1e-12):
            raise ValueError("embedding exactly aligned with its class column")
        logits = head.s * cos
        logits[rows, y] = head.s * (c * math.cos(head.m) - sin * math.sin(head.m))
        loss, dz = _ce_and_dlogits(logits, y)
        # d(target logit)/d(cos) = s * (cos m + sin m * c / sin theta)
        dcos = dz * head.s
        dcos[rows, y] = dz[rows, y] * head.s * (math.cos(head.m) + math.sin(head.m) * c / sin)
        de_hat = dcos @ w_hat.T
        dw_hat = e_hat.T @ dcos
        demb = (de_hat - (de_hat * e_hat).sum(axis=1, keepdims=True) * e_hat)
        demb /= emb_norms[:, None]
        dw = (dw_hat - (dw_hat * w_hat).sum(axis=0) * w_hat) / col_norms
        return loss, demb, dw

    # SphereFace: non-target logits e . w_hat_j; target r * psi(theta_y).
    u = emb @ w_hat
    c = np.clip(u[rows, y] / emb_norms, -1.0, 1.0)
    sin = np.sqrt(1.0 - c * c)
    if np.any(sin < 1e-12):
        raise ValueError("embedding exactly aligned with its class column")
    theta = np.arccos(c)
    m = head.m
    k = np.floor(theta * m / math.pi)
    k = np.minimum(k, m - 1)  # theta = pi lands in the last piece
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    psi = sign * np.cos(m * theta) - 2.0 * k
    logits = u.copy()
    logits[rows, y] = emb_norms * psi
    loss, dz = _ce_and_dlogits(logits, y)

    dpsi_dtheta = -sign * m * np.sin(m * theta)
    # z_y = r * psi(arccos(u_y / r)):
    dz_du = -dpsi_dtheta / sin
    dz_dr = psi + dpsi_dtheta * c / sin
    g_y = dz[rows, y].copy()
    dz[rows, y] = 0.0
    demb = dz @ w_hat.T
    dw_hat = emb.T @ dz
    e_hat = emb / emb_norms[:, None]
    demb += (g_y * dz_du)[:, None] * w_hat[:, y].T
    demb += (g_y * dz_dr)[:, None] * e_hat
    np.add.at(dw_hat.T, y, (g_y * dz_du)[:, None] * emb)
    dw = (dw_hat - (dw_hat * w_hat).sum(axis=0) * w_hat) / col_norms
    return loss, demb, dw


def loss_and_grad(
    model: EmbeddingModel, head: LossHead, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Batch loss and exact gradients, ordered like ``model.params()``.

    Centers are deliberately absent: they follow their own update rule.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("batch needs matching sample and label counts")
    if np.any(y < 0) or np.any(y >= model.num_identities):
        raise ValueError("label out of range")

    pre, acts = _dense_forward(model, x)
    emb = acts[-1]
    loss, demb, dw_cls = _head_loss(model, head, emb, y)

    grads: list[np.ndarray] = []
    delta = demb
    last = len(model.layers) - 1
    for i in range(last, -1, -1):
        w, _ = model.layers[i]
        if i != last:
            delta = delta * (pre[i] > 0)
        grads.append(delta.sum(axis=0))  # bias
        grads.append(acts[i].T @ delta)  # weights
        delta = delta @ w.T
    grads.reverse()
    grads.append(dw_cls)
    return loss, grads


def center_update(model: EmbeddingModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Incremental center rule: c_j -= alpha * sum(c_j - e_i) / (1 + n_j)."""
    head = model.head
    if not isinstance(head, CenterLoss) or model.centers is None:
        raise ValueError("center_update requires an active center-loss head")
    emb, _ = forward(model, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    emb = np.atleast_2d(emb)
    y = np.asarray(y, dtype=np.intp)
    centers = model.centers.copy()
    for j in np.unique(y):
        members = emb[y == j]
        delta = (centers[j] - members).sum(axis=0) / (1.0 + len(members))
        centers[j] = centers[j] - head.alpha * delta
    return centers


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    head: LossHead = field(default_factory=ArcFace)

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")


def train(
    manifest: DatasetManifest,
    store: FeatureStore,
    cfg: TrainConfig,
    log_path: str | Path | None = None,
) -> EmbeddingModel:
    """SGD with momentum over seeded per-epoch shuffles; single-threaded.

    Identity labels are the manifest entry order. Weight decay applies to
    weight matrices only. Angular heads renormalize classifier columns after
    every step; the center-loss head applies its center rule after every
    step. Bit-reproducible for a fixed config.
    """
    ids = manifest.image_ids()
    if not ids:
        raise ValueError("manifest has no images")
    labels = np.concatenate(
        [np.full(len(e.image_ids), j, dtype=np.intp) for j, e in enumerate(manifest.entries)]
    )
    x_all = store.matrix(ids)

    model = init_model(
        input_dim=store.dim,
        num_identities=len(manifest.entries),
        head=cfg.head,
        seed=cfg.seed,
    )
    velocity = [np.zeros_like(p) for _, p in model.params()]
    angular = isinstance(cfg.head, _ANGULAR)
    log_rows: list[tuple[int, int, float]] = []

    step = 0
    n = len(ids)
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "shuffle", epoch).permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = x_all[idx], labels[idx]
            loss, grads = loss_and_grad(model, cfg.head, xb, yb)
            if not math.isfinite(loss):
                bad = [ids[i] for i in idx]
                raise RuntimeError(
                    f"non-finite loss {loss} at step {step} (epoch {epoch}); "
                    f"batch images: {bad}"
                )
            for v, (name, p), g in zip(velocity, model.params(), grads):
                if cfg.weight_decay and not name.endswith(".b"):
                    g = g + cfg.weight_decay * p
                v *= cfg.momentum
                v -= cfg.lr * g
                p += v
            if angular:
                model.classifier = _normalize_columns(model.classifier)
            if isinstance(cfg.head, CenterLoss):
                model.centers = center_update(model, xb, yb)
            log_rows.append((step, epoch, loss))
            step += 1

    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write("step,epoch,loss\n")
            for s, e, v in log_rows:
                fh.write(f"{s},{e},{v:.9g}\n")
    return model


def embed_all(model: EmbeddingModel, store: FeatureStore, image_ids: list[str]) -> np.ndarray:
    """Embedding rows aligned with ``image_ids``; raw, not normalized."""
    if not image_ids:
        return np.zeros((0, model.embed_dim))
    x = store.matrix(image_ids)
    _, acts = _dense_forward(model, x)
    return acts[-1]


def _head_to_json(head: LossHead) -> dict:
    out = {"kind": head.kind}
    for name in ("lam", "alpha", "m", "s"):
        if hasattr(head, name):
            out[name] = getattr(head, name)
    return out


def save_model(model: EmbeddingModel, path: str | Path) -> None:
    """JSON header line, then all weights as one little-endian f32 blob."""
    header = {
        "kind": "checkpoint",
        "head": _head_to_json(model.head),
        "seed": model.seed,
        "layers": [[list(w.shape), list(b.shape)] for w, b in model.layers],
        "classifier": list(model.classifier.shape),
        "centers": list(model.centers.shape) if model.centers is not None else None,
    }
    parts = []
    for w, b in model.layers:
        parts.append(w.astype("<f4").tobytes())
        parts.append(b.astype("<f4").tobytes())
    parts.append(model.classifier.astype("<f4").tobytes())
    if model.centers is not None:
        parts.append(model.centers.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        fh.write(b"".join(parts))


def load_model(path: str | Path) -> EmbeddingModel:
    blob = Path(path).read_bytes()
    nl = blob.index(b"\n")
    header = json.loads(blob[:nl].decode())
    if header.get("kind") != "checkpoint":
        raise ValueError(f"{path}: not a model checkpoint")
    data = np.frombuffer(blob[nl + 1 :], dtype="<f4")

    offset = 0

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape))
        out = data[offset : offset + size].reshape(shape).astype(np.float64)
        offset += size
        return out

    layers = [(take(ws), take(bs)) for ws, bs in header["layers"]]
    classifier = take(header["classifier"])
    centers = take(header["centers"]) if header["centers"] else None
    head = head_from_spec(header["head"])
    if offset != data.size:
        raise ValueError(f"{path}: checkpoint blob size mismatch")
    return EmbeddingModel(layers, classifier, head, header["seed"], centers)
