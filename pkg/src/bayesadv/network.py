"""Feed-forward binary classifier with hand-written forward and backward passes.

Hidden layer ``l`` computes ``act(LN(a @ W_l + b_l))`` where ``LN`` is an
optional affine-free layer normalization; the last layer is linear and emits a
single logit. Weights are stored ``(fan_in, fan_out)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError

KAPPA = 1e-12
LN_EPS = 1e-5
ACTIVATIONS = ("elu", "relu")


@dataclass(frozen=True)
class Architecture:
    layer_widths: tuple[int, ...]
    activation: str = "elu"
    layer_norm: tuple[bool, ...] | bool = True

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"need >= 2 positive layer widths, got {widths}")
        if widths[-1] != 1:
            raise ValueError("final layer width must be 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        n_hidden = len(widths) - 2
        ln = self.layer_norm
        ln = (bool(ln),) * n_hidden if isinstance(ln, (bool, np.bool_)) else tuple(bool(v) for v in ln)
        if len(ln) != n_hidden:
            raise ValueError(f"layer_norm needs {n_hidden} flags, got {len(ln)}")
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "layer_norm", ln)

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def shapes(self) -> list[tuple[tuple[int, int], int]]:
        w = self.layer_widths
        return [((w[i], w[i + 1]), w[i + 1]) for i in range(len(w) - 1)]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for (a, b), _ in self.shapes)

    @classmethod
    def default(cls, input_dim: int) -> "Architecture":
        return cls((input_dim, 512, 512, 128, 1), "elu", True)

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activation": self.activation,
            "layer_norm": list(self.layer_norm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(tuple(d["layer_widths"]), d["activation"], tuple(d["layer_norm"]))


@dataclass(frozen=True)
class ParamParticle:
    arch: Architecture
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    id: int = 0

    def __post_init__(self):
        ws, bs = tuple(self.weights), tuple(self.biases)
        shapes = self.arch.shapes
        if len(ws) != len(shapes) or len(bs) != len(shapes):
            raise DimensionError("number of layers does not match the architecture")
        for w, b, (ws_, bs_) in zip(ws, bs, shapes):
            if w.shape != ws_ or b.shape != (bs_,):
                raise DimensionError(f"layer shape {w.shape}/{b.shape} != {ws_}/{(bs_,)}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for wb in zip(self.weights, self.biases) for a in wb])

    @classmethod
    def from_flat(cls, arch: Architecture, theta: np.ndarray, id: int = 0) -> "ParamParticle":
        """Build a particle whose arrays are views into ``theta`` (no copy)."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (arch.n_params,):
            raise DimensionError(f"expected {arch.n_params} parameters, got {theta.shape}")
        ws, bs, off = [], [], 0
        for (fi, fo), nb in arch.shapes:
            ws.append(theta[off:off + fi * fo].reshape(fi, fo))
            off += fi * fo
            bs.append(theta[off:off + nb])
            off += nb
        return cls(arch, tuple(ws), tuple(bs), id)


def init_params(arch: Architecture, seed, id: int = 0) -> ParamParticle:
    """Fan-in scaled normal weights (variance ``1/fan_in``), zero biases."""
    rng = np.random.default_rng(seed)
    ws = tuple(rng.normal(0.0, 1.0 / np.sqrt(fi), size=(fi, fo)) for (fi, fo), _ in arch.shapes)
    bs = tuple(np.zeros(nb) for _, nb in arch.shapes)
    return ParamParticle(arch, ws, bs, id)


# ---------------------------------------------------------------------------
# elementwise pieces


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _act(u, kind):
    if kind == "relu":
        return np.maximum(u, 0.0)
    return np.where(u > 0, u, np.expm1(np.minimum(u, 0.0)))


def _act_grad(u, kind):
    if kind == "relu":
        return (u > 0).astype(np.float64)
    return np.where(u > 0, 1.0, np.exp(np.minimum(u, 0.0)))


def _ln_forward(h):
    mu = h.mean(axis=1, keepdims=True)
    c = h - mu
    inv = 1.0 / np.sqrt((c * c).mean(axis=1, keepdims=True) + LN_EPS)
    return c * inv, inv


def _ln_backward(dy, y, inv):
    return inv * (dy - dy.mean(axis=1, keepdims=True) - y * (dy * y).mean(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# passes


def _as_batch(p: ParamParticle, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != p.arch.input_dim:
        raise DimensionError(f"input width {X.shape[-1]} != architecture input {p.arch.input_dim}")
    return X, single


def _forward_cache(p: ParamParticle, X: np.ndarray):
    arch = p.arch
    cache = []
    a = X
    n_hidden = len(p.weights) - 1
    for l in range(n_hidden):
        h = a @ p.weights[l] + p.biases[l]
        if arch.layer_norm[l]:
            u, inv = _ln_forward(h)
        else:
            u, inv = h, None
        cache.append((a, u, inv))
        a = _act(u, arch.activation)
    logits = (a @ p.weights[-1] + p.biases[-1])[:, 0]
    cache.append((a, None, None))
    return logits, cache


def forward(p: ParamParticle, x):
    """Logit ``f(x; theta)`` for one vector (returns float) or a batch (returns array)."""
    X, single = _as_batch(p, x)
    logits, _ = _forward_cache(p, X)
    return float(logits[0]) if single else logits


def predict_prob(p: ParamParticle, x):
    """``sigmoid(f(x))`` clamped to ``[KAPPA, 1 - KAPPA]``."""
    return prob_from_logit(forward(p, x))


def prob_from_logit(z):
    out = np.clip(sigmoid(z), KAPPA, 1.0 - KAPPA)
    return float(out) if np.ndim(out) == 0 else out


def bce_loss(logit, y):
    """Binary cross-entropy on the clamped probability; elementwise for arrays."""
    z = np.asarray(logit, dtype=np.float64)
    s = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    loss = np.clip(_softplus(-s * z), -np.log1p(-KAPPA), -np.log(KAPPA))
    return float(loss) if loss.ndim == 0 else loss


def _backprop(p: ParamParticle, cache, dlogit: np.ndarray, want_params: bool, want_input: bool):
    arch = p.arch
    a_last = cache[-1][0]
    dz = dlogit[:, None]
    gw, gb = [None] * len(p.weights), [None] * len(p.weights)
    if want_params:
        gw[-1] = a_last.T @ dz
        gb[-1] = dz.sum(axis=0)
    da = dz @ p.weights[-1].T
    dx = None
    for l in range(len(p.weights) - 2, -1, -1):
        a_in, u, inv = cache[l]
        du = da * _act_grad(u, arch.activation)
        dh = _ln_backward(du, u, inv) if inv is not None else du
        if want_params:
            gw[l] = a_in.T @ dh
            gb[l] = dh.sum(axis=0)
        if l > 0 or want_input:
            da = dh @ p.weights[l].T
    if want_input:
        dx = da
    grads = ParamParticle(arch, tuple(gw), tuple(gb), p.id) if want_params else None
    return grads, dx


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite value in forward/backward pass")


def backward(p: ParamParticle, X, y) -> tuple[ParamParticle, float]:
    """Gradient of the batch-mean BCE w.r.t. every parameter, plus that mean loss.

    The gradient is returned as a ``ParamParticle`` holding gradient arrays.
    """
    X, _ = _as_batch(p, X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise DimensionError(f"{y.shape[0]} labels for {X.shape[0]} rows")
    logits, cache = _forward_cache(p, X)
    _check_finite(logits)
    dlogit = (sigmoid(logits) - y) / X.shape[0]
    grads, _ = _backprop(p, cache, dlogit, True, False)
    _check_finite(*grads.weights, *grads.biases)
    return grads, float(np.mean(bce_loss(logits, y)))


def grad_input(p: ParamParticle, x, y):
    """Per-sample gradient of the BCE loss w.r.t. the input features."""
    X, single = _as_batch(p, x)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), (X.shape[0],))
    logits, cache = _forward_cache(p, X)
    _, dx = _backprop(p, cache, sigmoid(logits) - y, False, True)
    _check_finite(dx)
    return dx[0] if single else dx


def backward_flat(p: ParamParticle, X, y) -> tuple[np.ndarray, float]:
    g, loss = backward(p, X, y)
    return g.flat(), loss
