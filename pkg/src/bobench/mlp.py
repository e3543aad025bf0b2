"""Fully-connected networks with hand-rolled reverse-mode gradients.

Parameters live in a single flat float64 vector in a fixed canonical order:
layer by layer, weight matrix first (row-major, output-major), then bias.
That order is what chain checkpoints serialize, so it must never change.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteLoss, ZeroNorm
from .numkit import Rng

ACTIVATIONS = ("tanh", "relu")

_MAGIC = b"BOBP"
_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Architecture plus the two variance knobs of the Gaussian model.

    ``output_dim`` equals the number of objectives being modeled;
    ``prior_variance`` is the isotropic N(0, s2) prior on every weight and
    bias, and ``likelihood_variance`` the observation noise.
    """

    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int = 1
    activation: str = "tanh"
    prior_variance: float = 1.0
    likelihood_variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.prior_variance <= 0 or self.likelihood_variance <= 0:
            raise ValueError("variances must be strictly positive")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_widths, self.output_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)

    def spec_hash(self) -> int:
        payload = json.dumps(
            [self.input_dim, list(self.hidden_widths), self.output_dim, self.activation],
            separators=(",", ":"),
        ).encode()
        return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def unflatten(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Layer-shaped (W, b) views into the flat vector; no copies."""
    params = np.asarray(params)
    if params.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} params, got shape {params.shape}")
    layers = []
    off = 0
    for out, inp in spec.layer_shapes:
        w = params[off : off + out * inp].reshape(out, inp)
        off += out * inp
        b = params[off : off + out]
        off += out
        layers.append((w, b))
    return layers


def flatten(spec: MlpSpec, layers) -> np.ndarray:
    vec = np.empty(spec.n_params)
    off = 0
    for w, b in layers:
        vec[off : off + w.size] = w.ravel()
        off += w.size
        vec[off : off + b.size] = b
        off += b.size
    return vec


def mlp_init(spec: MlpSpec, rng: Rng) -> np.ndarray:
    """Prior draw: every entry i.i.d. N(0, prior_variance)."""
    return rng.standard_normal(spec.n_params) * np.sqrt(spec.prior_variance)


def _act(spec: MlpSpec, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if spec.activation == "tanh" else np.maximum(z, 0.0)


def _act_grad(spec: MlpSpec, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return 1.0 - a * a if spec.activation == "tanh" else (z > 0).astype(float)


def _forward_cached(spec: MlpSpec, params: np.ndarray, x: np.ndarray):
    layers = unflatten(spec, params)
    acts = [np.asarray(x, dtype=float)]
    pre = []
    a = acts[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for w, b in layers[:-1]:
            z = a @ w.T + b
            a = _act(spec, z)
            pre.append(z)
            acts.append(a)
        w, b = layers[-1]
        h = a @ w.T + b
    return h, layers, pre, acts


def mlp_forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on an n x input_dim batch; returns n x output_dim."""
    h, _, _, _ = _forward_cached(spec, params, np.atleast_2d(x))
    return h


def log_joint_and_grad(
    spec: MlpSpec,
    params: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Gaussian log joint (up to a constant) and its exact gradient.

    value = -sum_i w_i ||y_i - h(x_i)||^2 / (2 s2_lik) - ||theta||^2 / (2 s2_prior)

    ``weights`` rescales per-point contributions; minibatch SGHMC passes
    n/batch there so the stochastic gradient estimates the full-data one.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(x.shape[0], spec.output_dim)
    h, layers, pre, acts = _forward_cached(spec, params, x)
    if not np.all(np.isfinite(h)):
        raise NonFiniteLoss("network activations overflowed")

    resid = y - h
    w_pts = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    s2 = spec.likelihood_variance
    sp2 = spec.prior_variance
    value = -0.5 * float(w_pts @ np.sum(resid * resid, axis=1)) / s2
    value -= 0.5 * float(params @ params) / sp2
    if not np.isfinite(value):
        raise NonFiniteLoss("non-finite log joint")

    # Reverse pass. delta holds dValue/d(layer output).
    grad = np.empty_like(params)
    g_layers = unflatten(spec, grad)
    delta = (w_pts[:, None] * resid) / s2
    for li in range(len(layers) - 1, -1, -1):
        gw, gb = g_layers[li]
        gw[...] = delta.T @ acts[li]
        gb[...] = delta.sum(axis=0)
        if li > 0:
            w, _ = layers[li]
            delta = (delta @ w) * _act_grad(spec, pre[li - 1], acts[li])
    grad -= params / sp2
    return value, grad


@dataclass
class OutputLinearization:
    """J.v and J^T.u products for the parameter Jacobian of one scalar output.

    J is the P-vector gradient of output ``objective`` at the single input
    ``x``; ``vjp(u)`` costs one reverse pass, ``jvp(v)`` one forward tangent
    pass.
    """

    spec: MlpSpec
    params: np.ndarray
    x: np.ndarray
    objective: int

    def __post_init__(self):
        if not 0 <= self.objective < self.spec.output_dim:
            raise ValueError("objective index out of range")
        x = np.asarray(self.x, dtype=float).reshape(1, self.spec.input_dim)
        _, self._layers, self._pre, self._acts = _forward_cached(self.spec, self.params, x)

    def vjp(self, u: float) -> np.ndarray:
        spec = self.spec
        grad = np.zeros(spec.n_params)
        g_layers = unflatten(spec, grad)
        delta = np.zeros((1, spec.output_dim))
        delta[0, self.objective] = float(u)
        for li in range(len(self._layers) - 1, -1, -1):
            gw, gb = g_layers[li]
            gw[...] = delta.T @ self._acts[li]
            gb[...] = delta.sum(axis=0)
            if li > 0:
                w, _ = self._layers[li]
                delta = (delta @ w) * _act_grad(self.spec, self._pre[li - 1], self._acts[li])
        return grad

    def jvp(self, v: np.ndarray) -> float:
        spec = self.spec
        v_layers = unflatten(spec, np.asarray(v, dtype=float))
        da = np.zeros((1, spec.input_dim))
        for li, (w, _) in enumerate(self._layers):
            dw, db = v_layers[li]
            dz = da @ w.T + self._acts[li] @ dw.T + db
            if li < len(self._layers) - 1:
                da = dz * _act_grad(spec, self._pre[li], self._acts[li + 1])
            else:
                da = dz
        return float(da[0, self.objective])


def output_jvp_vjp(spec: MlpSpec, params: np.ndarray, x: np.ndarray, objective: int):
    return OutputLinearization(spec, np.asarray(params, dtype=float), x, objective)


def output_grads(spec: MlpSpec, params: np.ndarray, x: np.ndarray, objective: int) -> np.ndarray:
    """Per-example parameter gradients of one output head: n x P matrix.

    Row i equals ``output_jvp_vjp(spec, params, x[i], objective).vjp(1)``;
    batched here because the Laplace surrogate needs the whole Gram matrix.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    _, layers, pre, acts = _forward_cached(spec, params, x)
    out = np.empty((n, spec.n_params))
    delta = np.zeros((n, spec.output_dim))
    delta[:, objective] = 1.0
    off = spec.n_params
    for li in range(len(layers) - 1, -1, -1):
        w, b = layers[li]
        off -= b.size
        out[:, off : off + b.size] = delta
        off -= w.size
        out[:, off : off + w.size] = np.einsum("no,ni->noi", delta, acts[li]).reshape(n, -1)
        if li > 0:
            delta = (delta @ w) * _act_grad(spec, pre[li - 1], acts[li])
    return out


def vjp_params(spec: MlpSpec, params: np.ndarray, x: np.ndarray, out_grad: np.ndarray) -> np.ndarray:
    """Backprop an arbitrary n x output_dim cotangent to a flat parameter gradient."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _, layers, pre, acts = _forward_cached(spec, params, x)
    grad = np.empty(spec.n_params)
    g_layers = unflatten(spec, grad)
    delta = np.asarray(out_grad, dtype=float).reshape(x.shape[0], spec.output_dim)
    for li in range(len(layers) - 1, -1, -1):
        gw, gb = g_layers[li]
        gw[...] = delta.T @ acts[li]
        gb[...] = delta.sum(axis=0)
        if li > 0:
            w, _ = layers[li]
            delta = (delta @ w) * _act_grad(spec, pre[li - 1], acts[li])
    return grad


def cosine_similarity(p1: np.ndarray, p2: np.ndarray) -> float:
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if p1.shape != p2.shape:
        raise ValueError("parameter vectors differ in length")
    n1 = np.linalg.norm(p1)
    n2 = np.linalg.norm(p2)
    if n1 == 0.0 or n2 == 0.0:
        raise ZeroNorm("cosine similarity of a zero vector")
    return float(np.clip(p1 @ p2 / (n1 * n2), -1.0, 1.0))


def mse_loss(spec: MlpSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Mean squared training error, averaged over points and outputs."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(x.shape[0], spec.output_dim)
    h = mlp_forward(spec, params, x)
    return float(np.mean((y - h) ** 2))


def interpolate_loss(
    spec: MlpSpec,
    p1: np.ndarray,
    p2: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    steps: int = 41,
    coeff_range: tuple[float, float] = (-0.5, 1.5),
) -> np.ndarray:
    """Training MSE along the segment p2 + (p1 - p2) * t.

    t=0 gives p2's loss and t=1 gives p1's; the default range pokes past both
    endpoints to expose the basin walls. Returns a (steps, 2) array of
    (t, loss) rows.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    ts = np.linspace(coeff_range[0], coeff_range[1], steps)
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    curve = np.empty((steps, 2))
    for i, t in enumerate(ts):
        curve[i, 0] = t
        curve[i, 1] = mse_loss(spec, p2 + (p1 - p2) * t, x, y)
    return curve


def save_params(path, spec: MlpSpec, params: np.ndarray) -> None:
    """Checkpoint: short header (magic, version, spec hash, length) + raw LE float64."""
    params = np.asarray(params, dtype="<f8")
    if params.shape != (spec.n_params,):
        raise ValueError("parameter vector does not match spec")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQ", _VERSION, spec.spec_hash(), spec.n_params))
        fh.write(params.tobytes())


def load_params(path, spec: MlpSpec) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a parameter checkpoint")
        version, shash, length = struct.unpack("<IQQ", fh.read(20))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if shash != spec.spec_hash() or length != spec.n_params:
            raise ValueError("checkpoint does not match the given spec")
        data = np.frombuffer(fh.read(8 * length), dtype="<f8")
    return data.astype(float)
