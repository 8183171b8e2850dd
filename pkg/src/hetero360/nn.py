"""Small dense-network engine on numpy: MLPs with exact backprop, Adam, Dirichlet head."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .core import DimensionError, NumericError, UsageError

CHECKPOINT_VERSION = 1


def _tanh_grad(y):
    return 1.0 - y * y


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(y):
    return (y > 0).astype(y.dtype)


def _identity(x):
    return x


def _ones(y):
    return np.ones_like(y)


# activation name -> (function, derivative expressed through the activation output)
ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
    "identity": (_identity, _ones),
}


@dataclass(frozen=True)
class NetworkArchitecture:
    input_dim: int
    hidden_sizes: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"
    output_activation: str = "identity"
    batch_size: int = 256

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_sizes, self.output_dim)
        # a zero-width input is allowed: an empty user group feeds nothing
        if self.input_dim < 0 or any(d < 1 for d in dims[1:]) or self.batch_size < 1:
            raise DimensionError(f"invalid architecture dimensions {dims}")
        for act in (self.activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_sizes, self.output_dim)

    @property
    def parameter_count(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    @property
    def multiply_adds(self) -> int:
        s = self.layer_sizes
        return sum(a * b for a, b in zip(s[:-1], s[1:]))


class ParameterSet:
    """Named float64 arrays; ``version`` increases on every in-place update."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self.arrays: dict[str, np.ndarray] = dict(arrays or {})
        self.version = 0

    def __getitem__(self, key):
        return self.arrays[key]

    def __setitem__(self, key, value):
        self.arrays[key] = value

    def __contains__(self, key):
        return key in self.arrays

    def keys(self):
        return self.arrays.keys()

    def items(self):
        return self.arrays.items()

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.arrays.items()})

    def load_from(self, other: "ParameterSet") -> None:
        for k, v in other.items():
            np.copyto(self.arrays[k], v)
        self.version += 1

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    if rows == 0 or cols == 0:
        return np.zeros(shape)
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


@dataclass
class Tape:
    inputs: list
    outputs: list
    version: int
    owner: int
    squeeze: bool = False


class MLP:
    """Affine layers with a shared hidden activation, stored in a (possibly shared) ParameterSet.

    Weights are kept as ``(fan_in, fan_out)`` so a batch ``x @ W + b`` runs row-wise.
    """

    def __init__(
        self,
        arch: NetworkArchitecture,
        params: ParameterSet | None = None,
        prefix: str = "",
        rng: np.random.Generator | None = None,
        hidden_gain: float = np.sqrt(2.0),
        head_gain: float = 1.0,
    ):
        self.arch = arch
        self.params = ParameterSet() if params is None else params
        self.prefix = prefix
        sizes = arch.layer_sizes
        self.n_layers = len(sizes) - 1
        rng = np.random.default_rng(0) if rng is None else rng
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            w, bias = self._keys(i)
            if w in self.params:
                continue
            gain = head_gain if i == self.n_layers - 1 else hidden_gain
            self.params[w] = orthogonal((a, b), gain, rng)
            self.params[bias] = np.zeros(b)

    def _keys(self, i: int) -> tuple[str, str]:
        return f"{self.prefix}W{i}", f"{self.prefix}b{i}"

    def _act(self, i: int):
        name = self.arch.output_activation if i == self.n_layers - 1 else self.arch.activation
        return ACTIVATIONS[name]

    def forward(self, x) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.arch.input_dim:
            raise DimensionError(f"expected input width {self.arch.input_dim}, got {x.shape[-1]}")
        inputs, outputs = [], []
        h = x
        for i in range(self.n_layers):
            w, b = self._keys(i)
            inputs.append(h)
            h = self._act(i)[0](h @ self.params[w] + self.params[b])
            outputs.append(h)
        tape = Tape(inputs, outputs, self.params.version, id(self.params), squeeze)
        return (h[0] if squeeze else h), tape

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, tape: Tape, grad_out, grads: dict | None = None) -> tuple[dict, np.ndarray]:
        """Accumulate parameter gradients into ``grads``; return them with the input gradient."""
        if tape.owner != id(self.params) or tape.version != self.params.version:
            raise UsageError("tape is stale: parameters changed since the forward pass")
        grads = {} if grads is None else grads
        g = np.asarray(grad_out, dtype=float)
        if tape.squeeze:
            g = g[None, :]
        for i in reversed(range(self.n_layers)):
            w, b = self._keys(i)
            g = g * self._act(i)[1](tape.outputs[i])
            gw = tape.inputs[i].T @ g
            gb = g.sum(axis=0)
            if w in grads:
                grads[w] = grads[w] + gw
                grads[b] = grads[b] + gb
            else:
                grads[w] = gw
                grads[b] = gb
            g = g @ self.params[w].T
        return grads, (g[0] if tape.squeeze else g)


class Adam:
    """Bias-corrected adaptive-moment update applied in place to a ParameterSet."""

    def __init__(self, params: ParameterSet, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {k}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
        self.params.version += 1

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()}, "v": {k: v.copy() for k, v in self.v.items()}}


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


# --- stochastic simplex head -------------------------------------------------

def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def concentrations(raw) -> np.ndarray:
    """Actor head output to Dirichlet concentrations, floored at 1."""
    return softplus(raw) + 1.0


def dirichlet_log_prob(x, alpha) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    norm = gammaln(alpha).sum(axis=-1) - gammaln(alpha.sum(axis=-1))
    return ((alpha - 1.0) * np.log(x)).sum(axis=-1) - norm


def dirichlet_log_prob_grad(x, alpha) -> np.ndarray:
    """Gradient of the log-density with respect to the concentrations."""
    alpha = np.asarray(alpha, dtype=float)
    return np.log(x) - digamma(alpha) + digamma(alpha.sum(axis=-1, keepdims=True))


def dirichlet_entropy(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    a0 = alpha.sum(axis=-1)
    k = alpha.shape[-1]
    log_b = gammaln(alpha).sum(axis=-1) - gammaln(a0)
    return log_b + (a0 - k) * digamma(a0) - ((alpha - 1.0) * digamma(alpha)).sum(axis=-1)


def dirichlet_entropy_grad(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    a0 = alpha.sum(axis=-1, keepdims=True)
    k = alpha.shape[-1]
    return (a0 - k) * polygamma(1, a0) - (alpha - 1.0) * polygamma(1, alpha)


def dirichlet_mean(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    return alpha / alpha.sum(axis=-1, keepdims=True)


def simplex_policy_sample(concentration, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Draw simplex fractions from Dirichlet(concentration) and return them with their log-density."""
    alpha = np.asarray(concentration, dtype=float)
    if not np.all(alpha > 0):
        raise ValueError(f"concentrations must be positive, got {alpha}")
    g = rng.standard_gamma(alpha)
    x = g / g.sum()
    # guard against a component underflowing to exactly zero
    if np.any(x <= 0):
        x = np.maximum(x, np.finfo(float).tiny)
        x = x / x.sum()
    return x, float(dirichlet_log_prob(x, alpha))


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(path: str | Path, params: ParameterSet, header: dict | None = None) -> None:
    """Write arrays plus a JSON header (format version, architecture metadata) to ``.npz``."""
    meta = {"format_version": CHECKPOINT_VERSION, **(header or {})}
    payload = {f"param:{k}": v for k, v in params.items()}
    payload["__header__"] = np.array(json.dumps(meta, sort_keys=True, default=_jsonable))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | Path) -> tuple[ParameterSet, dict]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        arrays = {k[len("param:"):]: data[k].copy() for k in data.files if k.startswith("param:")}
    return ParameterSet(arrays), header


def _jsonable(obj):
    if isinstance(obj, NetworkArchitecture):
        return asdict(obj)
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")
