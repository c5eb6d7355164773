"""Fixed ReLU generator G: R^k -> R^n with exact latent gradients.

The network is immutable; forward passes return a workspace holding the
pre-activations so the backward pass can reuse the activation pattern.
Every routine accepts either a single latent of shape ``(k,)`` or a stack of
latents of shape ``(R, k)``, the leading axis being independent copies
(restarts in the recovery loop).
"""

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"GNW1"


class WeightFormatError(ValueError):
    """Weight file does not start with the expected magic bytes."""


class WeightShapeError(ValueError):
    """Header dimensions disagree with the payload."""


class WeightTruncatedError(ValueError):
    """Weight file ended before the declared payload."""


@dataclass(frozen=True, eq=False)
class GeneratorNet:
    """Dense ReLU network ``x = act_d(W_d(...relu(W_1 z + b_1)...) + b_d)``.

    Parameters
    ----------
    weights : tuple of ndarray
        ``weights[l]`` has shape ``(layer_dims[l+1], layer_dims[l])``.
    biases : tuple of ndarray
        ``biases[l]`` has length ``layer_dims[l+1]``.
    final_relu : bool
        Apply ReLU to the output layer too; otherwise the last layer is linear.
    """

    weights: tuple
    biases: tuple
    final_relu: bool = False

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        if len(ws) == 0:
            raise ValueError("a generator needs at least one layer")
        if len(ws) != len(bs):
            raise ValueError(f"{len(ws)} weight matrices but {len(bs)} bias vectors")
        for l, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2:
                raise ValueError(f"weight {l} must be 2-D, got shape {w.shape}")
            if l > 0 and w.shape[1] != ws[l - 1].shape[0]:
                raise ValueError(
                    f"weight {l} expects input dim {w.shape[1]}, "
                    f"previous layer outputs {ws[l - 1].shape[0]}"
                )
            if b.shape[0] != w.shape[0]:
                raise ValueError(f"bias {l} has length {b.shape[0]}, expected {w.shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite entries")
            w.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "final_relu", bool(self.final_relu))

    @property
    def layer_dims(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def depth(self):
        return len(self.weights)

    @property
    def latent_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    def __eq__(self, other):
        if not isinstance(other, GeneratorNet):
            return NotImplemented
        return (
            self.final_relu == other.final_relu
            and self.layer_dims == other.layer_dims
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )

    __hash__ = None

    def _relu_at(self, layer):
        return layer < self.depth - 1 or self.final_relu


def _check_latent(net, z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim not in (1, 2) or z.shape[-1] != net.latent_dim:
        raise ValueError(
            f"latent dimension mismatch: expected {net.latent_dim}, got shape {z.shape}"
        )
    return z


def _affine(w, b, h):
    # one matrix-vector product per latent keeps stacked and single
    # evaluations bit-identical
    if h.ndim == 1:
        return w @ h + b
    return np.stack([w @ hi for hi in h]) + b


def forward_cached(net, z):
    """Evaluate G at ``z`` and keep the pre-activations.

    Returns
    -------
    x : ndarray, shape ``(n,)`` or ``(R, n)``
    workspace : list of ndarray
        Pre-activation of every layer, consumed by :func:`latent_gradient`.
    """
    h = _check_latent(net, z)
    pre = []
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        u = _affine(w, b, h)
        pre.append(u)
        h = np.maximum(u, 0.0) if net._relu_at(l) else u
    return h, pre


def forward(net, z):
    """G(z) for a single latent or a stack of latents."""
    return forward_cached(net, z)[0]


def latent_gradient(net, z, upstream, workspace=None):
    """Vector-Jacobian product ``J(z)^T upstream``.

    The ReLU derivative is taken as 0 at exactly-zero pre-activations.
    Pass the ``workspace`` from :func:`forward_cached` to skip the forward
    pass.
    """
    z = _check_latent(net, z)
    if workspace is None:
        _, workspace = forward_cached(net, z)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape[-1] != net.output_dim or g.ndim != z.ndim:
        raise ValueError(
            f"upstream dimension mismatch: expected {net.output_dim}, got shape {g.shape}"
        )
    for l in range(net.depth - 1, -1, -1):
        if net._relu_at(l):
            g = g * (workspace[l] > 0.0)
        g = g @ net.weights[l]
    return g


def random_generator(dims, seed, scale=1.0, final_relu=False):
    """Gaussian random-weight generator with zero biases.

    Weights of layer ``l`` are i.i.d. ``N(0, scale**2 / fan_in)``.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValueError(f"need at least input and output dims, got {dims}")
    if min(dims) < 1:
        raise ValueError(f"all dims must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * (scale / np.sqrt(fan_in)))
        biases.append(np.zeros(fan_out))
    return GeneratorNet(tuple(weights), tuple(biases), final_relu)


def save_weights(net, path):
    """Write ``net`` in the GNW1 little-endian binary format."""
    dims = net.layer_dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", net.depth))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(struct.pack("<B", int(net.final_relu)))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_weights(path):
    """Read a GNW1 file written by :func:`save_weights`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    pos = 4
    if len(data) < pos + 4:
        raise WeightTruncatedError(f"{path}: missing layer count")
    (depth,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if depth < 1:
        raise WeightShapeError(f"{path}: layer count must be >= 1")
    if len(data) < pos + 4 * (depth + 1) + 1:
        raise WeightTruncatedError(f"{path}: header truncated")
    dims = struct.unpack_from(f"<{depth + 1}I", data, pos)
    pos += 4 * (depth + 1)
    final_relu = bool(data[pos])
    pos += 1
    expected = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    have = (len(data) - pos) // 8
    if (len(data) - pos) % 8 or have < expected:
        raise WeightTruncatedError(
            f"{path}: header declares {expected} values, payload holds {have}"
        )
    if have > expected:
        raise WeightShapeError(
            f"{path}: header declares {expected} values, payload holds {have}"
        )
    payload = np.frombuffer(data, dtype="<f8", offset=pos).astype(np.float64)
    weights, biases = [], []
    off = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(payload[off:off + fan_out * fan_in].reshape(fan_out, fan_in))
        off += fan_out * fan_in
        biases.append(payload[off:off + fan_out])
        off += fan_out
    return GeneratorNet(tuple(weights), tuple(biases), final_relu)
