"""Small dense-network engine: ReLU MLPs, reverse-mode gradients, Adam, checkpoints.

Parameters live in one flat vector. Layer ``l`` stores its weight matrix
(n_out, n_in) row-major followed by its bias (n_out,), so the gradient of a
linear layer's weights is ``outer(output_grad, input)``.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"LMMLP\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class MlpParams:
    layer_sizes: tuple[int, ...]
    flat: np.ndarray

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        expected = n_params(self.layer_sizes)
        if self.flat.shape != (expected,):
            raise ValueError(f"flat parameter vector has shape {self.flat.shape}, expected ({expected},)")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into the flat vector."""
        out, off = [], 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = self.flat[off:off + n_in * n_out].reshape(n_out, n_in)
            off += n_in * n_out
            b = self.flat[off:off + n_out]
            off += n_out
            out.append((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, self.flat.copy())


def n_params(layer_sizes) -> int:
    return sum(i * o + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


def init_mlp(layer_sizes, rng: np.random.Generator, dtype=np.float64) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    p = MlpParams(tuple(layer_sizes), np.zeros(n_params(layer_sizes), dtype=dtype))
    for w, _ in p.layers():
        n_out, n_in = w.shape
        lim = np.sqrt(6.0 / (n_in + n_out))
        w[...] = rng.uniform(-lim, lim, size=w.shape)
    return p


def _check_input(p: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=p.flat.dtype)
    if x.shape[-1] != p.layer_sizes[0] or x.ndim > 2:
        raise ValueError(f"input has shape {x.shape}, network expects last dim {p.layer_sizes[0]}")
    return x


def forward_cached(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass returning the output and the per-layer inputs needed by backprop."""
    x = _check_input(p, x)
    acts = [x]
    h = x
    layers = p.layers()
    for i, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return h, acts


def forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input vector or a (batch, n_in) array."""
    return forward_cached(p, x)[0]


def backward_cached(p: MlpParams, acts: list[np.ndarray], output_grad: np.ndarray,
                    need_param_grad: bool = True) -> tuple[np.ndarray | None, np.ndarray]:
    """Backprop ``output_grad`` through a cached forward pass.

    For batched inputs the parameter gradient is summed over the batch.
    """
    g = np.asarray(output_grad, dtype=p.flat.dtype)
    layers = p.layers()
    if g.shape[-1] != p.layer_sizes[-1] or g.shape[:-1] != acts[0].shape[:-1]:
        raise ValueError(f"output_grad has shape {g.shape}, expected {acts[0].shape[:-1] + (p.layer_sizes[-1],)}")
    grad = np.zeros_like(p.flat) if need_param_grad else None
    if need_param_grad:
        grad_layers = MlpParams(p.layer_sizes, grad).layers()
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        a_in = acts[i]
        if need_param_grad:
            gw, gb = grad_layers[i]
            if g.ndim == 1:
                gw[...] = np.outer(g, a_in)
                gb[...] = g
            else:
                gw[...] = g.T @ a_in
                gb[...] = g.sum(axis=0)
        g = g @ w
        if i > 0:
            # ReLU derivative, taken as 0 at the kink
            g = g * (a_in > 0.0)
    return grad, g


def backward(p: MlpParams, x: np.ndarray, output_grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact reverse-mode gradients: (d/d params, d/d input) of <output_grad, forward(p, x)>."""
    _, acts = forward_cached(p, x)
    return backward_cached(p, acts, output_grad)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, flat: np.ndarray, **kwargs) -> "AdamState":
        return cls(np.zeros_like(flat), np.zeros_like(flat), **kwargs)


def adam_step(flat: np.ndarray, grads: np.ndarray, s: AdamState) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update, applied in place. Returns (flat, s) for convenience."""
    if grads.shape != flat.shape or s.m.shape != flat.shape:
        raise ValueError(f"length mismatch: params {flat.shape}, grads {grads.shape}, moments {s.m.shape}")
    bad = ~np.isfinite(grads)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise FloatingPointError(f"non-finite gradient at parameter index {idx}: {grads[idx]}")
    s.step += 1
    s.m *= s.beta1
    s.m += (1.0 - s.beta1) * grads
    s.v *= s.beta2
    s.v += (1.0 - s.beta2) * grads * grads
    m_hat_scale = 1.0 / (1.0 - s.beta1 ** s.step)
    v_hat_scale = 1.0 / (1.0 - s.beta2 ** s.step)
    flat -= s.lr * (s.m * m_hat_scale) / (np.sqrt(s.v * v_hat_scale) + s.eps)
    return flat, s


def _payload(p: MlpParams) -> bytes:
    sizes = p.layer_sizes
    head = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(sizes)) + struct.pack(f"<{len(sizes)}I", *sizes)
    head += struct.pack("<Q", p.flat.size)
    return head + np.ascontiguousarray(p.flat, dtype="<f8").tobytes()


def save_params(p: MlpParams, path: str | Path) -> None:
    """Write a self-describing little-endian float64 checkpoint with a CRC32 trailer."""
    body = _payload(p)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_params(path: str | Path) -> MlpParams:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 6 + 8 + 4 or not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not an MLP checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    off = len(MAGIC)
    version, n_sizes = struct.unpack_from("<HI", body, off)
    off += 6
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if n_sizes < 2 or off + 4 * n_sizes + 8 > len(body):
        raise CheckpointError(f"{path}: corrupt header")
    sizes = struct.unpack_from(f"<{n_sizes}I", body, off)
    off += 4 * n_sizes
    (count,) = struct.unpack_from("<Q", body, off)
    off += 8
    if count != n_params(sizes) or len(body) - off != 8 * count:
        raise CheckpointError(f"{path}: payload length does not match layer sizes {sizes}")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    flat = np.frombuffer(body, dtype="<f8", count=count, offset=off).astype(np.float64)
    return MlpParams(sizes, flat)
