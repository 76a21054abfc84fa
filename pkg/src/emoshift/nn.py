"""Small neural-network layer zoo on top of the tape autodiff engine.

Everything runs in float64 numpy. Parameters are Tensors with
requires_grad=True; frozen components simply carry requires_grad=False
tensors, so gradient steps cannot touch them by construction.
"""

from __future__ import annotations

import hashlib

import numpy as np

from emoshift.autodiff import Tensor, concat, gelu, softmax


class Module:
    """Base class with recursive parameter discovery over attributes."""

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                out[name] = value
            elif isinstance(value, Module):
                for sub, t in value.named_parameters().items():
                    out[f"{name}.{sub}"] = t
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for sub, t in item.named_parameters().items():
                            out[f"{name}.{i}.{sub}"] = t
                    elif isinstance(item, Tensor):
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.named_parameters().items() if t.requires_grad}

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def freeze(self) -> None:
        for t in self.parameters():
            t.requires_grad = False
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, t in params.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {a.shape} vs {t.data.shape}")
            t.data = a.copy()

    def checksum(self) -> str:
        return params_checksum(self.named_parameters())


def params_checksum(params: dict[str, Tensor]) -> str:
    """Order-independent digest of parameter names and values."""
    h = hashlib.blake2b(digest_size=16)
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name].data, dtype=np.float64).tobytes())
    return h.hexdigest()


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(rng.normal(scale=1.0 / np.sqrt(n_in), size=(n_in, n_out)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    """Convolution over (B, C, H, W) inputs."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        scale = 1.0 / np.sqrt(c_in * kernel * kernel)
        self.weight = Tensor(rng.normal(scale=scale, size=(c_out, c_in, kernel, kernel)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        from emoshift.autodiff import conv2d

        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / (var + self.eps).sqrt()
        return normed * self.gamma + self.beta


class MultiheadSelfAttention(Module):
    """Standard scaled dot-product self-attention over (B, T, D) sequences."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h, hd = self.heads, self.head_dim

        def split_heads(y: Tensor) -> Tensor:
            return y.reshape(b, t, h, hd).transpose(0, 2, 1, 3)

        q = split_heads(self.wq(x))
        k = split_heads(self.wk(x))
        v = split_heads(self.wv(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        attn = softmax(scores, axis=-1)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.wo(ctx)


class TransformerBlock(Module):
    """Pre-norm residual block: x += MSA(LN(x)); x += MLP(LN(x))."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 4):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.attn(self.ln1(x)) + x
        return self.fc2(gelu(self.fc1(self.ln2(x)))) + x


class MLP(Module):
    """Feed-forward stack with a fixed activation between layers."""

    def __init__(self, dims: list[int], rng: np.random.Generator, activation=gelu):
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        return x


class Adam:
    """Adaptive moment optimizer; decoupled=True applies weight decay AdamW-style."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0, decoupled: bool = False):
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p.data
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            if self.weight_decay and self.decoupled:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


def AdamW(params: dict[str, Tensor], lr: float, weight_decay: float = 0.01, **kw) -> Adam:
    return Adam(params, lr, weight_decay=weight_decay, decoupled=True, **kw)


def stack_rows(rows: list[Tensor]) -> Tensor:
    """Stack 1-D tensors into a 2-D tensor along a new first axis."""
    return concat([r.reshape(1, -1) for r in rows], axis=0)
