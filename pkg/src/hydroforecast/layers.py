"""Neural building blocks: linear, MLP, multi-head self-attention, LSTM.

All layers operate on trailing dimensions, so any number of leading batch
dimensions is accepted. Parameters are created Xavier-uniform from a numpy
Generator and exposed through ``named_parameters`` for registry collection.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


class ParamRegistry:
    """Named map from dotted path to parameter Tensor, insertion-ordered."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params.keys())

    def tensors(self):
        return list(self._params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()


def count_params(registry: ParamRegistry) -> int:
    return sum(t.size for t in registry.tensors())


def collect_params(*components: tuple[str, "object"]) -> ParamRegistry:
    """Build a registry from (prefix, layer) pairs in deterministic order."""
    reg = ParamRegistry()
    for prefix, comp in components:
        for name, tensor in comp.named_parameters():
            reg.add(f"{prefix}.{name}", tensor)
    return reg


def xavier_uniform(fan_in: int, fan_out: int, shape, rng: np.random.Generator) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class LinearLayer:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        if in_dim <= 0 or out_dim <= 0:
            raise ValueError(f"LinearLayer dims must be positive, got {in_dim}->{out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(xavier_uniform(in_dim, out_dim, (in_dim, out_dim), rng),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def named_parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"linear: input last dim {x.shape[-1]} != {self.in_dim}")
        if x.ndim == 1:
            y = ad.matmul(ad.reshape(x, (1, self.in_dim)), self.weight)
            return ad.add(ad.reshape(y, (self.out_dim,)), self.bias)
        y = ad.matmul(x, self.weight)
        return ad.add(y, ad.expand(self.bias, y.shape))


_ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}


class MLPBlock:
    """Linear layers with an activation between them (none after the last)."""

    def __init__(self, dims: list[int], activation: str, rng: np.random.Generator):
        if len(dims) < 2:
            raise ValueError("MLPBlock needs at least input and output dims")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.dims = list(dims)
        self.activation = activation
        self.layers = [LinearLayer(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name, t in layer.named_parameters():
                yield f"layer{i}.{name}", t

    def __call__(self, x: Tensor) -> Tensor:
        act = _ACTIVATIONS[self.activation]
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = act(x)
        return x


class MultiHeadSelfAttention:
    """Scaled dot-product self-attention; Q, K and V come from the same input."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.w_q = LinearLayer(d_model, d_model, rng)
        self.w_k = LinearLayer(d_model, d_model, rng)
        self.w_v = LinearLayer(d_model, d_model, rng)
        self.w_o = LinearLayer(d_model, d_model, rng)

    def named_parameters(self):
        for tag, layer in (("w_q", self.w_q), ("w_k", self.w_k),
                           ("w_v", self.w_v), ("w_o", self.w_o)):
            for name, t in layer.named_parameters():
                yield f"{tag}.{name}", t

    def __call__(self, x: Tensor, causal: bool = False) -> Tensor:
        if x.shape[-1] != self.d_model:
            raise ShapeError(f"attention: input dim {x.shape[-1]} != d_model {self.d_model}")
        n = x.shape[-2]
        q = self.w_q(x)
        k = self.w_k(x)
        v = self.w_v(x)
        inv_sqrt = 1.0 / math.sqrt(self.d_head)
        mask = None
        if causal:
            mask = np.triu(np.full((n, n), -1e30), k=1)
        head_outs = []
        for h in range(self.heads):
            cols = (Ellipsis, slice(h * self.d_head, (h + 1) * self.d_head))
            qh, kh, vh = q[cols], k[cols], v[cols]
            scores = ad.scale(ad.matmul(qh, ad.transpose_last2(kh)), inv_sqrt)
            if mask is not None:
                scores = ad.add(scores, ad.expand(Tensor(mask), scores.shape))
            weights = ad.softmax_lastdim(scores)
            head_outs.append(ad.matmul(weights, vh))
        return self.w_o(ad.concat(head_outs, axis=-1))

    def attention_weights(self, x: Tensor, causal: bool = False) -> np.ndarray:
        """Per-head softmax weights, stacked on a new leading axis (diagnostic)."""
        q, k = self.w_q(x), self.w_k(x)
        inv_sqrt = 1.0 / math.sqrt(self.d_head)
        out = []
        for h in range(self.heads):
            cols = (Ellipsis, slice(h * self.d_head, (h + 1) * self.d_head))
            scores = ad.scale(ad.matmul(q[cols], ad.transpose_last2(k[cols])), inv_sqrt)
            if causal:
                n = x.shape[-2]
                scores = ad.add(scores, ad.expand(Tensor(np.triu(np.full((n, n), -1e30), k=1)),
                                                  scores.shape))
            out.append(ad.softmax_lastdim(scores).data)
        return np.stack(out)


class LSTMStack:
    """Stacked LSTM; returns the top layer's hidden state at every step.

    Forget-gate biases start at 1 so early training does not flush the cell.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator,
                 num_layers: int = 2, forget_bias: float = 1.0):
        if input_size <= 0 or hidden_size <= 0 or num_layers <= 0:
            raise ValueError("LSTMStack dims must be positive")
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for layer in range(num_layers):
            in_dim = input_size if layer == 0 else hidden_size
            w = xavier_uniform(in_dim + hidden_size, 4 * hidden_size,
                               (in_dim + hidden_size, 4 * hidden_size), rng)
            b = np.zeros(4 * hidden_size)
            b[hidden_size:2 * hidden_size] = forget_bias
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b, requires_grad=True))

    def named_parameters(self):
        for i in range(self.num_layers):
            yield f"layer{i}.weight", self.weights[i]
            yield f"layer{i}.bias", self.biases[i]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.input_size:
            raise ShapeError(f"lstm: input dim {x.shape[-1]} != {self.input_size}")
        squeeze = x.ndim == 2
        if squeeze:
            x = ad.reshape(x, (1,) + x.shape)
        batch = x.shape[:-2]
        n = x.shape[-2]
        hid = self.hidden_size
        seq = x
        for layer in range(self.num_layers):
            w, b = self.weights[layer], self.biases[layer]
            h = Tensor(np.zeros(batch + (hid,)))
            c = Tensor(np.zeros(batch + (hid,)))
            outs = []
            for t in range(n):
                x_t = seq[(Ellipsis, t, slice(None))]
                z = ad.add(ad.matmul(ad.concat([x_t, h], axis=-1), w),
                           ad.expand(b, batch + (4 * hid,)))
                i_g = ad.sigmoid(z[(Ellipsis, slice(0, hid))])
                f_g = ad.sigmoid(z[(Ellipsis, slice(hid, 2 * hid))])
                g_g = ad.tanh(z[(Ellipsis, slice(2 * hid, 3 * hid))])
                o_g = ad.sigmoid(z[(Ellipsis, slice(3 * hid, 4 * hid))])
                c = ad.add(ad.mul(f_g, c), ad.mul(i_g, g_g))
                h = ad.mul(o_g, ad.tanh(c))
                outs.append(ad.reshape(h, batch + (1, hid)))
            seq = ad.concat(outs, axis=-2)
        if squeeze:
            seq = ad.reshape(seq, (n, hid))
        return seq
