"""Layers built on :mod:`fewcap.tensor`: layer norm, attention, FFN, Adam."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

LN_EPS = 1e-5
CAUSAL_FILL = -1e30


class Module:
    """Parameter container. Parameters are discovered in attribute order."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def uniform_init(rng, shape, fan_in, name=None):
    bound = 1.0 / math.sqrt(fan_in)
    return T.parameter(rng.uniform(-bound, bound, size=shape), name=name)


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True):
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = T.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d):
        self.gain = T.parameter(np.ones(d))
        self.bias = T.parameter(np.zeros(d))

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias)


class FeedForward(Module):
    """d -> 4d -> d with ReLU."""

    def __init__(self, rng, d, d_ff=None):
        d_ff = d_ff or 4 * d
        self.w1 = uniform_init(rng, (d, d_ff), d)
        self.b1 = T.parameter(np.zeros(d_ff))
        self.w2 = uniform_init(rng, (d_ff, d), d_ff)
        self.b2 = T.parameter(np.zeros(d))

    def __call__(self, x):
        return feed_forward(x, self)


class MultiHeadAttention(Module):
    def __init__(self, rng, d, heads):
        if d % heads:
            raise ConfigError(f"model width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.wq = uniform_init(rng, (d, d), d)
        self.bq = T.parameter(np.zeros(d))
        self.wk = uniform_init(rng, (d, d), d)
        self.bk = T.parameter(np.zeros(d))
        self.wv = uniform_init(rng, (d, d), d)
        self.bv = T.parameter(np.zeros(d))
        self.wo = uniform_init(rng, (d, d), d)
        self.bo = T.parameter(np.zeros(d))

    def __call__(self, query, key, value, causal=False, need_weights=False):
        return multi_head_attention(query, key, value, self.heads, self,
                                    causal=causal, need_weights=need_weights)


# -- functional forms ---------------------------------------------------------

def linear(x, weight, bias=None):
    y = T.matmul(x, weight)
    return y + bias if bias is not None else y


def softmax_rows(x):
    return T.softmax(T.as_tensor(x), axis=-1)


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x = T.as_tensor(x)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / T.sqrt(var + eps) * gain + bias


def feed_forward(x, params):
    hidden = T.relu(linear(x, params.w1, params.b1))
    return linear(hidden, params.w2, params.b2)


def _split_heads(x, heads):
    lead, steps, d = x.shape[:-2], x.shape[-2], x.shape[-1]
    return x.reshape(lead + (steps, heads, d // heads)).swapaxes(-2, -3)


def _merge_heads(x):
    lead, heads, steps, dh = x.shape[:-3], x.shape[-3], x.shape[-2], x.shape[-1]
    return x.swapaxes(-2, -3).reshape(lead + (steps, heads * dh))


def causal_mask(q_len, k_len):
    """True where query position i may NOT see key position j (j > i)."""
    return np.triu(np.ones((q_len, k_len), dtype=bool), k=1)


def multi_head_attention(query, key, value, heads, params, causal=False, need_weights=False):
    """Scaled dot-product attention with learned projections.

    ``params`` needs ``wq, bq, wk, bk, wv, bv, wo, bo``. Inputs are ``(..., steps, d)``.
    With ``need_weights`` the per-head attention weights ``(..., heads, q, k)``
    are returned alongside the output.
    """
    query, key, value = T.as_tensor(query), T.as_tensor(key), T.as_tensor(value)
    d = query.shape[-1]
    if d % heads:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads")
    q = _split_heads(linear(query, params.wq, params.bq), heads)
    k = _split_heads(linear(key, params.wk, params.bk), heads)
    v = _split_heads(linear(value, params.wv, params.bv), heads)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d // heads))
    if causal:
        scores = T.masked_fill(scores, causal_mask(scores.shape[-2], scores.shape[-1]), CAUSAL_FILL)
    weights = T.softmax(scores, axis=-1)
    out = linear(_merge_heads(weights @ v), params.wo, params.bo)
    if need_weights:
        return out, weights
    return out


# -- optimizer ----------------------------------------------------------------

class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
