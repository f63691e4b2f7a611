"""Dense numeric primitives and the parameter container.

Everything runs in float64 torch tensors. Gradients come from torch autograd;
tests check them against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Iterator

import numpy as np
import torch

from .errors import DivergenceError

DTYPE = torch.float64
LOG_FLOOR = 1e-12
PARAM_NAMES = ("W_e", "w", "a", "W_c", "b_c")


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def softmax(logits, dim: int = -1) -> torch.Tensor:
    x = as_tensor(logits)
    if x.numel() == 0:
        raise ValueError("softmax of an empty input")
    shifted = x - x.max(dim=dim, keepdim=True).values.detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=dim, keepdim=True)


def sigmoid(x) -> torch.Tensor:
    return torch.sigmoid(as_tensor(x))


def leaky_relu(x, slope: float = 0.2) -> torch.Tensor:
    x = as_tensor(x)
    # x >= 0 takes the identity branch, so the derivative at 0 is 1.
    return torch.where(x >= 0, x, slope * x)


def cross_entropy(probabilities, target) -> torch.Tensor:
    """``-log p[target]`` with the probability floored at 1e-12.

    ``probabilities`` may be a single vector with an int target, or any
    ``(..., N)`` batch with matching targets; batches return per-row losses.
    """
    p = as_tensor(probabilities)
    n = p.shape[-1]
    t = torch.as_tensor(target, dtype=torch.long)
    if torch.any(t < 0) or torch.any(t >= n):
        raise IndexError(f"target out of range for {n} classes")
    if p.dim() == 1:
        picked = p[t]
    else:
        picked = p.gather(-1, t.unsqueeze(-1)).squeeze(-1)
    return -torch.log(torch.clamp(picked, min=LOG_FLOOR))


def glorot(shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return torch.as_tensor(rng.uniform(-bound, bound, size=shape))


@dataclass(frozen=True, eq=False)
class ParamSet:
    """All learnable tensors of the model.

    ``W_e`` (d, d') encoder, ``w`` (2d',) re-weighting vector, ``a`` (2,)
    attention vector, ``W_c`` (d', N) and ``b_c`` (N,) classifier.
    """

    W_e: torch.Tensor
    w: torch.Tensor
    a: torch.Tensor
    W_c: torch.Tensor
    b_c: torch.Tensor

    def __post_init__(self):
        # a leading batch axis (one slice per task) is allowed on every tensor
        d, dh = self.W_e.shape[-2:]
        n = self.W_c.shape[-1]
        if tuple(self.w.shape[-1:]) != (2 * dh,):
            raise ValueError(f"w must have length {2 * dh}, got shape {tuple(self.w.shape)}")
        if tuple(self.a.shape[-1:]) != (2,):
            raise ValueError(f"a must have length 2, got shape {tuple(self.a.shape)}")
        if self.W_c.dim() < 2 or self.W_c.shape[-2] != dh:
            raise ValueError(f"W_c must have shape ({dh}, N), got {tuple(self.W_c.shape)}")
        if tuple(self.b_c.shape[-1:]) != (n,):
            raise ValueError(f"b_c must have length {n}, got shape {tuple(self.b_c.shape)}")

    @property
    def batched(self) -> bool:
        return self.W_e.dim() == 3

    def expand(self, batch: int) -> "ParamSet":
        """View with a leading task axis of size ``batch``."""
        return self.map(lambda t: t.unsqueeze(0).expand(batch, *t.shape))

    @classmethod
    def init(cls, d: int, d_hidden: int, n_way: int, seed: int | np.random.Generator) -> "ParamSet":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(
            W_e=glorot((d, d_hidden), d, d_hidden, rng),
            w=glorot((2 * d_hidden,), 2 * d_hidden, 1, rng),
            a=glorot((2,), 2, 1, rng),
            W_c=glorot((d_hidden, n_way), d_hidden, n_way, rng),
            b_c=torch.zeros(n_way, dtype=DTYPE),
        )

    @classmethod
    def zeros(cls, d: int, d_hidden: int, n_way: int) -> "ParamSet":
        z = lambda *s: torch.zeros(*s, dtype=DTYPE)  # noqa: E731
        return cls(z(d, d_hidden), z(2 * d_hidden), z(2), z(d_hidden, n_way), z(n_way))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W_e.shape[-2], self.W_e.shape[-1], self.W_c.shape[-1]

    def tensors(self) -> tuple[torch.Tensor, ...]:
        return tuple(getattr(self, name) for name in PARAM_NAMES)

    def items(self) -> Iterator[tuple[str, torch.Tensor]]:
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def numel(self) -> int:
        return sum(t.numel() for t in self.tensors())

    def map(self, fn: Callable[[torch.Tensor], torch.Tensor]) -> "ParamSet":
        return ParamSet(*(fn(t) for t in self.tensors()))

    def zip_map(self, other: "ParamSet", fn) -> "ParamSet":
        return ParamSet(*(fn(x, y) for x, y in zip(self.tensors(), other.tensors())))

    def replace(self, **changes) -> "ParamSet":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ParamSet(**values)

    def detach(self) -> "ParamSet":
        return self.map(lambda t: t.detach().clone())

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.detach().numpy().reshape(-1) for t in self.tensors()])

    def unflatten(self, vector) -> "ParamSet":
        """Same shapes as ``self`` filled from a flat vector."""
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.numel(),):
            raise ValueError(f"expected {self.numel()} values, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("parameter values must be finite")
        out, pos = [], 0
        for t in self.tensors():
            n = t.numel()
            out.append(torch.as_tensor(vec[pos : pos + n].copy()).reshape(t.shape))
            pos += n
        return ParamSet(*out)

    def inner(self, other: "ParamSet") -> float:
        return float(sum((x * y).sum() for x, y in zip(self.tensors(), other.tensors())))

    def norm(self) -> float:
        return math.sqrt(self.inner(self))

    def equal(self, other: "ParamSet") -> bool:
        return all(torch.equal(x, y) for x, y in zip(self.tensors(), other.tensors()))


GradientSet = ParamSet


def with_grad(params: ParamSet) -> ParamSet:
    """Fresh leaf copies of ``params`` that track gradients."""
    return params.map(lambda t: t.detach().clone().requires_grad_(True))


def gradient(loss_function: Callable[[ParamSet], torch.Tensor], params: ParamSet) -> GradientSet:
    """Analytic gradient of a scalar loss with respect to every parameter."""
    leaves = with_grad(params)
    loss = as_tensor(loss_function(leaves))
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss {float(loss.detach())}")
    if not loss.requires_grad:
        return params.map(torch.zeros_like)
    grads = torch.autograd.grad(loss, leaves.tensors(), allow_unused=True)
    return ParamSet(
        *(torch.zeros_like(t) if g is None else g.detach() for t, g in zip(leaves.tensors(), grads))
    )

