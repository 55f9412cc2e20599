"""Parameter containers: the minimum module system the models need.

A module owns ``Tensor`` parameters and child modules; ``parameters()``
walks the tree in attribute-definition order and yields dotted names,
which is also the naming scheme used in checkpoint files.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, embedding, matmul, uniform_init


class Module:
    training: bool = False

    def parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        seen: set[int] = set()

        def push(name: str, p: Tensor) -> None:
            # shared tensors (tied embeddings) are listed once, first name
            if id(p) not in seen:
                seen.add(id(p))
                out.append((name, p))

        for attr, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                push(attr, value)
            elif isinstance(value, Module):
                for n, p in value.parameters():
                    push(f"{attr}.{n}", p)
            elif isinstance(value, ModuleList):
                for i, child in enumerate(value):
                    for n, p in child.parameters():
                        push(f"{attr}.{i}.{n}", p)
        return out

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value.train(mode)
            elif isinstance(value, ModuleList):
                for child in value:
                    child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name!r}")
            src = arrays[name]
            if src.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name!r}: checkpoint shape {src.shape} "
                    f"!= model shape {p.data.shape}"
                )
            p.data = np.ascontiguousarray(src, dtype=p.data.dtype)


class ModuleList(list):
    """Plain list subclass so ``parameters()`` can find child modules."""


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Tensor(uniform_init(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)


class Embedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.table = Tensor(
            uniform_init(rng, (vocab_size, dim), dim), requires_grad=True
        )

    def __call__(self, ids: np.ndarray) -> Tensor:
        return embedding(self.table, ids)
