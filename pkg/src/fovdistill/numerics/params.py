"""Named parameter collections and the Adam optimizer."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import InvalidArgument
from .serialize import read_tensor, write_tensor
from .tensor import Tensor


class ParamStore:
    """Ordered name -> Tensor map; insertion order is the iteration order."""

    def __init__(self, entries=None):
        self._entries: dict[str, Tensor] = {}
        for name, value in (entries or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise InvalidArgument(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._entries.items()}

    def compatible(self, other: "ParamStore") -> bool:
        return list(self.shapes().items()) == list(other.shapes().items())

    def check_compatible(self, other: "ParamStore") -> None:
        if not self.compatible(other):
            raise InvalidArgument("parameter stores are not compatible (names/shapes differ)")

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.data.copy() for k, v in self._entries.items()})

    def assign(self, other: "ParamStore") -> None:
        """Overwrite values in place with ``other``'s."""
        self.check_compatible(other)
        for k, v in self._entries.items():
            v.data = other[k].data.copy()

    def zero_grad(self) -> None:
        for v in self._entries.values():
            v.grad = np.zeros_like(v.data)

    def max_abs_diff(self, other: "ParamStore") -> float:
        self.check_compatible(other)
        return max((float(np.max(np.abs(v.data - other[k].data))) for k, v in self._entries.items()),
                   default=0.0)

    def flat(self) -> np.ndarray:
        return np.concatenate([v.data.ravel() for v in self._entries.values()])

    def num_values(self) -> int:
        return sum(v.size for v in self._entries.values())

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        index = []
        for i, (k, v) in enumerate(self._entries.items()):
            fname = f"param_{i:03d}.gdtn"
            write_tensor(d / fname, v.data)
            index.append({"name": k, "file": fname, "shape": list(v.shape)})
        (d / "params.json").write_text(json.dumps(index, indent=2) + "\n")

    @classmethod
    def load(cls, directory) -> "ParamStore":
        d = Path(directory)
        try:
            index = json.loads((d / "params.json").read_text())
            store = cls()
            for e in index:
                arr = read_tensor(d / e["file"])
                if list(arr.shape) != list(e["shape"]):
                    raise InvalidArgument(f"shape mismatch for {e['name']}")
                store.add(e["name"], arr)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            if isinstance(exc, InvalidArgument):
                raise
            raise InvalidArgument(f"unreadable parameter store at {d}: {exc}") from exc
        return store


class Adam:
    def __init__(self, params: ParamStore, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
