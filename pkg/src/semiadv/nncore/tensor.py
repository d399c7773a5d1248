"""Tape-based reverse-mode autodiff over numpy arrays."""
import hashlib
from collections import OrderedDict

import numpy as np


class Tensor:
    """An n-d float array that remembers how it was computed.

    ``_backward`` maps the upstream gradient to a tuple of gradients, one per
    parent (``None`` for parents that need none).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.neg(as_tensor(other)))

    def __rsub__(self, other):
        from . import ops
        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return ops.mul(self, 1.0 / other)

    def __getitem__(self, key):
        from . import ops
        return ops.index(self, key)

    def sum(self):
        from . import ops
        return ops.tsum(self)

    def mean(self):
        from . import ops
        return ops.tsum(self) * (1.0 / self.data.size)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    # autodiff -----------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every requires-grad leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires grad")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise RuntimeError(
                        f"gradient shape {pg.shape} does not match tensor shape {parent.data.shape}"
                    )
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return Tensor(arr)


class ParamStore:
    """Ordered name -> Tensor map with per-entry trainable flags.

    Frozen entries keep ``requires_grad=False`` so backward never fills
    their ``.grad``; gradient still flows through them to upstream inputs.
    """

    def __init__(self, meta=None):
        self._entries = OrderedDict()
        self._trainable = {}
        self.meta = dict(meta or {})

    def add(self, name, value, trainable=True):
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(np.asarray(value))
        t.name = name
        t.requires_grad = bool(trainable)
        self._entries[name] = t
        self._trainable[name] = bool(trainable)
        return t

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def is_trainable(self, name):
        return self._trainable[name]

    def trainable_items(self):
        return [(k, t) for k, t in self._entries.items() if self._trainable[k]]

    def set_trainable(self, flag, names=None):
        for k in names if names is not None else self._entries:
            self._trainable[k] = bool(flag)
            self._entries[k].requires_grad = bool(flag)
            if not flag:
                self._entries[k].grad = None

    def freeze(self):
        self.set_trainable(False)
        return self

    def unfreeze(self):
        self.set_trainable(True)
        return self

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def n_params(self):
        return sum(t.data.size for t in self._entries.values())

    def digest(self):
        """sha256 over names, shapes and raw value bytes, in entry order."""
        h = hashlib.sha256()
        for k, t in self._entries.items():
            h.update(k.encode())
            h.update(str(t.data.shape).encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def copy(self):
        out = ParamStore(self.meta)
        for k, t in self._entries.items():
            out.add(k, Tensor(t.data.copy()), trainable=self._trainable[k])
        return out

    def astype(self, dtype):
        out = ParamStore(self.meta)
        for k, t in self._entries.items():
            out.add(k, Tensor(t.data.astype(dtype)), trainable=self._trainable[k])
        return out

    def shapes(self):
        return {k: tuple(t.data.shape) for k, t in self._entries.items()}
