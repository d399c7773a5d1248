import numpy as np


class Adam:
    """Adam over the trainable entries of a :class:`ParamStore`.

    Frozen entries are never touched, even if a stale ``.grad`` is present.
    """

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1 - b1 ** self.t
        corr2 = 1 - b2 ** self.t
        for name, p in self.store.trainable_items():
            if p.grad is None:
                raise RuntimeError(f"trainable parameter {name!r} has no gradient; run backward() first")
            g = p.grad.astype(np.float64)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros(p.shape)
                self.v[name] = np.zeros(p.shape)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)

    def zero_grad(self):
        self.store.zero_grad()


def adam_step(store, optimizer=None, lr=1e-3, beta1=0.9, beta2=0.999):
    """Apply one Adam update; creates the optimizer state on first use."""
    if optimizer is None:
        optimizer = Adam(store, lr=lr, beta1=beta1, beta2=beta2)
    optimizer.step()
    return optimizer
