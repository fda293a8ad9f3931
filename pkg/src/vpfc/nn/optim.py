import numpy as np

from .layers import Parameter


def seed_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 generator; the single source of randomness for a run."""
    return np.random.default_rng(np.uint64(seed))


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Per step: ``value -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * value)``.
    Moments live on each :class:`Parameter` so a checkpointed model can resume.
    """

    def __init__(self, params: list[Parameter], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            p.adam_m *= b1
            p.adam_m += (1.0 - b1) * p.grad
            p.adam_v *= b2
            p.adam_v += (1.0 - b2) * p.grad * p.grad
            update = (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.value
            p.value -= self.lr * update


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, t=1):
    """Functional single Adam update at step ``t`` (1-based) on ``params``."""
    opt = Adam(params, lr, beta1, beta2, eps, weight_decay)
    opt.t = t - 1
    opt.step()
    return params
