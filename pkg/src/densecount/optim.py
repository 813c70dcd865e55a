"""Adam optimizer for Tensor parameters.

Each parameter keeps its own moment accumulators and step counter, so
parameters that are updated sporadically (for example, prediction heads that
are only trained when drawn) still get correct bias correction.
"""

import numpy as np

__all__ = ["Adam", "zero_grads"]


def zero_grads(params):
    for p in params:
        p.grad = None


class Adam:
    """Standard Adam with bias correction.

    The update for a parameter with gradient g at its step t is
    ``p -= lr * m_hat / (sqrt(v_hat) + eps)`` with the usual exponential
    moving averages m, v and corrections ``m_hat = m / (1 - beta1**t)``,
    ``v_hat = v / (1 - beta2**t)``.
    """

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._slots = {}

    def step(self, params, grads=None):
        """Update ``params`` in place from ``grads`` (default: their ``.grad``).

        Parameters whose gradient is None are skipped. Returns ``params``.
        """
        if grads is None:
            grads = [p.grad for p in params]
        if len(grads) != len(params):
            raise ValueError(f"{len(params)} params but {len(grads)} grads")
        for p, g in zip(params, grads):
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ValueError(f"grad shape {g.shape} does not match param shape {p.data.shape}")
            slot = self._slots.get(p)
            if slot is None:
                slot = [np.zeros_like(p.data), np.zeros_like(p.data), 0]
                self._slots[p] = slot
            m, v, t = slot
            t += 1
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            slot[2] = t
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return params

    def step_count(self, param):
        """How many updates ``param`` has received."""
        slot = self._slots.get(param)
        return 0 if slot is None else slot[2]
