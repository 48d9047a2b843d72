"""Adam optimizer with bias correction.

State lives per parameter name so it can be checkpointed alongside the
parameters and restored exactly.
"""

import numpy as np


class Adam:
    """Standard Adam: m/v moment tracking, bias-corrected step."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """Apply one update in place.

        ``params`` is an iterable of (name, Tensor); ``grads`` maps name
        to a gradient array of matching shape.
        """
        params = list(params)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, tensor in params:
            g = np.asarray(grads[name], dtype=np.float64)
            if g.shape != tensor.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"'{name}' shape {tensor.data.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(tensor.data)
                self.v[name] = np.zeros_like(tensor.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            tensor.data = tensor.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    @classmethod
    def from_state_dict(cls, state):
        opt = cls(lr=state["lr"], beta1=state["beta1"], beta2=state["beta2"],
                  eps=state["eps"])
        opt.t = int(state["t"])
        opt.m = {k: np.asarray(v, dtype=np.float64).copy() for k, v in state["m"].items()}
        opt.v = {k: np.asarray(v, dtype=np.float64).copy() for k, v in state["v"].items()}
        return opt
