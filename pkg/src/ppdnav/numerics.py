"""Dense feed-forward networks with exact reverse-mode gradients, in float64.

Everything the learners differentiate lives here: a tanh MLP, a shared-trunk
policy/value network, a bias-corrected adaptive-moment update, a categorical
distribution over logits, and a byte-stable binary parameter format.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"PPDNET1"
_ARCH_MLP = 0
_ARCH_TWO_HEAD = 1


class ShapeMismatch(ValueError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


class NoCachedForward(RuntimeError):
    pass


def _require_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{what} contains NaN/Inf")
    return arr


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    """Orthogonal-style init: QR of a Gaussian draw, sign-fixed, scaled by gain."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class MLP:
    """Fully-connected net: tanh on hidden layers, linear output by default.

    Parameters live in per-layer matrices but round-trip losslessly through a
    flat vector view (weights then bias, layer by layer), which is what the
    optimizer and the checkpoint format see.
    """

    def __init__(self, layer_sizes: list[int], rng: np.random.Generator | None = None,
                 out_gain: float = 1.0, final_tanh: bool = False):
        if len(layer_sizes) < 2:
            raise ShapeMismatch("need at least input and output sizes")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.final_tanh = final_tanh
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng or np.random.Generator(np.random.PCG64(0))
        n_layers = len(layer_sizes) - 1
        for i in range(n_layers):
            fan_in, fan_out = self.layer_sizes[i], self.layer_sizes[i + 1]
            gain = out_gain if (i == n_layers - 1 and not final_tanh) else np.sqrt(2.0)
            self.weights.append(orthogonal(rng, fan_out, fan_in, gain))
            self.biases.append(np.zeros(fan_out))
        self._cache: list[np.ndarray] | None = None
        self.input_grad: np.ndarray | None = None

    # -- parameter vector view -------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.reshape(-1), b]) for w, b in
                               zip(self.weights, self.biases)])

    def set_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ShapeMismatch(f"expected {self.n_params} params, got {theta.shape}")
        off = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = theta[off:off + w.size].reshape(w.shape).copy()
            off += w.size
            self.biases[i] = theta[off:off + b.size].copy()
            off += b.size

    def clone(self) -> "MLP":
        out = MLP.__new__(MLP)
        out.layer_sizes = list(self.layer_sizes)
        out.final_tanh = self.final_tanh
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        out._cache = None
        out.input_grad = None
        return out

    # -- forward / backward ------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.layer_sizes[0]:
            raise ShapeMismatch(f"input width {x.shape[1]} != {self.layer_sizes[0]}")
        _require_finite(x, "input")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last or self.final_tanh:
                h = np.tanh(h)
            acts.append(h)
        self._cache = acts
        return _require_finite(h, "output")

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        """Gradient of sum(upstream * output) w.r.t. the flat parameters.

        Also leaves the gradient w.r.t. the input batch on self.input_grad so
        composite nets can keep propagating.
        """
        if self._cache is None:
            raise NoCachedForward("forward() must precede backward()")
        acts = self._cache
        delta = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        if delta.shape != acts[-1].shape:
            raise ShapeMismatch(f"upstream {delta.shape} != output {acts[-1].shape}")
        last = len(self.weights) - 1
        grads: list[np.ndarray] = []
        for i in range(last, -1, -1):
            if i < last or self.final_tanh:
                delta = delta * (1.0 - acts[i + 1] ** 2)   # tanh'(z) via the activation
            grads.append(delta.sum(axis=0))                # bias
            grads.append((delta.T @ acts[i]).reshape(-1))  # weight
            delta = delta @ self.weights[i]
        self.input_grad = delta
        return np.concatenate(grads[::-1])


class TwoHeadNet:
    """Shared tanh trunk feeding a logits head and a scalar value head.

    The flat parameter vector is trunk, then policy head, then value head;
    both heads are single linear layers off the trunk's final activation.
    """

    def __init__(self, obs_dim: int, n_actions: int, hidden: tuple[int, ...] = (64, 64),
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.Generator(np.random.PCG64(0))
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        self.hidden = tuple(int(h) for h in hidden)
        self.trunk = MLP([self.obs_dim, *self.hidden], rng=rng, final_tanh=True)
        self.policy_head = MLP([self.hidden[-1], self.n_actions], rng=rng, out_gain=0.01)
        self.value_head = MLP([self.hidden[-1], 1], rng=rng, out_gain=1.0)

    @property
    def n_params(self) -> int:
        return self.trunk.n_params + self.policy_head.n_params + self.value_head.n_params

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.trunk.get_params(), self.policy_head.get_params(),
                               self.value_head.get_params()])

    def set_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ShapeMismatch(f"expected {self.n_params} params, got {theta.shape}")
        a = self.trunk.n_params
        b = a + self.policy_head.n_params
        self.trunk.set_params(theta[:a])
        self.policy_head.set_params(theta[a:b])
        self.value_head.set_params(theta[b:])

    def clone(self) -> "TwoHeadNet":
        out = TwoHeadNet.__new__(TwoHeadNet)
        out.obs_dim = self.obs_dim
        out.n_actions = self.n_actions
        out.hidden = self.hidden
        out.trunk = self.trunk.clone()
        out.policy_head = self.policy_head.clone()
        out.value_head = self.value_head.clone()
        return out

    def forward(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (logits of shape (n, A), values of shape (n,))."""
        h = self.trunk.forward(obs)
        logits = self.policy_head.forward(h)
        values = self.value_head.forward(h)
        return logits, values[:, 0]

    def backward(self, logits_grad: np.ndarray, values_grad: np.ndarray) -> np.ndarray:
        """Flat-parameter gradient given upstream gradients on both heads."""
        g_policy = self.policy_head.backward(logits_grad)
        g_value = self.value_head.backward(np.asarray(values_grad).reshape(-1, 1))
        # both heads read the same trunk output, so their input-grads add
        g_trunk = self.trunk.backward(self.policy_head.input_grad + self.value_head.input_grad)
        return np.concatenate([g_trunk, g_policy, g_value])


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def ensure(self, n: int) -> None:
        if self.m is None:
            self.m = np.zeros(n)
            self.v = np.zeros(n)
        elif self.m.shape != (n,):
            raise ShapeMismatch(f"optimizer state sized {self.m.shape}, params {n}")


def adam_update(state: AdamState, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected adaptive-moment step; returns the updated parameters."""
    if theta.shape != grad.shape:
        raise ShapeMismatch(f"theta {theta.shape} vs grad {grad.shape}")
    _require_finite(grad, "gradient")
    state.ensure(theta.size)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Categorical:
    """Distribution over the last axis of a logits batch, numerically stabilized."""

    def __init__(self, logits: np.ndarray):
        logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        _require_finite(logits, "logits")
        z = logits - logits.max(axis=-1, keepdims=True)
        ez = np.exp(z)
        norm = ez.sum(axis=-1, keepdims=True)
        self.probs = ez / norm
        self.log_probs = z - np.log(norm)

    def log_prob(self, actions: np.ndarray) -> np.ndarray:
        actions = np.atleast_1d(np.asarray(actions, dtype=np.intp))
        return self.log_probs[np.arange(len(actions)), actions]

    def entropy(self) -> np.ndarray:
        return -(self.probs * self.log_probs).sum(axis=-1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF sampling, one uniform draw per row."""
        u = rng.random(self.probs.shape[0])
        cdf = np.cumsum(self.probs, axis=-1)
        return np.minimum((u[:, None] > cdf).sum(axis=-1),
                          self.probs.shape[1] - 1).astype(np.intp)


# -- binary parameter format ---------------------------------------------


def _pack_array(arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return struct.pack("<Q", data.size) + data.tobytes()


def _unpack_array(buf: bytes, off: int) -> tuple[np.ndarray, int]:
    (n,) = struct.unpack_from("<Q", buf, off)
    off += 8
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64)
    return arr, off + 8 * n


def serialize_net(net: MLP | TwoHeadNet, opt: AdamState | None = None) -> bytes:
    """MAGIC, architecture header, little-endian float64 params, optimizer state."""
    if isinstance(net, TwoHeadNet):
        arch, sizes = _ARCH_TWO_HEAD, [net.obs_dim, *net.hidden, net.n_actions]
    elif isinstance(net, MLP):
        arch, sizes = _ARCH_MLP, net.layer_sizes
    else:
        raise ShapeMismatch(f"cannot serialize {type(net).__name__}")
    out = [MAGIC, struct.pack("<II", arch, len(sizes)),
           struct.pack(f"<{len(sizes)}I", *sizes), _pack_array(net.get_params())]
    if opt is None:
        out.append(struct.pack("<B", 0))
    else:
        opt.ensure(net.n_params)
        out.append(struct.pack("<B", 1))
        out.append(struct.pack("<Qdddd", opt.step, opt.lr, opt.beta1, opt.beta2, opt.eps))
        out.append(_pack_array(opt.m))
        out.append(_pack_array(opt.v))
    return b"".join(out)


def deserialize_net(buf: bytes, off: int = 0) -> tuple[MLP | TwoHeadNet, AdamState | None, int]:
    """Inverse of serialize_net; returns (net, optimizer-or-None, bytes consumed)."""
    if buf[off:off + len(MAGIC)] != MAGIC:
        raise ValueError("bad magic: not a PPDNET1 parameter blob")
    off += len(MAGIC)
    arch, n_sizes = struct.unpack_from("<II", buf, off)
    off += 8
    sizes = list(struct.unpack_from(f"<{n_sizes}I", buf, off))
    off += 4 * n_sizes
    if arch == _ARCH_TWO_HEAD:
        net: MLP | TwoHeadNet = TwoHeadNet(sizes[0], sizes[-1], hidden=tuple(sizes[1:-1]))
    elif arch == _ARCH_MLP:
        net = MLP(sizes)
    else:
        raise ValueError(f"unknown architecture tag {arch}")
    theta, off = _unpack_array(buf, off)
    net.set_params(theta)
    (has_opt,) = struct.unpack_from("<B", buf, off)
    off += 1
    opt = None
    if has_opt:
        step, lr, b1, b2, eps = struct.unpack_from("<Qdddd", buf, off)
        off += 8 + 4 * 8
        m, off = _unpack_array(buf, off)
        v, off = _unpack_array(buf, off)
        opt = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=step, m=m, v=v)
    return net, opt, off
