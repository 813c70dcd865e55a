"""Dense float64 tensors with reverse-mode automatic differentiation.

The operator set is deliberately small: elementwise arithmetic, exp/log,
relu/softplus/clamp, full reductions, SAME-padded (optionally dilated)
2-D convolution and 2x2 max-pooling. Broadcasting is restricted to
scalar-with-tensor; any other shape mixing raises ValueError so that every
gradient path stays auditable.
"""

import numpy as np

__all__ = ["Tensor", "conv2d", "maxpool2"]


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


class Tensor:
    """A numpy-backed value node in a dynamically built computation graph.

    ``requires_grad`` marks trainable leaves; it propagates to every value
    derived from one. Gradients are accumulated into ``grad`` (a numpy
    array of the same shape) by :meth:`backward`.
    """

    __slots__ = ("data", "parents", "requires_grad", "grad", "_backward_fn")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad = None
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def numpy(self):
        """The underlying array. Treat it as read-only."""
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar node.

        Populates ``grad`` on every reachable tensor with ``requires_grad``.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar node, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- elementwise arithmetic ---------------------------------------------

    @staticmethod
    def _coerce(value):
        if isinstance(value, Tensor):
            return value
        arr = np.asarray(value, dtype=np.float64)
        return Tensor(arr)

    @staticmethod
    def _check_binary(a, b):
        if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
            raise ValueError(
                f"shape mismatch {a.data.shape} vs {b.data.shape}; "
                "only scalar-with-tensor broadcasting is supported"
            )

    @staticmethod
    def _fit(grad, ref):
        # Undo scalar broadcasting so the gradient matches the operand shape.
        if grad.shape == ref.shape:
            return grad
        return np.sum(grad).reshape(ref.shape)

    def __add__(self, other):
        other = Tensor._coerce(other)
        Tensor._check_binary(self, other)
        out = Tensor(self.data + other.data, (self, other))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(Tensor._fit(grad, self.data))
            if other.requires_grad:
                other._accumulate(Tensor._fit(grad, other.data))

        out._backward_fn = backward_fn
        return out

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        out = Tensor(-self.data, (self,))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(-grad)

        out._backward_fn = backward_fn
        return out

    def __sub__(self, other):
        return self.__add__(Tensor._coerce(other).__neg__())

    def __rsub__(self, other):
        return Tensor._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = Tensor._coerce(other)
        Tensor._check_binary(self, other)
        out = Tensor(self.data * other.data, (self, other))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(Tensor._fit(grad * other.data, self.data))
            if other.requires_grad:
                other._accumulate(Tensor._fit(grad * self.data, other.data))

        out._backward_fn = backward_fn
        return out

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        return self.__mul__(Tensor._coerce(other).__pow__(-1.0))

    def __rtruediv__(self, other):
        return Tensor._coerce(other).__truediv__(self)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ValueError("exponent must be a plain number")
        out = Tensor(self.data ** exponent, (self,))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(grad * exponent * self.data ** (exponent - 1))

        out._backward_fn = backward_fn
        return out

    # -- unary maps ----------------------------------------------------------

    def exp(self):
        out = Tensor(np.exp(self.data), (self,))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(grad * out.data)

        out._backward_fn = backward_fn
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(grad / self.data)

        out._backward_fn = backward_fn
        return out

    def relu(self):
        mask = self.data > 0
        out = Tensor(self.data * mask, (self,))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(grad * mask)

        out._backward_fn = backward_fn
        return out

    def softplus(self):
        """log(1 + exp(x)), computed without overflow."""
        out = Tensor(np.logaddexp(0.0, self.data), (self,))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(grad * _sigmoid(self.data))

        out._backward_fn = backward_fn
        return out

    def clamp(self, lo, hi):
        """Clip to [lo, hi]; the gradient is passed through inside the band."""
        if not lo < hi:
            raise ValueError(f"clamp needs lo < hi, got [{lo}, {hi}]")
        mask = (self.data >= lo) & (self.data <= hi)
        out = Tensor(np.clip(self.data, lo, hi), (self,))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(grad * mask)

        out._backward_fn = backward_fn
        return out

    # -- reductions -----------------------------------------------------------

    def sum(self):
        out = Tensor(np.sum(self.data), (self,))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(np.full_like(self.data, float(grad)))

        out._backward_fn = backward_fn
        return out

    def mean(self):
        n = self.data.size
        out = Tensor(np.mean(self.data), (self,))

        def backward_fn(grad):
            if self.requires_grad:
                self._accumulate(np.full_like(self.data, float(grad) / n))

        out._backward_fn = backward_fn
        return out


# -- spatial operators -------------------------------------------------------


def _correlate_same(x, w, dilation):
    """SAME-padded cross-correlation of (C,H,W) with (O,C,k,k) -> (O,H,W)."""
    o, c, k, _ = w.shape
    h, wd = x.shape[1], x.shape[2]
    pad = (k - 1) * dilation // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((o, h, wd))
    for u in range(k):
        for v in range(k):
            window = xp[:, u * dilation:u * dilation + h, v * dilation:v * dilation + wd]
            out += np.tensordot(w[:, :, u, v], window, axes=([1], [0]))
    return out


def _kernel_grad(x, grad_out, k, dilation):
    """Gradient of the SAME correlation w.r.t. the kernel."""
    o = grad_out.shape[0]
    c, h, wd = x.shape
    pad = (k - 1) * dilation // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    gw = np.empty((o, c, k, k))
    for u in range(k):
        for v in range(k):
            window = xp[:, u * dilation:u * dilation + h, v * dilation:v * dilation + wd]
            gw[:, :, u, v] = np.tensordot(grad_out, window, axes=([1, 2], [1, 2]))
    return gw


def conv2d(x, kernel, bias=None, dilation=1):
    """2-D convolution with SAME zero padding and optional dilation.

    ``x`` is (C_in, H, W), ``kernel`` is (C_out, C_in, k, k) with odd k,
    ``bias`` (C_out,) is added per output channel. Output spatial size
    equals input spatial size for every supported kernel/dilation.
    """
    if x.ndim != 3:
        raise ValueError(f"conv2d input must be (C,H,W), got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ValueError(f"conv2d kernel must be (O,C,k,k), got shape {kernel.shape}")
    if kernel.shape[1] != x.shape[0]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[0]} channels, kernel expects {kernel.shape[1]}"
        )
    k = kernel.shape[2]
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {k}")
    if not isinstance(dilation, int) or dilation < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")
    if bias is not None and bias.shape != (kernel.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {kernel.shape[0]} output channels")

    out_data = _correlate_same(x.data, kernel.data, dilation)
    if bias is not None:
        out_data += bias.data[:, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    out = Tensor(out_data, parents)

    def backward_fn(grad):
        if x.requires_grad:
            # Transposing channels and rotating the taps by 180 degrees turns
            # the SAME correlation into its own adjoint.
            flipped = kernel.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
            x._accumulate(_correlate_same(grad, flipped, dilation))
        if kernel.requires_grad:
            kernel._accumulate(_kernel_grad(x.data, grad, k, dilation))
        if bias is not None and bias.requires_grad:
            bias._accumulate(grad.sum(axis=(1, 2)))

    out._backward_fn = backward_fn
    return out


def maxpool2(x):
    """2x2 max-pooling with stride 2 over (C,H,W); H and W must be even.

    The backward pass routes the gradient to the first maximum of each block
    in row-major order.
    """
    if x.ndim != 3:
        raise ValueError(f"maxpool2 input must be (C,H,W), got shape {x.shape}")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(
        c, h // 2, w // 2, 4
    )
    idx = blocks.argmax(axis=3)
    out = Tensor(np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0], (x,))

    def backward_fn(grad):
        if x.requires_grad:
            g = np.zeros_like(blocks)
            np.put_along_axis(g, idx[..., None], grad[..., None], axis=3)
            x._accumulate(
                g.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
            )

    out._backward_fn = backward_fn
    return out
