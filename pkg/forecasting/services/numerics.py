"""
Dense tensor numerics with reverse-mode gradients

Tensors wrap float64 numpy arrays. Every op records its parents and a backward
rule on the output tensor; ``Tensor.backward`` walks the resulting graph in
reverse topological order. The graph is rebuilt on every forward pass.
"""

import hashlib
import logging
import math
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, GradCheckError, OptimizerError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:
    """
    A float64 array that can take part in gradient computation

    Args:
        data: Array-like values (copied to float64)
        requires_grad: Whether gradients should be accumulated into ``grad``
        name: Optional label used in error messages
    """

    __slots__ = ('data', 'requires_grad', 'grad', 'name', '_parents', '_backward')

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = None,
                 _parents: Tuple['Tensor', ...] = (), _backward: Callable = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def backward(self, grad: ArrayLike = None):
        """
        Accumulate d(self)/d(leaf) into every leaf tensor that requires grad

        Contributions from all consumers of a node are summed before they are
        propagated, so each leaf's ``grad`` is updated exactly once per call.
        """
        if not self.requires_grad:
            return

        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(grad, dtype=np.float64)
            if seed.shape != self.shape:
                raise ShapeError(f"seed gradient shape {seed.shape} does not match tensor shape {self.shape}")

        order = _topological_order(self)
        pending: Dict[int, np.ndarray] = {id(self): seed}

        for node in reversed(order):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue

            if not node._parents:
                node.grad = node_grad.copy() if node.grad is None else node.grad + node_grad
                continue

            parent_grads = node._backward(node_grad)
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad

    # Operator sugar

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


class Parameter(Tensor):
    """A leaf tensor owned by a Module; ``requires_grad`` doubles as the trainable flag"""

    __slots__ = ()

    def __init__(self, data: ArrayLike, trainable: bool = True, name: str = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable, name=name)

    @property
    def trainable(self) -> bool:
        return self.requires_grad


def _topological_order(root: Tensor) -> List[Tensor]:
    """Iterative post-order DFS over nodes that require grad"""

    order = []
    visited = set()
    stack = [(root, False)]

    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    return order


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``"""

    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# Elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


# Linear algebra

def matmul(a, b) -> Tensor:
    """
    Batched matrix product following numpy.matmul broadcasting

    A 1-D right operand is treated as a vector (the trailing axis is contracted
    and dropped), which is how attention pooling applies its scoring vector.
    """

    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 1:
        raise ShapeError(f"matmul needs a matrix on the left, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

    out = np.matmul(a.data, b.data)

    if b.ndim == 1:
        def backward(g):
            grad_a = g[..., None] * b.data
            grad_b = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0)
            return grad_a, grad_b
    else:
        def backward(g):
            grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
            grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
            return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _result(out, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """
    y = x @ W (+ b), applied over the trailing axis of ``x``

    Raises:
        ShapeError: If the trailing width of ``x`` differs from the rows of ``W``
    """

    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.ndim < 1 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear shape mismatch: x {x.shape} vs W {weight.shape}")
    if bias is not None and as_tensor(bias).shape != (weight.shape[1],):
        raise ShapeError(f"linear bias shape {as_tensor(bias).shape} does not match W {weight.shape}")

    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, x.shape[0]))
    y = matmul(x, weight)
    if bias is not None:
        y = add(y, bias)
    if squeeze:
        y = reshape(y, (weight.shape[1],))
    return y


# Reductions and shape ops

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return div(sum(a, axis=axis, keepdims=keepdims), float(count))


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def transpose(a, axes: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(a, tuple(axes))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tensors, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in tensors]
    return concat(expanded, axis=axis)


def index(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.data[key]

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)

    return _result(np.array(out), (a,), backward)


def take(a, indices: np.ndarray) -> Tensor:
    """Gather rows of ``a`` along axis 0; repeated indices scatter-add on backward"""

    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, indices, g)
        return (grad,)

    return _result(a.data[indices], (a,), backward)


def take_along(a, indices: np.ndarray, axis: int = -1) -> Tensor:
    """numpy.take_along_axis with gradient; indices must be unique along ``axis``"""

    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, indices, g, axis=axis)
        return (grad,)

    return _result(np.take_along_axis(a.data, indices, axis=axis), (a,), backward)


def detach(a) -> Tensor:
    return Tensor(as_tensor(a).data)


# Nonlinearities

def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def abs(a) -> Tensor:  # noqa: A001
    """|a| with subgradient 0 at a == 0"""
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    # d/dx log(1 + e^x) = sigmoid(x), written to stay finite for large |x|
    slope = np.exp(a.data - out)
    return _result(out, (a,), lambda g: (g * slope,))


def softmax(a, axis: int = -1) -> Tensor:
    """Row-stochastic softmax with max-subtraction"""

    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward)


def dropout(a, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity at eval time or when rate is 0"""

    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(a.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(a, Tensor(keep))


# Modules

class Module:
    """
    Minimal parameter container

    Parameters are discovered by walking instance attributes: ``Parameter``
    values, nested ``Module`` values and lists of modules.
    """

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for attr, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield attr, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, item in enumerate(value):
                    yield f"{attr}.{i}", item

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(prefix=f"{full}.")

    def parameters(self, trainable_only: bool = False) -> List[Parameter]:
        return [p for _, p in self.named_parameters() if p.trainable or not trainable_only]

    def named_modules(self, prefix: str = '') -> Iterator[Tuple[str, 'Module']]:
        yield prefix.rstrip('.'), self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(prefix=f"{prefix}{name}.")

    def replace_module(self, dotted_name: str, new: 'Module'):
        """Swap the submodule at ``dotted_name`` (list indices allowed) for ``new``"""

        *path, last = dotted_name.split('.')
        owner = self
        for part in path:
            owner = owner[int(part)] if isinstance(owner, list) else getattr(owner, part)
        if isinstance(owner, list):
            owner[int(last)] = new
        else:
            setattr(owner, last, new)

    def num_parameters(self, trainable_only: bool = False) -> int:
        return int(np.sum([p.size for p in self.parameters(trainable_only)], dtype=np.int64))

    def train(self, mode: bool = True) -> 'Module':
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"state entry {name!r} has shape {value.shape}, expected {p.shape}")
            p.data = value.copy()


def glorot_uniform(rng: np.random.Generator, d_in: int, d_out: int, shape: Tuple[int, ...] = None) -> np.ndarray:
    limit = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=shape or (d_in, d_out))


class Linear(Module):
    """
    y = x @ W + b over the trailing axis

    Args:
        d_in: Input width
        d_out: Output width
        rng: Generator used for Glorot-uniform weight init
        bias: Whether to add a (zero-initialised) bias
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Parameter(glorot_uniform(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x) -> Tensor:
        return linear(x, self.weight, self.bias)


# Seeding

class SeedBank:
    """
    Seedable source of independent generators, one per label

    ``SeedBank(7).generator('dropout')`` always yields the same stream, no
    matter how many other labels were drawn before it.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._generators: Dict[str, np.random.Generator] = {}

    @staticmethod
    def _label_words(label: str) -> List[int]:
        digest = hashlib.sha256(label.encode('utf-8')).digest()
        return [int.from_bytes(digest[i:i + 4], 'little') for i in range(0, 16, 4)]

    def fresh(self, label: str) -> np.random.Generator:
        """A new generator for ``label`` positioned at the start of its stream"""
        return np.random.default_rng(np.random.SeedSequence([self.seed, *self._label_words(label)]))

    def generator(self, label: str) -> np.random.Generator:
        """The shared generator for ``label`` (stateful across calls)"""
        if label not in self._generators:
            self._generators[label] = self.fresh(label)
        return self._generators[label]

    def state(self) -> Dict[str, dict]:
        return {label: gen.bit_generator.state for label, gen in self._generators.items()}

    def restore(self, state: Dict[str, dict]):
        for label, bit_state in state.items():
            self.generator(label).bit_generator.state = bit_state


# Gradient checking

def grad_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-4) -> float:
    """
    Compare analytic gradients with central finite differences

    Uses the fourth-order central stencil
    (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h so that a comfortable step
    keeps both truncation and cancellation error far below the tolerances.

    Args:
        loss_fn: Deterministic function returning a scalar Tensor
        params: Leaf tensors to perturb (must have requires_grad)
        eps: Step size in [1e-7, 1e-3]

    Returns:
        float: max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)

    Raises:
        GradCheckError: If the loss is not finite
    """

    if not 1e-7 <= eps <= 1e-3:
        raise ConfigurationError(f"grad_check eps must be in [1e-7, 1e-3], got {eps}")
    params = list(params)

    def evaluate() -> float:
        value = loss_fn()
        if value.size != 1:
            raise GradCheckError(f"loss must be scalar, got shape {value.shape}")
        scalar = float(value.data)
        if not math.isfinite(scalar):
            raise GradCheckError(f"loss is not finite: {scalar}")
        return scalar

    for p in params:
        p.grad = None
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        raise GradCheckError(f"loss is not finite: {loss.data}")
    loss.backward()

    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        for idx in np.ndindex(*p.shape):
            original = p.data[idx]
            samples = []
            for step in (2.0, 1.0, -1.0, -2.0):
                p.data[idx] = original + step * eps
                samples.append(evaluate())
            p.data[idx] = original
            numeric = (-samples[0] + 8.0 * samples[1] - 8.0 * samples[2] + samples[3]) / (12.0 * eps)
            a = float(analytic[idx])
            err = math.fabs(a - numeric) / max(math.fabs(a), math.fabs(numeric), 1e-8)
            worst = max(worst, err)

    return worst


# Optimisation

class Adam:
    """
    Adam with bias-corrected moments and decoupled weight decay

    Args:
        named_params: (name, Parameter) pairs; frozen parameters are skipped
        lr: Learning rate (> 0)
        betas: (beta1, beta2)
        eps: Denominator epsilon
        weight_decay: Decoupled decay coefficient, applied as p *= (1 - lr * wd)
    """

    def __init__(self, named_params: Iterable[Tuple[str, Parameter]], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.params = [(name, p) for name, p in named_params if p.trainable]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise OptimizerError(f"non-finite gradient for parameter {name!r}")

        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t

        for name, p in self.params:
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            if grad.shape != p.shape:
                raise ShapeError(f"gradient shape {grad.shape} does not match parameter {name!r} {p.shape}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            updated = p.data
            if self.weight_decay > 0:
                updated = updated * (1.0 - self.lr * self.weight_decay)
            p.data = updated - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        """Step, learning rate and copies of both moment tables, enough to resume exactly"""
        return {
            'step': self.step_count,
            'lr': self.lr,
            'm': {name: value.copy() for name, value in self.m.items()},
            'v': {name: value.copy() for name, value in self.v.items()},
        }

    def load_state_dict(self, state: dict):
        names = {name for name, _ in self.params}
        for table in ('m', 'v'):
            if set(state[table]) != names:
                raise ConfigurationError(f"optimizer state {table!r} covers {sorted(state[table])}, "
                                         f"expected {sorted(names)}")
        shapes = {name: p.shape for name, p in self.params}
        for name in names:
            for table in ('m', 'v'):
                if np.shape(state[table][name]) != shapes[name]:
                    raise ShapeError(f"optimizer state {table}[{name!r}] has shape {np.shape(state[table][name])}, "
                                     f"parameter has {shapes[name]}")
        self.step_count = int(state['step'])
        self.lr = float(state['lr'])
        self.m = {name: np.array(value, dtype=np.float64) for name, value in state['m'].items()}
        self.v = {name: np.array(value, dtype=np.float64) for name, value in state['v'].items()}
