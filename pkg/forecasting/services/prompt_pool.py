"""
Dynamic prompt pool

A shared pool of M learnable (key, value) prompts. Each sensor's embedded
window is scored against every key with additive attention, the top-K values
are retrieved and concatenated with the window along the feature axis, then
projected back to width d.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .numerics import (
    Linear, Module, Parameter, Tensor, concat, detach, matmul, mean, reshape, take, take_along, tanh,
    transpose,
)

logger = logging.getLogger(__name__)

DUPLICATE_COSINE = 0.999


class InputEmbedding(Module):
    """
    Shared projection of each window step's (value, observed-flag) pair to width d

    Args:
        d: Embedding width
        rng: Init generator
    """

    def __init__(self, d: int, rng: np.random.Generator):
        self.d = d
        self.proj = Linear(2, d, rng)

    def forward(self, values: np.ndarray, mask: np.ndarray) -> Tensor:
        features = np.stack([np.asarray(values, dtype=np.float64), np.asarray(mask, dtype=np.float64)], axis=-1)
        return self.proj(Tensor(features))


@dataclass
class RetrievalResult:
    """Top-K selection for every query in a batch

    indices: (..., K) pool indices, highest score first
    scores: (..., K) selected scores (differentiable)
    values: (..., K, W, d) selected prompt values (differentiable)
    """

    indices: np.ndarray
    scores: Tensor
    values: Tensor

    @property
    def k(self) -> int:
        return int(self.indices.shape[-1])


def _distinct_rows(rng: np.random.Generator, rows: int, d: int, std: float) -> np.ndarray:
    keys = rng.normal(0.0, std, size=(rows, d))
    for _ in range(100):
        unit = keys / np.maximum(np.linalg.norm(keys, axis=1, keepdims=True), 1e-12)
        cosine = unit @ unit.T
        np.fill_diagonal(cosine, -1.0)
        clashes = np.unique(np.argwhere(cosine > DUPLICATE_COSINE)[:, 0])
        if clashes.size == 0:
            return keys
        keys[clashes] = rng.normal(0.0, std, size=(clashes.size, d))
    raise ConfigurationError(f"could not draw {rows} distinct prompt keys of width {d}")


class PromptPool(Module):
    """
    M (key, value) prompts with additive-attention score matching

    score(S, k) = mean over window steps w of  w_v . tanh(s_w W_q + k W_k)

    Args:
        pool_size: M
        top_k: K, 1 <= K <= M
        window: W (rows of each prompt value)
        d: Embedding width
        rng: Init generator
    """

    def __init__(self, pool_size: int, top_k: int, window: int, d: int, rng: np.random.Generator):
        if pool_size < 1:
            raise ConfigurationError(f"prompt pool size must be positive, got {pool_size}")
        if not 1 <= top_k <= pool_size:
            raise ConfigurationError(f"top_k must be in [1, {pool_size}], got {top_k}")

        self.pool_size = pool_size
        self.top_k = top_k
        self.window = window
        self.d = d

        std = 1.0 / np.sqrt(d)
        self.keys = Parameter(_distinct_rows(rng, pool_size, d, std))
        self.values = Parameter(rng.normal(0.0, std, size=(pool_size, window, d)))
        self.score_query = Linear(d, d, rng, bias=False)
        self.score_key = Linear(d, d, rng, bias=False)
        self.score_vector = Parameter(rng.normal(0.0, std, size=d))
        self.output = Linear((top_k + 1) * d, d, rng, bias=False)
        self.straight_through = True

        logger.info("prompt pool M=%d K=%d: scoring with per-step additive attention (W_q is d x d), "
                    "averaged over %d window steps", pool_size, top_k, window)

    def _check_query(self, query: Tensor):
        if query.ndim < 2 or query.shape[-2:] != (self.window, self.d):
            raise ShapeError(f"prompt query must end in ({self.window}, {self.d}), got {query.shape}")

    def score_all(self, query) -> Tensor:
        """Scores of every pool key for every query: (..., W, d) -> (..., M)"""

        query = query if isinstance(query, Tensor) else Tensor(query)
        self._check_query(query)

        q = self.score_query(query)
        q = reshape(q, q.shape[:-2] + (1,) + q.shape[-2:])
        k = reshape(self.score_key(self.keys), (self.pool_size, 1, self.d))
        hidden = tanh(q + k)
        per_step = matmul(hidden, self.score_vector)
        return mean(per_step, axis=-1)

    def retrieve(self, query, indices: np.ndarray = None) -> RetrievalResult:
        """
        Hard top-K selection; ties go to the lower pool index

        Args:
            query: (..., W, d) embedded windows
            indices: Optional fixed selection (..., K) that bypasses ranking
        """

        scores = self.score_all(query)
        if indices is None:
            order = np.argsort(-scores.data, axis=-1, kind='stable')
            indices = order[..., :self.top_k]
        else:
            indices = np.asarray(indices, dtype=np.int64)
            if indices.shape != scores.shape[:-1] + (self.top_k,):
                raise ShapeError(f"fixed indices shape {indices.shape} does not match "
                                 f"{scores.shape[:-1] + (self.top_k,)}")

        return RetrievalResult(
            indices=indices,
            scores=take_along(scores, indices, axis=-1),
            values=take(self.values, indices),
        )

    def assemble(self, query, result: RetrievalResult) -> Tensor:
        return assemble(query, result, self.output, self.straight_through)

    def forward(self, query, indices: np.ndarray = None):
        result = self.retrieve(query, indices)
        return self.assemble(query, result), result


def score(query, key, pool: PromptPool) -> Tensor:
    """Score of one (W, d) query against one d-vector key with the pool's parameters"""

    query = query if isinstance(query, Tensor) else Tensor(query)
    key = key if isinstance(key, Tensor) else Tensor(key)
    if query.ndim != 2 or key.shape != (query.shape[1],) or query.shape[1] != pool.d:
        raise ShapeError(f"score expects query (W, {pool.d}) and key ({pool.d},), got {query.shape} and {key.shape}")
    hidden = tanh(pool.score_query(query) + pool.score_key(key))
    return mean(matmul(hidden, pool.score_vector))


def retrieve_top_k(query, pool: PromptPool) -> RetrievalResult:
    return pool.retrieve(query)


def assemble(query, result: RetrievalResult, output: Linear, straight_through: bool = True) -> Tensor:
    """
    [V_1; ...; V_K; S] @ W_o per window step

    Each selected value is multiplied by a straight-through gate
    (score - stop_grad(score) + 1), which is exactly 1 in the forward pass but
    routes gradient into the scores of the selected entries. With
    ``straight_through=False`` the values pass ungated, so the output is a
    smooth function of the parameters (finite-difference checks need that).

    Raises:
        ShapeError: If K does not match the width expected by ``output``
    """

    query = query if isinstance(query, Tensor) else Tensor(query)
    k = result.k
    d = query.shape[-1]
    if output.d_in != (k + 1) * d:
        raise ShapeError(f"output projection expects width {output.d_in}, got (K+1)*d = {(k + 1) * d}")

    gated = result.values
    if straight_through:
        gate = (result.scores - detach(result.scores)) + 1.0
        gated = gated * reshape(gate, gate.shape + (1, 1))

    nd = gated.ndim
    per_step = transpose(gated, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    prompts = reshape(per_step, per_step.shape[:-2] + (k * d,))
    return output(concat([prompts, query], axis=-1))


__all__ = ['InputEmbedding', 'PromptPool', 'RetrievalResult', 'assemble', 'retrieve_top_k', 'score']
