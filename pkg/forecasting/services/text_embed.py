"""
Text-level embeddings

Token embeddings for every (sensor, window step) cell come from a provider:
a JSON fixture, a deterministic offline stub, or an HTTP embedding service.
Softmax attention pooling with a trainable vector u collapses the m tokens of
each cell into one text embedding.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import requests

from .errors import (
    ConfigurationError, FixtureFormatError, FixtureMissingError, FixtureShapeError, ProviderError,
    ProviderPayloadError, ProviderStatusError, ProviderTimeoutError, ShapeError,
)
from .numerics import Module, Parameter, Tensor, as_tensor, matmul, reshape, softmax, sum as tsum

logger = logging.getLogger(__name__)

PROVIDER_KINDS = ('stub', 'fixture', 'http', 'none')
DEFAULT_TEMPLATE = (
    "Sensor {sensor}, window steps {start} to {end}, readings up to step {step}: {values}. "
    "Describe the trend."
)

# Stub bucket edges (standardized units)
MEAN_BUCKET_WIDTH = 0.5
MEAN_BUCKET_LIMIT = 8
SLOPE_TOLERANCE = 1e-9


@dataclass
class TextProviderConfig:
    """Where token embeddings come from; ``template`` is only used by the HTTP provider"""

    kind: str = 'stub'
    d_t: int = 16
    tokens: int = 4
    seed: int = 0
    fixture: str = ''
    endpoint: str = ''
    model: str = 'description-embedder'
    max_tokens: int = 64
    timeout: float = 10.0
    retries: int = 1
    fallback: bool = True
    workers: int = 4
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ConfigurationError(f"text_provider.kind must be one of {PROVIDER_KINDS}, got {self.kind!r}")
        if self.d_t < 1 or self.tokens < 1:
            raise ConfigurationError(f"text_provider.d_t and tokens must be >= 1, got {self.d_t}, {self.tokens}")


# Pooling

class AttentionPool(Module):
    """
    Holds the trainable scoring vector u

    Args:
        d_t: Token embedding width
        rng: Init generator
    """

    def __init__(self, d_t: int, rng: np.random.Generator):
        self.d_t = d_t
        self.u = Parameter(rng.normal(0.0, 1.0 / np.sqrt(d_t), size=d_t))

    def forward(self, tokens) -> Tensor:
        return attention_pool(tokens, self.u)


def pooling_weights(tokens, u) -> Tensor:
    """alpha = softmax over the m tokens of u . h_i, shape (..., m)"""

    tokens, u = as_tensor(tokens), as_tensor(u)
    if tokens.ndim < 2 or u.ndim != 1 or tokens.shape[-1] != u.shape[0]:
        raise ShapeError(f"pooling expects tokens (..., m, {u.shape[0] if u.ndim == 1 else '?'}) "
                         f"and u (d_t,), got {tokens.shape} and {u.shape}")
    return softmax(matmul(tokens, u), axis=-1)


def attention_pool(tokens, u) -> Tensor:
    """
    Softmax attention pooling over the token axis

    Args:
        tokens: (..., m, d_t) token embeddings, typically N x W x m x d_t
        u: (d_t,) scoring vector

    Returns:
        Tensor: (..., d_t), each row a convex combination of its cell's tokens
    """

    tokens = as_tensor(tokens)
    alpha = pooling_weights(tokens, u)
    weighted = tokens * reshape(alpha, alpha.shape + (1,))
    return tsum(weighted, axis=-2)


# Stub provider

def _window_code(prefix: np.ndarray) -> tuple:
    """Discretized statistics of a window prefix"""

    mean_bucket = int(np.clip(np.floor(prefix.mean() / MEAN_BUCKET_WIDTH), -MEAN_BUCKET_LIMIT, MEAN_BUCKET_LIMIT))
    delta = prefix[-1] - prefix[0]
    slope_sign = 0 if abs(delta) <= SLOPE_TOLERANCE else (1 if delta > 0 else -1)
    variance = prefix.var()
    variance_bucket = 0 if variance <= 0 else int(np.clip(np.floor(np.log2(variance)) + 12, 0, 24))
    return (
        mean_bucket + MEAN_BUCKET_LIMIT,
        slope_sign + 1,
        int(np.argmin(prefix)),
        int(np.argmax(prefix)),
        variance_bucket,
        prefix.size,
    )


@lru_cache(maxsize=65536)
def _code_embedding(seed: int, code: tuple, m: int, d_t: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, *code]))
    out = rng.uniform(-1.0, 1.0, size=(m, d_t))
    out.setflags(write=False)
    return out


def stub_embed(window: Sequence[float], d_t: int = 16, m: int = 4, seed: int = 0) -> np.ndarray:
    """
    Deterministic pseudo token embeddings for one sensor's window

    Cell w is keyed by the statistics of window[:w + 1] (mean bucket, slope
    sign, argmin/argmax position, variance bucket), expanded into m x d_t
    uniform values in [-1, 1] by a generator seeded with that code.

    Returns:
        np.ndarray: (W, m, d_t)
    """

    if d_t < 1 or m < 1:
        raise ConfigurationError(f"stub_embed needs d_t, m >= 1, got {d_t}, {m}")
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1 or window.size == 0:
        raise ShapeError(f"stub_embed expects a non-empty 1-D window, got shape {window.shape}")

    return np.stack([
        _code_embedding(int(seed), _window_code(window[:w + 1]), m, d_t) for w in range(window.size)
    ])


# Fixtures

def _shape_of(document: dict, path: Path) -> tuple:
    shape = document.get('shape')
    if not isinstance(shape, list) or len(shape) != 4 or not all(isinstance(s, int) and s > 0 for s in shape):
        raise FixtureFormatError(f"{path}: 'shape' must be four positive integers [N, W, m, d_t], got {shape!r}")
    return tuple(shape)


def load_fixture(path) -> np.ndarray:
    """
    Load an N x W x m x d_t token-embedding fixture

    Accepts either a flat row-major ``data`` array or a ``cells`` list of
    {sensor, step, embeddings} entries.

    Raises:
        FixtureMissingError: File does not exist
        FixtureFormatError: Not a JSON object, or fields have the wrong type
        FixtureShapeError: Data length or cell shapes disagree with ``shape``
    """

    path = Path(path)
    if not path.is_file():
        raise FixtureMissingError(f"fixture not found: {path}")

    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FixtureFormatError(f"{path}: not a valid JSON document ({exc})") from exc
    if not isinstance(document, dict):
        raise FixtureFormatError(f"{path}: top level must be an object")

    shape = _shape_of(document, path)

    if 'data' in document:
        data = document['data']
        if not isinstance(data, list):
            raise FixtureFormatError(f"{path}: 'data' must be a flat array of numbers")
        expected = int(np.prod(shape))
        if len(data) != expected:
            raise FixtureShapeError(f"{path}: shape {list(shape)} needs {expected} values, got {len(data)}")
        try:
            values = np.asarray(data, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise FixtureFormatError(f"{path}: 'data' holds non-numeric values") from exc
        if values.ndim != 1:
            raise FixtureFormatError(f"{path}: 'data' must be flat")
        return values.reshape(shape)

    if 'cells' in document:
        return _load_cells(document['cells'], shape, path)

    raise FixtureFormatError(f"{path}: expected a 'data' or 'cells' field")


def _load_cells(cells, shape: tuple, path: Path) -> np.ndarray:
    n, w, m, d_t = shape
    if not isinstance(cells, list):
        raise FixtureFormatError(f"{path}: 'cells' must be an array")

    out = np.zeros(shape)
    seen = np.zeros((n, w), dtype=bool)
    for i, cell in enumerate(cells):
        if not isinstance(cell, dict) or not {'sensor', 'step', 'embeddings'} <= set(cell):
            raise FixtureFormatError(f"{path}: cell {i} needs sensor, step and embeddings")
        sensor, step = cell['sensor'], cell['step']
        if not (isinstance(sensor, int) and isinstance(step, int) and 0 <= sensor < n and 0 <= step < w):
            raise FixtureShapeError(f"{path}: cell {i} index ({sensor}, {step}) outside [{n}, {w}]")
        try:
            block = np.asarray(cell['embeddings'], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise FixtureFormatError(f"{path}: cell {i} embeddings are not a numeric matrix") from exc
        if block.shape != (m, d_t):
            raise FixtureShapeError(f"{path}: cell {i} embeddings have shape {block.shape}, expected {(m, d_t)}")
        out[sensor, step] = block
        seen[sensor, step] = True

    if not seen.all():
        missing = [tuple(int(v) for v in idx) for idx in np.argwhere(~seen)[:5]]
        raise FixtureShapeError(f"{path}: {int((~seen).sum())} cells missing, e.g. {missing}")
    return out


def save_fixture(path, tokens: np.ndarray) -> Path:
    """Write ``tokens`` (N x W x m x d_t) in the flat-data fixture format"""

    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 4:
        raise ShapeError(f"fixtures hold N x W x m x d_t arrays, got shape {tokens.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {'shape': list(tokens.shape), 'data': tokens.ravel().tolist()}
    path.write_text(json.dumps(document), encoding='utf-8')
    return path


# HTTP provider

def http_embed(endpoint: str, prompt_text: str, timeout: float = 10.0, model: str = '',
               max_tokens: int = 64, session: requests.Session = None) -> np.ndarray:
    """
    Fetch one cell's token embeddings from an embedding service

    POSTs {model, prompt, max_tokens} and expects
    {tokens: [str], embeddings: [[float]]}.

    Returns:
        np.ndarray: (m, d_t) with d_t taken from the first row

    Raises:
        ProviderTimeoutError: The request timed out
        ProviderStatusError: Non-2xx response
        ProviderPayloadError: Body is not JSON, or the matrix is empty or ragged
        ProviderError: Any other transport failure
    """

    if not endpoint:
        raise ProviderError("no embedding endpoint configured")

    poster = session or requests
    try:
        response = poster.post(
            endpoint,
            json={'model': model, 'prompt': prompt_text, 'max_tokens': max_tokens},
            timeout=timeout,
        )
    except requests.Timeout as exc:
        raise ProviderTimeoutError(f"embedding request to {endpoint} timed out after {timeout}s") from exc
    except requests.RequestException as exc:
        raise ProviderError(f"embedding request to {endpoint} failed: {exc}") from exc

    if not 200 <= response.status_code < 300:
        raise ProviderStatusError(f"embedding service returned HTTP {response.status_code}")

    try:
        payload = response.json()
    except ValueError as exc:
        raise ProviderPayloadError("embedding response is not JSON") from exc

    rows = payload.get('embeddings') if isinstance(payload, dict) else None
    if not isinstance(rows, list) or not rows:
        raise ProviderPayloadError("embedding response has no embeddings")
    if not all(isinstance(row, list) for row in rows):
        raise ProviderPayloadError("embeddings must be a list of rows")

    d_t = len(rows[0])
    if d_t == 0:
        raise ProviderPayloadError("embedding rows are empty")
    ragged = [i for i, row in enumerate(rows) if len(row) != d_t]
    if ragged:
        raise ProviderPayloadError(f"ragged embedding matrix: row {ragged[0]} has {len(rows[ragged[0]])} "
                                   f"values, expected {d_t}")
    try:
        matrix = np.asarray(rows, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ProviderPayloadError("embedding values are not numeric") from exc
    if not np.all(np.isfinite(matrix)):
        raise ProviderPayloadError("embedding values must be finite")
    return matrix


# Providers

class TextProvider:
    """Produces (B, N, W, m, d_t) token embeddings for a batch of windows"""

    d_t: int
    tokens: int

    def token_embeddings(self, inputs: np.ndarray, anchors: np.ndarray = None,
                         raw_inputs: np.ndarray = None, sensors: Sequence[str] = None) -> np.ndarray:
        raise NotImplementedError


class StubProvider(TextProvider):
    def __init__(self, d_t: int = 16, tokens: int = 4, seed: int = 0):
        self.d_t = d_t
        self.tokens = tokens
        self.seed = seed

    def window_tokens(self, window: np.ndarray) -> np.ndarray:
        """(N, W) standardized window -> (N, W, m, d_t)"""
        return np.stack([stub_embed(row, self.d_t, self.tokens, self.seed) for row in window])

    def token_embeddings(self, inputs, anchors=None, raw_inputs=None, sensors=None) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        return np.stack([self.window_tokens(window) for window in inputs])


class FixtureProvider(TextProvider):
    """The same fixture tensor is applied to every window"""

    def __init__(self, path):
        self.path = Path(path)
        self.tokens_array = load_fixture(self.path)
        _, _, self.tokens, self.d_t = self.tokens_array.shape

    def token_embeddings(self, inputs, anchors=None, raw_inputs=None, sensors=None) -> np.ndarray:
        inputs = np.asarray(inputs)
        n, w = self.tokens_array.shape[:2]
        if inputs.shape[1:] != (n, w):
            raise FixtureShapeError(f"{self.path}: fixture covers {n} sensors x {w} steps, "
                                    f"windows are {inputs.shape[1]} x {inputs.shape[2]}")
        return np.broadcast_to(self.tokens_array, (inputs.shape[0],) + self.tokens_array.shape).copy()


class HttpProvider(TextProvider):
    """
    One request per (sensor, step) cell, rendered from ``config.template``

    Responses are cached by prompt text. On a provider failure with
    ``fallback`` enabled the provider logs a warning once and serves stub
    embeddings from then on.
    """

    def __init__(self, config: TextProviderConfig, session: requests.Session = None):
        self.config = config
        self.d_t = config.d_t
        self.tokens = config.tokens
        self.session = session or requests.Session()
        self.stub = StubProvider(config.d_t, config.tokens, config.seed)
        self.degraded = False
        self._cache: Dict[str, np.ndarray] = {}

    def render(self, sensor: str, start: int, step: int, values: np.ndarray) -> str:
        end = start + len(values) - 1
        readings = ', '.join(f"{v:.3f}" for v in values[:step - start + 1])
        return self.config.template.format(sensor=sensor, start=start, end=end, step=step, values=readings)

    def _request(self, prompt: str) -> np.ndarray:
        # runs on worker threads: reads config only, never the cache
        last_error: Optional[ProviderError] = None
        for _ in range(max(1, self.config.retries + 1)):
            try:
                matrix = http_embed(self.config.endpoint, prompt, self.config.timeout,
                                    self.config.model, self.config.max_tokens, self.session)
                break
            except (ProviderTimeoutError, ProviderStatusError) as exc:
                last_error = exc
        else:
            raise last_error

        if matrix.shape[1] != self.d_t:
            raise ProviderPayloadError(f"provider returned width {matrix.shape[1]}, configured d_t={self.d_t}")
        if matrix.shape[0] < self.tokens:
            raise ProviderPayloadError(f"provider returned {matrix.shape[0]} tokens, need {self.tokens}")
        return matrix[:self.tokens]

    def _fetch_all(self, prompts: Sequence[str]) -> List[np.ndarray]:
        pending = list(dict.fromkeys(prompt for prompt in prompts if prompt not in self._cache))
        if pending:
            with ThreadPoolExecutor(max_workers=max(1, self.config.workers)) as pool:
                fetched = list(pool.map(self._request, pending))
            self._cache.update(zip(pending, fetched))
        return [self._cache[prompt] for prompt in prompts]

    def _window_prompts(self, raw_window: np.ndarray, anchor: int, sensors: Sequence[str]) -> List[str]:
        w = raw_window.shape[1]
        start = anchor - w
        return [self.render(sensors[n], start, start + step, raw_window[n])
                for n in range(raw_window.shape[0]) for step in range(w)]

    def token_embeddings(self, inputs, anchors=None, raw_inputs=None, sensors=None) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        batch, n, w = inputs.shape
        raw_inputs = inputs if raw_inputs is None else np.asarray(raw_inputs, dtype=np.float64)
        anchors = np.full(batch, w) if anchors is None else np.asarray(anchors)
        sensors = list(sensors) if sensors is not None else [f"s{i}" for i in range(n)]

        out = np.zeros((batch, n, w, self.tokens, self.d_t))
        for b in range(batch):
            if self.degraded:
                out[b] = self.stub.window_tokens(inputs[b])
                continue
            prompts = self._window_prompts(raw_inputs[b], int(anchors[b]), sensors)
            try:
                cells = self._fetch_all(prompts)
            except ProviderError as exc:
                if not self.config.fallback:
                    raise
                logger.warning("text provider at %s failed (%s); falling back to stub embeddings",
                               self.config.endpoint, exc)
                self.degraded = True
                out[b] = self.stub.window_tokens(inputs[b])
                continue
            # cells arrive in prompt order, i.e. sensor-major
            out[b] = np.asarray(cells).reshape(n, w, self.tokens, self.d_t)
        return out


def build_provider(config: TextProviderConfig, session: requests.Session = None) -> Optional[TextProvider]:
    """Provider for ``config.kind``; ``None`` when the text branch is disabled"""

    if config.kind == 'none':
        return None
    if config.kind == 'fixture':
        if not config.fixture:
            raise ConfigurationError("text_provider.fixture is required when kind is 'fixture'")
        return FixtureProvider(config.fixture)
    if config.kind == 'http':
        if not config.endpoint and not config.fallback:
            raise ConfigurationError("text_provider.endpoint (or STPROPH_EMBED_ENDPOINT) is required")
        return HttpProvider(config, session)
    return StubProvider(config.d_t, config.tokens, config.seed)


__all__ = [
    'AttentionPool', 'FixtureProvider', 'HttpProvider', 'StubProvider', 'TextProvider', 'TextProviderConfig',
    'attention_pool', 'build_provider', 'http_embed', 'load_fixture', 'pooling_weights', 'save_fixture',
    'stub_embed',
]
