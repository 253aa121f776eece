"""
Deterministic synthetic sensor datasets

Used by the bundled toy configuration, the make_synthetic command and the
desk-scale learning tests.
"""

from typing import Tuple

import numpy as np

from .dataset import SeriesMatrix
from .errors import ConfigurationError
from .numerics import SeedBank

DAY = 24


def _steps(n_steps: int) -> np.ndarray:
    if n_steps < 1:
        raise ConfigurationError(f"need at least one timestep, got {n_steps}")
    return np.arange(n_steps, dtype=np.float64)


def toy_sine(n_steps: int = 600, sensors: int = 1, period: float = DAY, amplitude: float = 1.0,
             noise: float = 0.0, seed: int = 0) -> SeriesMatrix:
    """
    Phase-shifted sines, one per sensor

    Sensor i is amplitude * sin(2 pi t / period + i * pi / 4), plus optional
    Gaussian noise.
    """

    t = _steps(n_steps)
    phases = np.arange(sensors)[:, None] * np.pi / 4.0
    values = amplitude * np.sin(2.0 * np.pi * t[None, :] / period + phases)
    if noise > 0:
        values = values + SeedBank(seed).fresh('synthetic.toy').normal(0.0, noise, size=values.shape)
    return SeriesMatrix(values, np.ones_like(values, dtype=bool), name='toy_sine', granularity='5min')


def coupled(n_steps: int = 2000, seed: int = 0, lag: int = 3) -> SeriesMatrix:
    """
    Four coupled sensors

    - driver: a daily sine plus AR(1) noise (the unpredictable part)
    - phase: a sine whose phase is pushed by the driver's previous value
    - lagged: the driver delayed by ``lag`` steps
    - noisy: mostly white noise with a faint driver component

    The lagged sensor's near-term future sits in the driver's recent past, so
    attention across sensors has something to find.
    """

    t = _steps(n_steps)
    rng = SeedBank(seed).fresh('synthetic.coupled')

    drift = np.zeros(n_steps + lag)
    shocks = rng.normal(0.0, 0.3, size=n_steps + lag)
    for i in range(1, n_steps + lag):
        drift[i] = 0.9 * drift[i - 1] + shocks[i]

    full_t = np.arange(-lag, n_steps, dtype=np.float64)
    driver_full = np.sin(2.0 * np.pi * full_t / DAY) + drift
    driver = driver_full[lag:]
    previous = np.concatenate([[driver_full[lag - 1] if lag > 0 else 0.0], driver[:-1]])

    phase = np.sin(2.0 * np.pi * t / DAY + 0.5 * previous)
    lagged = driver_full[:n_steps]
    noisy = 0.1 * driver + rng.normal(0.0, 1.0, size=n_steps)

    values = np.vstack([driver, phase, lagged, noisy]) + rng.normal(0.0, 0.05, size=(4, n_steps))
    return SeriesMatrix(values, np.ones_like(values, dtype=bool), name='coupled',
                        sensors=('driver', 'phase', 'lagged', 'noisy'))


def heteroscedastic(n_steps: int = 2000, sensors: int = 2, seed: int = 0, low: float = 0.1, high: float = 0.6,
                    regime: int = 48) -> Tuple[SeriesMatrix, np.ndarray]:
    """
    Sines with a two-level noise schedule

    The noise standard deviation alternates between ``low`` and ``high`` every
    ``regime`` steps (offset per sensor).

    Returns:
        tuple: (series, sigma) where sigma is the true N x T noise std
    """

    t = _steps(n_steps)
    rng = SeedBank(seed).fresh('synthetic.heteroscedastic')
    offsets = np.arange(sensors)[:, None] * (regime // 2)
    sigma = np.where(((t[None, :] + offsets) // regime) % 2 == 0, low, high)
    clean = np.sin(2.0 * np.pi * t[None, :] / DAY + np.arange(sensors)[:, None])
    values = clean + sigma * rng.normal(0.0, 1.0, size=sigma.shape)
    return SeriesMatrix(values, np.ones_like(values, dtype=bool), name='heteroscedastic'), sigma


GENERATORS = {
    'toy_sine': toy_sine,
    'coupled': coupled,
    'heteroscedastic': lambda **kwargs: heteroscedastic(**kwargs)[0],
}


__all__ = ['GENERATORS', 'coupled', 'heteroscedastic', 'toy_sine']
