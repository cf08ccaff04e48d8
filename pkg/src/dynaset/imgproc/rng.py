"""Counter-based random numbers.

Every draw is a pure function of ``(seed, stream, counter)``: the counter is
hashed with a SplitMix64 finalizer, so the value for pixel ``p`` channel ``c``
does not depend on which other pixels were drawn or in what order. All
arithmetic is uint64 with wraparound, which numpy performs identically on
every platform.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def stream_key(seed: int, stream: int) -> np.uint64:
    """Derive the 64-bit key for one named stream of a seed."""
    with np.errstate(over="ignore"):
        s = np.array([seed & _MASK64], dtype=np.uint64)
        k = _mix(s + _GOLDEN)
        k ^= _mix(np.array([stream & _MASK64], dtype=np.uint64) * _GOLDEN + _M1)
        return _mix(k)[0]


def random_bits(seed: int, stream: int, counters) -> np.ndarray:
    """64 random bits per counter."""
    key = stream_key(seed, stream)
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(key + (c + np.uint64(1)) * _GOLDEN)


def uniform(seed: int, stream: int, counters) -> np.ndarray:
    """Uniform doubles in [0, 1), 53 bits of precision."""
    bits = random_bits(seed, stream, counters)
    return (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def standard_normal(seed: int, stream: int, counters) -> np.ndarray:
    """Standard normal draws via Box-Muller on two counter lanes."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        u1 = 1.0 - uniform(seed, stream, c * np.uint64(2))
        u2 = uniform(seed, stream, c * np.uint64(2) + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def poisson(seed: int, stream: int, counters, lam) -> np.ndarray:
    """Poisson draws by inverse-CDF search, one uniform per counter.

    ``lam`` must be finite and small enough that ``exp(-lam)`` does not
    underflow (lam <= 700); the noise module never exceeds 256.
    """
    lam = np.asarray(lam, dtype=np.float64)
    u = uniform(seed, stream, counters).reshape(lam.shape)
    out = np.zeros(lam.shape, dtype=np.int64)
    if lam.size == 0:
        return out
    if np.any(lam < 0) or np.any(lam > 700):
        raise ValueError("poisson rate must lie in [0, 700]")

    flat_lam = lam.ravel()
    flat_u = u.ravel()
    flat_out = out.ravel()
    active = np.flatnonzero(flat_lam > 0)
    p = np.exp(-flat_lam[active])
    cdf = p.copy()
    k = 0
    k_max = int(np.ceil(flat_lam.max() + 40.0 * np.sqrt(flat_lam.max()) + 40.0))
    while active.size and k < k_max:
        still = flat_u[active] >= cdf
        active, p, cdf = active[still], p[still], cdf[still]
        if not active.size:
            break
        k += 1
        flat_out[active] = k
        p = p * flat_lam[active] / k
        cdf = cdf + p
    return flat_out.reshape(lam.shape)
