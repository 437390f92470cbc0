"""Pure-numpy scan kernels; import-time fallback when the compiled
extension is unavailable.

Both backends implement the same recurrence with the same per-element
arithmetic (multiply then add, no fused ops), so they agree bitwise.
"""
from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def scan_states(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Inclusive states of h_t = a_t * h_{t-1} + b_t from h_0 = 0.

    a, b: float32 [L, C, N]; returns all states, float32 [L, C, N].
    """
    length = a.shape[0]
    out = np.empty_like(a)
    h = np.zeros(a.shape[1:], dtype=a.dtype)
    for t in range(length):
        h = a[t] * h + b[t]
        out[t] = h
    return out


def scan_states_chunked(a: np.ndarray, b: np.ndarray, chunk: int) -> np.ndarray:
    """Same recurrence via per-chunk affine maps h -> P*h + S.

    Local prefix maps are built with one vectorized pass of `chunk` steps
    across all full chunks at once; carries then compose sequentially across
    chunks. Degenerate chunk sizes (1 and >= L) reproduce scan_states
    bit-exactly because the per-element expressions coincide.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    length = a.shape[0]
    if length == 0:
        return np.empty_like(a)
    chunk = min(chunk, length)
    n_full = length // chunk
    tail = length - n_full * chunk
    out = np.empty_like(a)

    # local prefix maps for the full chunks, vectorized across chunks
    af = a[: n_full * chunk].reshape(n_full, chunk, *a.shape[1:])
    bf = b[: n_full * chunk].reshape(n_full, chunk, *a.shape[1:])
    pref_p = np.empty_like(af)
    pref_s = np.empty_like(af)
    p = np.ones(af.shape[:1] + af.shape[2:], dtype=a.dtype)
    s = np.zeros_like(p)
    for t in range(chunk):
        p = p * af[:, t]
        s = af[:, t] * s + bf[:, t]
        pref_p[:, t] = p
        pref_s[:, t] = s

    h = np.zeros(a.shape[1:], dtype=a.dtype)
    for k in range(n_full):
        block = pref_p[k] * h + pref_s[k]
        out[k * chunk : (k + 1) * chunk] = block
        h = block[-1]

    if tail:
        base = n_full * chunk
        pt = np.ones(a.shape[1:], dtype=a.dtype)
        st = np.zeros(a.shape[1:], dtype=a.dtype)
        for t in range(base, length):
            pt = pt * a[t]
            st = a[t] * st + b[t]
            out[t] = pt * h + st
    return out
