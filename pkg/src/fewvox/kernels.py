"""Hot numeric kernels: numba-compiled loops with a pure-numpy fallback.

The numba path is the default whenever numba imports successfully.  Setting
the environment variable ``FEWVOX_NUMBA`` to ``0``/``false``/``no`` before
import forces the numpy fallback.  Both paths compute the same quantities
(up to float rounding); ``benchmarks/bench_kernels.py`` times them against
each other.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a regular dependency
    HAVE_NUMBA = False


def _numba_requested() -> bool:
    return os.environ.get("FEWVOX_NUMBA", "1").strip().lower() not in ("0", "false", "no")


NUMBA_ENABLED = HAVE_NUMBA and _numba_requested()


def ncc_matrix_numpy(frames: np.ndarray, lag_min: int, lag_max: int) -> np.ndarray:
    """Normalized autocorrelation of each frame at integer lags.

    ``frames`` is [n_frames, frame_len] float64 with the per-frame mean
    already removed.  Entry (t, i) is the normalized cross-correlation of
    frame t with itself shifted by ``lag_min + i`` samples, computed over a
    fixed window of ``frame_len - lag_max`` samples so all lags are
    comparable.  Frames with (near) zero energy get all-zero rows.
    """
    n_frames, frame_len = frames.shape
    w = frame_len - lag_max
    if w < 2:
        raise ValueError("frame_len must exceed lag_max by at least 2 samples")
    lags = np.arange(lag_min, lag_max + 1)
    head = frames[:, :w]
    e_head = np.einsum("ij,ij->i", head, head)
    # Sliding energy of frames[:, lag : lag + w] for every lag via cumsum.
    csum = np.cumsum(frames * frames, axis=1)
    e_lag = csum[:, lags + w - 1] - csum[:, lags - 1]
    ncc = np.zeros((n_frames, lags.size))
    for i, lag in enumerate(lags):
        num = np.einsum("ij,ij->i", head, frames[:, lag : lag + w])
        den = np.sqrt(e_head * e_lag[:, i])
        np.divide(num, den, out=ncc[:, i], where=den > 1e-12)
    return ncc


if HAVE_NUMBA:

    @njit(cache=True, fastmath=True)
    def _ncc_matrix_jit(frames, lag_min, lag_max):  # pragma: no cover - compiled
        n_frames, frame_len = frames.shape
        w = frame_len - lag_max
        n_lags = lag_max - lag_min + 1
        ncc = np.zeros((n_frames, n_lags))
        csum = np.empty(frame_len + 1)
        for t in range(n_frames):
            x = frames[t]
            # Prefix sums give every window energy in O(1) per lag.
            csum[0] = 0.0
            for j in range(frame_len):
                csum[j + 1] = csum[j] + x[j] * x[j]
            e_head = csum[w]
            for i in range(n_lags):
                lag = lag_min + i
                num = 0.0
                for j in range(w):
                    num += x[j] * x[j + lag]
                e_lag = csum[lag + w] - csum[lag]
                den = np.sqrt(e_head * e_lag)
                if den > 1e-12:
                    ncc[t, i] = num / den
        return ncc

    def ncc_matrix_numba(frames: np.ndarray, lag_min: int, lag_max: int) -> np.ndarray:
        if frames.shape[1] - lag_max < 2:
            raise ValueError("frame_len must exceed lag_max by at least 2 samples")
        return _ncc_matrix_jit(np.ascontiguousarray(frames), lag_min, lag_max)

else:  # pragma: no cover
    ncc_matrix_numba = None


def ncc_matrix(frames: np.ndarray, lag_min: int, lag_max: int, use_numba: bool | None = None) -> np.ndarray:
    """Dispatch to the numba kernel or the numpy fallback.

    ``use_numba=None`` follows the module default (numba when available and
    not disabled through ``FEWVOX_NUMBA``).
    """
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    if use_numba and ncc_matrix_numba is not None:
        return ncc_matrix_numba(frames, lag_min, lag_max)
    return ncc_matrix_numpy(frames, lag_min, lag_max)
