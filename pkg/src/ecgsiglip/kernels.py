"""Hot loops, each in a numba-compiled and a pure-numpy flavour.

The public names (``render_waves``, ``jaccard_matrix``, ``roc_sweep``) resolve
to the numba variant unless ``ECGSIGLIP_DISABLE_NUMBA`` is set. Both variants
stay importable so tests and ``benchmarks/`` can compare them.
"""
import numpy as np

from ._jit import USE_NUMBA, njit

# Gaussian bumps are truncated at this many standard deviations.
WAVE_SUPPORT = 6.0


def _render_waves_loop(centers, sigmas, amps, n_samples, fs):
    n_leads = amps.shape[1]
    out = np.zeros((n_leads, n_samples))
    for w in range(centers.shape[0]):
        c = centers[w] * fs
        s = sigmas[w] * fs
        lo = max(0, int(np.floor(c - WAVE_SUPPORT * s)))
        hi = min(n_samples, int(np.ceil(c + WAVE_SUPPORT * s)) + 1)
        for t in range(lo, hi):
            z = (t - c) / s
            g = np.exp(-0.5 * z * z)
            for k in range(n_leads):
                out[k, t] += amps[w, k] * g
    return out


def render_waves_numpy(centers, sigmas, amps, n_samples, fs):
    """Sum of per-lead Gaussian bumps; ``centers``/``sigmas`` in seconds.

    Returns a float64 array of shape ``(n_leads, n_samples)``.
    """
    centers = np.asarray(centers, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    amps = np.asarray(amps, dtype=np.float64)
    out = np.zeros((amps.shape[1], n_samples))
    for w in range(centers.shape[0]):
        c = centers[w] * fs
        s = sigmas[w] * fs
        lo = max(0, int(np.floor(c - WAVE_SUPPORT * s)))
        hi = min(n_samples, int(np.ceil(c + WAVE_SUPPORT * s)) + 1)
        if hi <= lo:
            continue
        z = (np.arange(lo, hi) - c) / s
        out[:, lo:hi] += amps[w][:, None] * np.exp(-0.5 * z * z)[None, :]
    return out


def _jaccard_matrix_loop(bits):
    n, m = bits.shape
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            inter = 0
            union = 0
            for c in range(m):
                a = bits[i, c] != 0
                b = bits[j, c] != 0
                if a and b:
                    inter += 1
                if a or b:
                    union += 1
            v = 1.0 if union == 0 else inter / union
            out[i, j] = v
            out[j, i] = v
    return out


def jaccard_matrix_numpy(bits):
    """Pairwise Jaccard similarity of the rows of a binary ``(n, m)`` matrix.

    Two empty rows have similarity 1.
    """
    b = (np.asarray(bits) != 0).astype(np.int64)
    inter = b @ b.T
    sizes = b.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    out = np.ones(inter.shape)
    nz = union > 0
    out[nz] = inter[nz] / union[nz]
    return out


def _roc_sweep_loop(sorted_scores, sorted_truth):
    n = sorted_scores.shape[0]
    thresholds = np.empty(n)
    tps = np.empty(n)
    fps = np.empty(n)
    k = 0
    tp = 0.0
    fp = 0.0
    for i in range(n):
        if sorted_truth[i] != 0:
            tp += 1.0
        else:
            fp += 1.0
        if i == n - 1 or sorted_scores[i + 1] != sorted_scores[i]:
            thresholds[k] = sorted_scores[i]
            tps[k] = tp
            fps[k] = fp
            k += 1
    return thresholds[:k], tps[:k], fps[:k]


def roc_sweep_numpy(sorted_scores, sorted_truth):
    """Cumulative TP/FP counts at each distinct score, scores sorted descending.

    Equal scores are grouped into a single step.
    """
    s = np.asarray(sorted_scores, dtype=np.float64)
    y = (np.asarray(sorted_truth) != 0).astype(np.float64)
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.shape[0] - 1]
    tps = np.cumsum(y)[last]
    return s[last], tps, last + 1.0 - tps


render_waves_jit = njit(_render_waves_loop)
jaccard_matrix_jit = njit(_jaccard_matrix_loop)
roc_sweep_jit = njit(_roc_sweep_loop)


def render_waves(centers, sigmas, amps, n_samples, fs):
    if USE_NUMBA:
        return render_waves_jit(
            np.ascontiguousarray(centers, dtype=np.float64),
            np.ascontiguousarray(sigmas, dtype=np.float64),
            np.ascontiguousarray(amps, dtype=np.float64),
            int(n_samples),
            float(fs),
        )
    return render_waves_numpy(centers, sigmas, amps, n_samples, fs)


def jaccard_matrix(bits):
    if USE_NUMBA:
        return jaccard_matrix_jit(np.ascontiguousarray(bits, dtype=np.uint8))
    return jaccard_matrix_numpy(bits)


def roc_sweep(sorted_scores, sorted_truth):
    if USE_NUMBA:
        return roc_sweep_jit(
            np.ascontiguousarray(sorted_scores, dtype=np.float64),
            np.ascontiguousarray(sorted_truth, dtype=np.uint8),
        )
    return roc_sweep_numpy(sorted_scores, sorted_truth)


render_waves.__doc__ = render_waves_numpy.__doc__
jaccard_matrix.__doc__ = jaccard_matrix_numpy.__doc__
roc_sweep.__doc__ = roc_sweep_numpy.__doc__
