"""Arbitrary-length discrete Fourier transform.

Power-of-two lengths use an iterative radix-2 Cooley-Tukey transform; every
other length goes through Bluestein's chirp-z identity, which rewrites the DFT
as a convolution evaluated with a padded power-of-two transform. Output length
always equals input length.
"""
import numpy as np

from .errors import EmptySignal

_BITREV_CACHE = {}


def _bitrev(n):
    perm = _BITREV_CACHE.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        perm = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            perm |= ((idx >> b) & 1) << (bits - 1 - b)
        _BITREV_CACHE[n] = perm
    return perm


def _fft_pow2(x):
    n = x.shape[0]
    if n == 1:
        return x.copy()
    x = x[_bitrev(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = x.reshape(-1, size)
        even = blocks[:, :half]
        odd = blocks[:, half:] * tw
        x = np.concatenate([even + odd, even - odd], axis=1).reshape(n)
        size *= 2
    return x


def _ifft_pow2(X):
    return np.conj(_fft_pow2(np.conj(X))) / X.shape[0]


def _bluestein(x):
    n = x.shape[0]
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase argument small for long signals
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    m = 1 << (2 * n - 1).bit_length()
    a = np.zeros(m, dtype=complex)
    a[:n] = x * chirp
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:])[::-1]
    conv = _ifft_pow2(_fft_pow2(a) * _fft_pow2(b))
    return chirp * conv[:n]


def dft_forward(signal):
    """Unnormalised DFT: ``X[k] = sum_j x[j] exp(-2 pi i j k / N)``."""
    x = np.asarray(signal, dtype=complex).ravel()
    n = x.shape[0]
    if n == 0:
        raise EmptySignal("cannot transform an empty signal")
    if n & (n - 1) == 0:
        return _fft_pow2(x)
    return _bluestein(x)


def dft_inverse(spectrum):
    """Inverse of :func:`dft_forward` (carries the 1/N factor)."""
    X = np.asarray(spectrum, dtype=complex).ravel()
    if X.shape[0] == 0:
        raise EmptySignal("cannot transform an empty spectrum")
    return np.conj(dft_forward(np.conj(X))) / X.shape[0]


def bin_frequencies(n, sampling_hz):
    """Absolute frequency of each DFT bin in Hz (negative bins folded)."""
    k = np.arange(n)
    return np.minimum(k, n - k) * (sampling_hz / n)
