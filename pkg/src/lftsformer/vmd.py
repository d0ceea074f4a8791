"""Variational mode decomposition by ADMM on the one-sided spectrum."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class VmdParams:
    K: int = 3
    alpha: float = 1000.0  # 2*alpha filter form; matches the customary 2000 of 1+alpha*dw^2 codes
    tau: float = 0.0
    tol: float = 1e-7
    max_iter: int = 500
    dc_mode: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.alpha <= 0 or self.max_iter < 1 or self.tau < 0:
            raise ValueError("alpha > 0, tau >= 0 and max_iter >= 1 required")


@dataclass
class ImfSet:
    modes: np.ndarray          # (K, n)
    center_freqs: np.ndarray   # (K,), cycles per sample, ascending
    residual: np.ndarray       # input - modes.sum(0)
    iterations_used: int
    converged: bool
    trace: list = field(default_factory=list, repr=False)

    @property
    def K(self) -> int:
        return len(self.modes)

    def reconstruction(self) -> np.ndarray:
        return self.modes.sum(axis=0)

    def write_trace(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "update_ratio"] + [f"w{k}" for k in range(self.K)])
            for row in self.trace:
                w.writerow([row[0], repr(row[1])] + [repr(float(v)) for v in row[2]])


def initial_center_freqs(K: int, dc_mode: bool) -> np.ndarray:
    w = 0.5 * np.arange(K) / K
    if dc_mode:
        w[0] = 0.0
    return w


def mirror_extend(x: np.ndarray) -> tuple[np.ndarray, int]:
    half = len(x) // 2
    return np.concatenate([x[:half][::-1], x, x[len(x) - half:][::-1]]), half


def vmd_decompose(signal, params: VmdParams, keep_trace: bool = False) -> ImfSet:
    """Split ``signal`` into ``params.K`` narrow-band modes.

    Each sweep updates the modes in order with a Wiener filter around their
    current center frequency, moves each center frequency to the power-weighted
    mean frequency of its mode, then takes a dual-ascent step of size ``tau``.
    Iteration stops when the summed relative squared change of the mode
    spectra drops below ``tol``.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or len(x) < 16:
        raise ValueError("vmd needs a 1-D signal of length >= 16")
    if not np.all(np.isfinite(x)):
        raise ValueError("vmd input contains non-finite values")

    n, K, alpha = len(x), params.K, params.alpha
    ext, half = mirror_extend(x)
    T = len(ext)
    x_hat = np.fft.rfft(ext)
    freqs = np.fft.rfftfreq(T)

    u_hat = np.zeros((K, len(freqs)), dtype=complex)
    omega = initial_center_freqs(K, params.dc_mode)
    lam = np.zeros(len(freqs), dtype=complex)
    trace = []
    converged = False
    it = 0
    total = u_hat.sum(axis=0)
    while it < params.max_iter:
        it += 1
        prev = u_hat.copy()
        for k in range(K):
            others = total - u_hat[k]
            u_hat[k] = (x_hat - others + lam / 2) / (1.0 + 2.0 * alpha * (freqs - omega[k]) ** 2)
            total = others + u_hat[k]
            if params.dc_mode and k == 0:
                continue
            power = np.abs(u_hat[k]) ** 2
            denom = power.sum()
            if denom > 0:
                omega[k] = float(freqs @ power / denom)
        if params.tau:
            lam = lam + params.tau * (x_hat - total)

        diff = np.sum(np.abs(u_hat - prev) ** 2, axis=1)
        norm = np.sum(np.abs(prev) ** 2, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = float(np.sum(np.where(norm > 0, diff / norm, np.where(diff > 0, np.inf, 0.0))))
        if keep_trace:
            trace.append((it, ratio, omega.copy()))
        if ratio < params.tol:
            converged = True
            break

    full = np.fft.irfft(u_hat, n=T, axis=1)
    modes = full[:, half:half + n]
    order = np.argsort(omega, kind="stable")
    modes, omega = modes[order], omega[order]
    return ImfSet(modes=np.ascontiguousarray(modes), center_freqs=omega,
                  residual=x - modes.sum(axis=0), iterations_used=it, converged=converged,
                  trace=trace)


def psd(mode) -> tuple[np.ndarray, np.ndarray]:
    """One-sided periodogram ``|DFT|^2 / n`` over normalized frequencies."""
    mode = np.asarray(mode, dtype=np.float64)
    n = len(mode)
    if n < 2:
        raise ValueError("psd needs at least 2 samples")
    return np.fft.rfftfreq(n), np.abs(np.fft.rfft(mode)) ** 2 / n


def one_sided_weights(n: int) -> np.ndarray:
    """Fold factors that make a one-sided periodogram sum to the two-sided total."""
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w
