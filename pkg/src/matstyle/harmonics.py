"""Real spherical harmonics: basis evaluation, least-squares fitting of scalar
fields on the sphere into per-band coefficient vectors, and evaluation.

The basis is real, orthonormal and Condon-Shortley free: band l contributes
2l+1 functions indexed m = -l..l, with sin(|m| phi) factors for m < 0 and
cos(m phi) for m > 0.  A coefficient set of order n is stored flat with band i
occupying offsets [i^2, (i+1)^2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


def n_coeffs(order):
    return (order + 1) ** 2


def band_slice(i):
    return slice(i * i, (i + 1) * (i + 1))


def _check_unit(dirs, tol=1e-6):
    norms = np.linalg.norm(dirs, axis=-1)
    if np.abs(norms - 1.0).max() > tol:
        raise ValueError("directions must be unit vectors")


def sh_basis_matrix(dirs, order):
    """Design matrix of all real SH up to the given order.

    dirs: (N, 3) unit vectors.  Returns (N, (order+1)^2); column l^2 + (m+l)
    holds Y_l^m.  Uses the stable normalized associated-Legendre recurrence.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    single = dirs.ndim == 1
    if single:
        dirs = dirs[None, :]
    _check_unit(dirs)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    ct = z
    st = np.hypot(x, y)
    phi = np.arctan2(y, x)

    N = len(dirs)
    B = np.empty((N, n_coeffs(order)))
    sqrt2 = np.sqrt(2.0)

    # cos/sin of m*phi for all m
    mphi = np.outer(np.arange(order + 1), phi)
    cos_m = np.cos(mphi)
    sin_m = np.sin(mphi)

    pmm = np.full(N, np.sqrt(1.0 / (4.0 * np.pi)))
    for m in range(order + 1):
        if m > 0:
            pmm = pmm * (np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * st)
        # l = m diagonal term
        p_prev = None
        p = pmm
        for l in range(m, order + 1):
            if l == m:
                pass
            elif l == m + 1:
                p_prev, p = p, np.sqrt(2.0 * m + 3.0) * ct * pmm
            else:
                a = np.sqrt((2.0 * l - 1.0) * (2.0 * l + 1.0) / ((l - m) * (l + m)))
                b = np.sqrt((2.0 * l + 1.0) * (l - 1.0 - m) * (l - 1.0 + m)
                            / ((2.0 * l - 3.0) * (l - m) * (l + m)))
                p_prev, p = p, a * ct * p - b * p_prev
            base = l * l + l
            if m == 0:
                B[:, base] = p
            else:
                B[:, base + m] = sqrt2 * cos_m[m] * p
                B[:, base - m] = sqrt2 * sin_m[m] * p
    return B[0] if single else B


def sh_basis(l, m, direction):
    """Single real spherical harmonic Y_l^m evaluated at unit direction(s)."""
    if abs(m) > l:
        raise ValueError(f"|m| = {abs(m)} exceeds band {l}")
    B = sh_basis_matrix(direction, l)
    col = l * l + (m + l)
    return B[..., col]


@dataclass
class PDF:
    """Property distribution function: SH coefficients of a field on the sphere.

    coeffs is flat of length (order+1)^2; band i is coeffs[i^2:(i+1)^2].
    """
    property_tag: str
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        if len(self.coeffs) != n_coeffs(self.order):
            raise ValueError(
                f"expected {n_coeffs(self.order)} coefficients for order "
                f"{self.order}, got {len(self.coeffs)}")

    def band(self, i):
        return self.coeffs[band_slice(i)]

    def band_norms(self):
        return np.array([np.linalg.norm(self.band(i)) for i in range(self.order + 1)])

    def copy(self, property_tag=None):
        return PDF(property_tag or self.property_tag, self.order, self.coeffs.copy())

    def to_json_dict(self):
        return {"property": self.property_tag, "order": self.order,
                "bands": [self.band(i).tolist() for i in range(self.order + 1)]}

    @classmethod
    def from_json_dict(cls, d):
        coeffs = np.concatenate([np.asarray(b, dtype=np.float64) for b in d["bands"]])
        return cls(d["property"], int(d["order"]), coeffs)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def zero_pdf(property_tag, order):
    return PDF(property_tag, order, np.zeros(n_coeffs(order)))


@dataclass
class SphericalSamples:
    """Scalar samples on the sphere with an inclusion mask.

    Masked-out samples still participate in fits with value forced to zero.
    """
    directions: np.ndarray
    values: np.ndarray
    mask: np.ndarray = None
    weights: np.ndarray = None

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.mask is None:
            self.mask = np.ones(len(self.values), dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not len(self.directions) == len(self.values) == len(self.mask):
            raise ValueError("directions, values and mask must have equal length")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if len(self.weights) != len(self.values):
                raise ValueError("weights length mismatch")
        _check_unit(self.directions)

    def masked_values(self):
        v = self.values.copy()
        v[~self.mask] = 0.0
        return v


class SphericalFitter:
    """Weighted least-squares SH fitting with a cached, factorized system.

    The normal-equation matrix depends only on directions, weights and order,
    so one fitter serves every channel and patch mask on the same mesh.  The
    design matrix is kept when it fits in max_cache_bytes, otherwise rebuilt
    in chunks per solve (practical ceiling is around order 48 at 10k samples).
    """

    def __init__(self, directions, order, weights=None, regularization=1e-8,
                 max_cache_bytes=300_000_000, chunk=4096):
        self.directions = np.asarray(directions, dtype=np.float64)
        self.order = order
        self.regularization = float(regularization)
        self.chunk = int(chunk)
        N, K = len(self.directions), n_coeffs(order)
        self.weights = np.ones(N) if weights is None else np.asarray(weights, dtype=np.float64)
        if len(self.weights) != N:
            raise ValueError("weights length mismatch")

        self._B = None
        keep = N * K * 8 <= max_cache_bytes
        G = np.zeros((K, K))
        if keep:
            self._B = sh_basis_matrix(self.directions, order)
            G = self._B.T @ (self.weights[:, None] * self._B)
        else:
            for lo in range(0, N, self.chunk):
                Bc = sh_basis_matrix(self.directions[lo:lo + self.chunk], order)
                G += Bc.T @ (self.weights[lo:lo + self.chunk, None] * Bc)
        if self.regularization > 0:
            G[np.diag_indices_from(G)] += self.regularization
        try:
            self._factor = cho_factor(G)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"normal equations are rank deficient: {exc}") from exc

    def _design_rows(self, lo, hi):
        if self._B is not None:
            return self._B[lo:hi]
        return sh_basis_matrix(self.directions[lo:hi], self.order)

    def fit(self, values, mask=None, property_tag=""):
        v = np.asarray(values, dtype=np.float64).copy()
        if mask is not None:
            v = v.copy()
            v[~np.asarray(mask, dtype=bool)] = 0.0
        wv = self.weights * v
        K = n_coeffs(self.order)
        rhs = np.zeros(K)
        for lo in range(0, len(v), self.chunk):
            rhs += self._design_rows(lo, lo + self.chunk).T @ wv[lo:lo + self.chunk]
        coeffs = cho_solve(self._factor, rhs)
        return PDF(property_tag, self.order, coeffs)

    def synthesize(self, pdf):
        """Evaluate a PDF at the fitter's own sample directions."""
        out = np.zeros(len(self.directions))
        for lo in range(0, len(out), self.chunk):
            out[lo:lo + self.chunk] = self._design_rows(lo, lo + self.chunk) @ pdf.coeffs
        return out

    def residual(self, pdf, values, mask=None):
        """(mean_abs, rms) of the reconstruction error over masked samples."""
        rec = self.synthesize(pdf)
        err = rec - np.asarray(values, dtype=np.float64)
        if mask is not None:
            err = err[np.asarray(mask, dtype=bool)]
        if len(err) == 0:
            return 0.0, 0.0
        return float(np.abs(err).mean()), float(np.sqrt((err ** 2).mean()))


def fit_pdf(samples, order, regularization=1e-8, property_tag="", outside_zero=True):
    """Fit a PDF to spherical samples.

    With outside_zero (default, matching the masked-fit convention) samples
    outside the mask contribute as zeros at full weight; otherwise they are
    dropped from the system entirely.
    """
    if outside_zero:
        if regularization == 0 and len(samples.values) < n_coeffs(order):
            raise ValueError("not enough samples for an unregularized fit")
        fitter = SphericalFitter(samples.directions, order, weights=samples.weights,
                                 regularization=regularization)
        return fitter.fit(samples.values, mask=samples.mask, property_tag=property_tag)
    keep = samples.mask
    if regularization == 0 and keep.sum() < n_coeffs(order):
        raise ValueError("not enough masked samples for an unregularized fit")
    w = None if samples.weights is None else samples.weights[keep]
    fitter = SphericalFitter(samples.directions[keep], order, weights=w,
                             regularization=regularization)
    return fitter.fit(samples.values[keep], property_tag=property_tag)


def eval_pdf(pdf, directions):
    """Evaluate a PDF at one or many unit directions."""
    B = sh_basis_matrix(directions, pdf.order)
    return B @ pdf.coeffs
