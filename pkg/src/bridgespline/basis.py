"""B-spline and Fourier design matrices for additive regression models.

A design is built from a :class:`BasisSpec` (knot layout + degree for
B-splines, period + harmonic count for Fourier, or a passthrough identity
column).  All evaluators are pure functions of immutable specs and can be
called concurrently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BasisSpec",
    "DesignMatrix",
    "uniform_knots",
    "bspline_spec_from_grid",
    "bspline_row",
    "fourier_row",
    "build_design",
]


@dataclass(frozen=True)
class BasisSpec:
    """Specification of one basis block.

    kind:        'bspline', 'fourier' or 'identity'
    degree:      polynomial degree (bspline only), >= 0
    knots:       strictly increasing knot vector (bspline only)
    period:      fundamental period (fourier only), > 0
    n_harmonics: number of (cos, sin) pairs (fourier only), >= 1
    """

    kind: str
    degree: int = 3
    knots: tuple = ()
    period: float = 0.0
    n_harmonics: int = 0

    def __post_init__(self):
        if self.kind not in ("bspline", "fourier", "identity"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "bspline":
            if self.degree < 0:
                raise ValueError("degree must be >= 0")
            knots = np.asarray(self.knots, dtype=float)
            if knots.ndim != 1 or knots.size < self.degree + 2:
                raise ValueError(
                    f"need at least degree+2={self.degree + 2} knots, got {knots.size}"
                )
            if not np.all(np.diff(knots) > 0):
                raise ValueError("knots must be strictly increasing")
            object.__setattr__(self, "knots", tuple(float(t) for t in knots))
        elif self.kind == "fourier":
            if not self.period > 0:
                raise ValueError("period must be positive")
            if self.n_harmonics < 1:
                raise ValueError("n_harmonics must be >= 1")

    @property
    def n_basis(self) -> int:
        """Number of basis functions K produced by this spec."""
        if self.kind == "bspline":
            return len(self.knots) - self.degree - 1
        if self.kind == "fourier":
            return 2 * self.n_harmonics
        return 1

    def knot_array(self) -> np.ndarray:
        return np.asarray(self.knots, dtype=float)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "degree": self.degree,
            "knots": list(self.knots),
            "period": self.period,
            "n_harmonics": self.n_harmonics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(
            kind=d["kind"],
            degree=int(d.get("degree", 3)),
            knots=tuple(d.get("knots", ())),
            period=float(d.get("period", 0.0)),
            n_harmonics=int(d.get("n_harmonics", 0)),
        )


@dataclass
class DesignMatrix:
    """Evaluated basis block: an n x K matrix plus its generating spec.

    ``out_of_range`` flags rows whose x fell outside the knot range (those
    rows are all-zero rather than an error, so prediction grids slightly
    beyond the training range do not abort).
    """

    values: np.ndarray
    spec: BasisSpec
    column_offset: int = 0
    out_of_range: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("design values must be 2-d")
        if self.values.shape[1] != self.spec.n_basis:
            raise ValueError(
                f"design has {self.values.shape[1]} columns, spec implies {self.spec.n_basis}"
            )
        if self.out_of_range is None:
            self.out_of_range = np.zeros(self.values.shape[0], dtype=bool)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("design matrix contains non-finite entries")

    @property
    def shape(self):
        return self.values.shape


def uniform_knots(lo: float, hi: float, spacing: float) -> np.ndarray:
    """Uniform knot positions lo, lo+spacing, ... stopping at the first value >= hi.

    The last knot may exceed ``hi``; the sequence is strictly increasing.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    if not lo < hi:
        raise ValueError("need lo < hi")
    # small slack so exact multiples of the spacing do not gain a spurious point
    count = int(np.ceil((hi - lo) / spacing - 1e-9)) + 1
    return lo + spacing * np.arange(count)


def bspline_spec_from_grid(
    lo: float,
    hi: float,
    spacing: float,
    degree: int = 3,
    pad_left: int = 1,
    pad_right: int = 1,
    target_k: int | None = None,
) -> BasisSpec:
    """B-spline spec from a uniform grid, extended past both boundaries.

    The base grid comes from :func:`uniform_knots`; ``pad_left``/``pad_right``
    extra knots continue the same spacing outward so the basis span covers the
    data range.  ``target_k`` makes the implied basis-function count an
    explicit contract: construction fails loudly if the result differs, rather
    than silently fitting a different-sized model.
    """
    base = uniform_knots(lo, hi, spacing)
    left = base[0] - spacing * np.arange(pad_left, 0, -1)
    right = base[-1] + spacing * np.arange(1, pad_right + 1)
    knots = np.concatenate([left, base, right])
    spec = BasisSpec(kind="bspline", degree=degree, knots=tuple(knots))
    if target_k is not None and spec.n_basis != target_k:
        raise ValueError(
            f"knot layout yields K={spec.n_basis} basis functions, expected {target_k}"
        )
    return spec


def _bspline_values(x: np.ndarray, spec: BasisSpec):
    """Vectorized Cox-de Boor evaluation.

    Returns ``(first, vals, oob)`` where row i of the full design has its
    degree+1 possibly-nonzero entries ``vals[i]`` starting at column
    ``first[i]``; ``oob`` marks x outside the knot range (all-zero rows).
    """
    t = spec.knot_array()
    p = spec.degree
    x = np.asarray(x, dtype=float)
    oob = (x < t[0]) | (x > t[-1])
    # knot interval t[i] <= x < t[i+1]; clamp so the right endpoint of the
    # basis span evaluates as a left limit instead of an all-zero row
    i = np.searchsorted(t, x, side="right") - 1
    i = np.clip(i, p, len(t) - p - 2)

    n = x.size
    vals = np.zeros((n, p + 1))
    vals[:, 0] = 1.0
    left = np.empty((n, p + 1))
    right = np.empty((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[i + 1 - j]
        right[:, j] = t[i + j] - x
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = vals[:, r] / denom
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
    vals[oob] = 0.0
    return i - p, vals, oob


def bspline_row(x: float, spec: BasisSpec) -> np.ndarray:
    """Values of all K B-spline basis functions at a single point.

    Entries are nonnegative with at most degree+1 consecutive nonzeros and sum
    to 1 inside the interior knot span.  Out-of-range x produces an all-zero
    row and a warning.
    """
    if spec.kind != "bspline":
        raise ValueError("spec is not a bspline")
    first, vals, oob = _bspline_values(np.asarray([x], dtype=float), spec)
    row = np.zeros(spec.n_basis)
    if oob[0]:
        warnings.warn(f"x={x} outside knot range; returning all-zero basis row")
        return row
    row[first[0] : first[0] + spec.degree + 1] = vals[0]
    return row


def fourier_row(t: float, spec: BasisSpec) -> np.ndarray:
    """(cos(2*pi*k*t/period), sin(2*pi*k*t/period)) pairs for k = 1..n_harmonics."""
    if spec.kind != "fourier":
        raise ValueError("spec is not a fourier basis")
    k = np.arange(1, spec.n_harmonics + 1)
    angle = 2.0 * np.pi * k * (t / spec.period)
    row = np.empty(2 * spec.n_harmonics)
    row[0::2] = np.cos(angle)
    row[1::2] = np.sin(angle)
    return row


def build_design(x: np.ndarray, spec: BasisSpec, column_offset: int = 0) -> DesignMatrix:
    """Stack basis rows for every entry of x into a DesignMatrix."""
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("covariate values must be finite")
    n = x.size
    if spec.kind == "identity":
        return DesignMatrix(x[:, None].copy(), spec, column_offset)
    if spec.kind == "fourier":
        k = np.arange(1, spec.n_harmonics + 1)
        angle = 2.0 * np.pi * np.outer(x / spec.period, k)
        values = np.empty((n, 2 * spec.n_harmonics))
        values[:, 0::2] = np.cos(angle)
        values[:, 1::2] = np.sin(angle)
        return DesignMatrix(values, spec, column_offset)

    first, vals, oob = _bspline_values(x, spec)
    values = np.zeros((n, spec.n_basis))
    rows = np.arange(n)[:, None]
    cols = first[:, None] + np.arange(spec.degree + 1)[None, :]
    values[rows, cols] = vals
    if oob.any():
        values[oob] = 0.0
        warnings.warn(
            f"{int(oob.sum())} of {n} points fall outside the knot range; "
            "their basis rows are zero"
        )
    return DesignMatrix(values, spec, column_offset, out_of_range=oob)
