"""Linear operator algebra: composable maps with exact adjoints.

All operators act on real vectors along the last axis, so every map is
real-linear and every adjoint is an exact transpose. Complex-valued signals
are carried as interleaved real pairs [re0, im0, re1, im1, ...]; under that
convention the unitary discrete Fourier transform is an orthogonal real map
whose adjoint is its inverse.

Operators are immutable after construction and safe to share across threads.
Internal caches (dense forms, innovation factorizations) are write-once
memoizations and do not change observable behavior.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

DENSE_CAP = 2 ** 22  # max in_dim * out_dim entries for to_dense()


class DimensionMismatch(ValueError):
    """Vector length does not match the operator's expected dimension."""

    def __init__(self, what, expected, actual):
        self.what = what
        self.expected = int(expected)
        self.actual = int(actual)
        super().__init__(f"{what}: expected length {expected}, got {actual}")


class DenseCapExceeded(ValueError):
    """Dense materialization refused because in_dim*out_dim exceeds the cap."""


def _as_vec(v, dim, what):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] != dim:
        actual = v.shape[-1] if v.ndim else 1
        raise DimensionMismatch(what, dim, actual)
    return v


def interleave(z):
    """Complex array (..., N) -> interleaved real array (..., 2N)."""
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],), dtype=float)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def deinterleave(v):
    """Interleaved real array (..., 2N) -> complex array (..., N)."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] % 2:
        raise ValueError(f"interleaved length must be even, got {v.shape[-1]}")
    return v[..., 0::2] + 1j * v[..., 1::2]


class LinearOperator:
    """Base class for all linear maps.

    Subclasses implement ``_apply`` and ``_adjoint`` on arrays of shape
    (..., dim); ``apply``/``adjoint_apply`` add dimension checks. The
    ``innovation_*`` methods solve against (c * H Hᵀ + σ² I); structured
    kinds override the cheap hooks, everything else falls back to a cached
    dense factorization.
    """

    kind = "abstract"

    def __init__(self, in_dim, out_dim):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self._dense = None
        self._gram_out = None
        self._innovation_cache = {}

    # -- core action ------------------------------------------------------

    def _apply(self, v):
        raise NotImplementedError

    def _adjoint(self, u):
        raise NotImplementedError

    def apply(self, v):
        """H v, batched over leading axes."""
        return self._apply(_as_vec(v, self.in_dim, f"{self.kind}.apply"))

    def adjoint_apply(self, u):
        """Hᵀ u, batched over leading axes."""
        return self._adjoint(_as_vec(u, self.out_dim, f"{self.kind}.adjoint"))

    def gram_apply(self, v):
        """Hᵀ H v. Always the literal composition, so fused paths cannot drift."""
        return self.adjoint_apply(self.apply(v))

    def adjoint(self):
        """The adjoint as an operator; adjoint of the adjoint is self."""
        return _Adjoint(self)

    # -- dense materialization ---------------------------------------------

    def to_dense(self, cap=DENSE_CAP):
        """Dense (out_dim, in_dim) matrix; column j is H e_j."""
        if self.in_dim * self.out_dim > cap:
            raise DenseCapExceeded(
                f"{self.kind}: {self.out_dim}x{self.in_dim} exceeds cap of {cap} entries"
            )
        if self._dense is None:
            mat = self.apply(np.eye(self.in_dim)).T
            mat.flags.writeable = False
            self._dense = mat
        return self._dense

    # -- innovation system (c * H Hᵀ + σ² I) --------------------------------

    @property
    def has_orthonormal_rows(self):
        """True when H Hᵀ = I, which lets compositions peel this stage."""
        return False

    def _diagonal_entries(self):
        """Entries d when H = diag(d) (square), else None."""
        return None

    def _gram_reduced(self):
        """Operator with the same H Hᵀ (compositions peel coisometric stages)."""
        return self

    def _gram_dual_diagonal(self):
        """Diagonal d with H Hᵀ = diag(d), else None."""
        d = self._diagonal_entries()
        if d is not None:
            return d * d
        if self.has_orthonormal_rows:
            return np.ones(self.out_dim)
        return None

    def _gram_dual_symbol(self):
        """Full-FFT symbol t with H = circulant(t) (so H Hᵀ has spectrum |t|²)."""
        return None

    def _gram_out_dense(self):
        if self._gram_out is None:
            hd = self.to_dense()
            g = hd @ hd.T
            g.flags.writeable = False
            self._gram_out = g
        return self._gram_out

    def _innovation_factor(self, c, sigma2):
        key = (float(c), float(sigma2))
        if key not in self._innovation_cache:
            s = c * self._gram_out_dense() + sigma2 * np.eye(self.out_dim)
            self._innovation_cache[key] = scipy.linalg.cho_factor(s, lower=True)
        return self._innovation_cache[key]

    def innovation_solve(self, c, sigma2, r):
        """Solve (c H Hᵀ + σ² I) z = r, batched over leading axes of r."""
        red = self._gram_reduced()
        if red is not self:
            return red.innovation_solve(c, sigma2, r)
        d = self._gram_dual_diagonal()
        if d is not None:
            return r / (c * d + sigma2)
        t = self._gram_dual_symbol()
        if t is not None:
            denom = c * np.abs(t) ** 2 + sigma2
            return np.fft.ifft(np.fft.fft(r, axis=-1) / denom, axis=-1).real
        cho = self._innovation_factor(c, sigma2)
        r = np.asarray(r, dtype=float)
        flat = r.reshape(-1, self.out_dim)
        z = scipy.linalg.cho_solve(cho, flat.T).T
        return z.reshape(r.shape)

    def innovation_logdet(self, c, sigma2):
        """log det(c H Hᵀ + σ² I)."""
        red = self._gram_reduced()
        if red is not self:
            return red.innovation_logdet(c, sigma2)
        d = self._gram_dual_diagonal()
        if d is not None:
            return float(np.sum(np.log(c * d + sigma2)))
        t = self._gram_dual_symbol()
        if t is not None:
            return float(np.sum(np.log(c * np.abs(t) ** 2 + sigma2)))
        cho, _ = self._innovation_factor(c, sigma2)
        return float(2.0 * np.sum(np.log(np.diag(cho))))

    def innovation_inverse_trace(self, c, sigma2):
        """trace((c H Hᵀ + σ² I)^{-1})."""
        red = self._gram_reduced()
        if red is not self:
            return red.innovation_inverse_trace(c, sigma2)
        d = self._gram_dual_diagonal()
        if d is not None:
            return float(np.sum(1.0 / (c * d + sigma2)))
        t = self._gram_dual_symbol()
        if t is not None:
            return float(np.sum(1.0 / (c * np.abs(t) ** 2 + sigma2)))
        cho, _ = self._innovation_factor(c, sigma2)
        linv = scipy.linalg.solve_triangular(
            cho, np.eye(self.out_dim), lower=True
        )
        return float(np.sum(linv ** 2))

    def __repr__(self):
        return f"<{type(self).__name__} {self.out_dim}x{self.in_dim}>"


class _Adjoint(LinearOperator):
    kind = "adjoint"

    def __init__(self, inner):
        super().__init__(inner.out_dim, inner.in_dim)
        self.inner = inner

    def _apply(self, v):
        return self.inner._adjoint(v)

    def _adjoint(self, u):
        return self.inner._apply(u)

    def adjoint(self):
        return self.inner


class Identity(LinearOperator):
    kind = "identity"

    def __init__(self, dim):
        super().__init__(dim, dim)

    def _apply(self, v):
        return v.copy()

    def _adjoint(self, u):
        return u.copy()

    @property
    def has_orthonormal_rows(self):
        return True

    def _diagonal_entries(self):
        return np.ones(self.in_dim)


class Scale(LinearOperator):
    kind = "scale"

    def __init__(self, dim, factor):
        super().__init__(dim, dim)
        self.factor = float(factor)

    def _apply(self, v):
        return self.factor * v

    def _adjoint(self, u):
        return self.factor * u

    @property
    def has_orthonormal_rows(self):
        return abs(self.factor) == 1.0

    def _diagonal_entries(self):
        return np.full(self.in_dim, self.factor)


class DenseMatrix(LinearOperator):
    kind = "dense-matrix"

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("dense-matrix requires a 2-D array")
        matrix.flags.writeable = False
        super().__init__(matrix.shape[1], matrix.shape[0])
        self.matrix = matrix
        self._dense = matrix

    def _apply(self, v):
        return v @ self.matrix.T

    def _adjoint(self, u):
        return u @ self.matrix


class CoordinateMask(LinearOperator):
    """Square mask that zeroes all coordinates outside ``keep``.

    Kept square (out_dim == in_dim) with zeroed rows, matching zero-filled
    reconstruction conventions; masks are then self-adjoint projections.
    """

    kind = "coordinate-mask"

    def __init__(self, dim, keep):
        super().__init__(dim, dim)
        keep = np.asarray(sorted(set(int(i) for i in np.atleast_1d(keep))), dtype=int)
        if keep.size and (keep[0] < 0 or keep[-1] >= dim):
            raise ValueError(f"mask indices out of range for dim {dim}")
        indicator = np.zeros(dim)
        indicator[keep] = 1.0
        indicator.flags.writeable = False
        keep.flags.writeable = False
        self.keep = keep
        self.indicator = indicator

    def _apply(self, v):
        return v * self.indicator

    def _adjoint(self, u):
        return u * self.indicator

    @property
    def has_orthonormal_rows(self):
        return self.keep.size == self.in_dim

    def _diagonal_entries(self):
        return self.indicator


class DiscreteFourier(LinearOperator):
    """Unitary DFT over a complex grid stored as interleaved real pairs.

    ``shape`` is the complex grid shape (1-D or 2-D); the real vector length
    is 2 * prod(shape). The adjoint is the inverse transform.
    """

    kind = "discrete-Fourier"

    def __init__(self, shape):
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        n = int(np.prod(shape))
        super().__init__(2 * n, 2 * n)
        self.shape = shape

    def _transform(self, v, inverse):
        lead = v.shape[:-1]
        z = deinterleave(v).reshape(lead + self.shape)
        axes = tuple(range(-len(self.shape), 0))
        fn = np.fft.ifftn if inverse else np.fft.fftn
        z = fn(z, axes=axes, norm="ortho")
        return interleave(z.reshape(lead + (-1,)))

    def _apply(self, v):
        return self._transform(v, inverse=False)

    def _adjoint(self, u):
        return self._transform(u, inverse=True)

    @property
    def has_orthonormal_rows(self):
        return True

    def _gram_dual_diagonal(self):
        return np.ones(self.out_dim)


class CircularConvolution(LinearOperator):
    """Circular convolution on real signals; kernel taps sit at lags 0..L-1."""

    kind = "circular-convolution"

    def __init__(self, dim, kernel):
        super().__init__(dim, dim)
        kernel = np.array(kernel, dtype=float).ravel()
        if kernel.size == 0 or kernel.size > dim:
            raise ValueError("kernel must be non-empty and no longer than dim")
        kernel.flags.writeable = False
        self.kernel = kernel
        padded = np.zeros(dim)
        padded[: kernel.size] = kernel
        self._symbol = np.fft.fft(padded)
        self._symbol.flags.writeable = False

    def _apply(self, v):
        return np.fft.ifft(np.fft.fft(v, axis=-1) * self._symbol, axis=-1).real

    def _adjoint(self, u):
        return np.fft.ifft(
            np.fft.fft(u, axis=-1) * np.conj(self._symbol), axis=-1
        ).real

    def _gram_dual_symbol(self):
        return self._symbol


class FoldDownsample(LinearOperator):
    """Keep every ``factor``-th sample starting at index 0; adjoint zero-inserts."""

    kind = "fold-downsample"

    def __init__(self, in_dim, factor):
        factor = int(factor)
        if factor < 1:
            raise ValueError("factor must be a positive integer")
        out_dim = -(-int(in_dim) // factor)
        super().__init__(in_dim, out_dim)
        self.factor = factor

    def _apply(self, v):
        return v[..., :: self.factor].copy()

    def _adjoint(self, u):
        out = np.zeros(u.shape[:-1] + (self.in_dim,))
        out[..., :: self.factor] = u
        return out

    @property
    def has_orthonormal_rows(self):
        return True

    def _gram_dual_diagonal(self):
        return np.ones(self.out_dim)


class Composition(LinearOperator):
    """Stages applied in list order: composition([A, B]) v = B(A(v))."""

    kind = "composition"

    def __init__(self, stages):
        stages = tuple(stages)
        if not stages:
            raise ValueError("composition requires at least one stage")
        for a, b in zip(stages, stages[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionMismatch(
                    f"composition stage chain {a.kind}->{b.kind}",
                    a.out_dim,
                    b.in_dim,
                )
        super().__init__(stages[0].in_dim, stages[-1].out_dim)
        self.stages = stages

    def _apply(self, v):
        for stage in self.stages:
            v = stage._apply(v)
        return v

    def _adjoint(self, u):
        for stage in reversed(self.stages):
            u = stage._adjoint(u)
        return u

    @property
    def has_orthonormal_rows(self):
        return all(s.has_orthonormal_rows for s in self.stages)

    def _gram_reduced(self):
        # C = Sk...S1 and S1 S1ᵀ = I make C Cᵀ equal (Sk...S2)(Sk...S2)ᵀ.
        stages = list(self.stages)
        peeled = False
        while len(stages) > 1 and stages[0].has_orthonormal_rows:
            stages.pop(0)
            peeled = True
        if not peeled:
            return self
        return stages[0] if len(stages) == 1 else Composition(stages)


class ConvexCombination(LinearOperator):
    """(1 - alpha) I + alpha * inner, for square inner operators."""

    kind = "convex-combo"

    def __init__(self, alpha, inner):
        alpha = float(alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        if inner.in_dim != inner.out_dim:
            raise DimensionMismatch(
                "convex-combo inner operator must be square",
                inner.in_dim,
                inner.out_dim,
            )
        super().__init__(inner.in_dim, inner.out_dim)
        self.alpha = alpha
        self.inner = inner

    def _apply(self, v):
        return (1.0 - self.alpha) * v + self.alpha * self.inner._apply(v)

    def _adjoint(self, u):
        return (1.0 - self.alpha) * u + self.alpha * self.inner._adjoint(u)

    def _diagonal_entries(self):
        d = self.inner._diagonal_entries()
        if d is None:
            return None
        return (1.0 - self.alpha) + self.alpha * d

    def _gram_dual_symbol(self):
        t = self.inner._gram_dual_symbol()
        if t is None:
            return None
        return (1.0 - self.alpha) + self.alpha * t


# -- degradation ensembles --------------------------------------------------


class DegradationEnsemble:
    """Finite family {H_1..H_b} with selection weights and a shared noise level."""

    def __init__(self, members, sigma, weights=None):
        members = tuple(members)
        if not members:
            raise ValueError("ensemble requires at least one member")
        in_dim = members[0].in_dim
        for m in members:
            if m.in_dim != in_dim:
                raise DimensionMismatch("ensemble member in_dim", in_dim, m.in_dim)
        if weights is None:
            weights = np.full(len(members), 1.0 / len(members))
        weights = np.array(weights, dtype=float)
        if weights.shape != (len(members),):
            raise ValueError("weights length must match member count")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        sigma = float(sigma)
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        weights.flags.writeable = False
        self.members = members
        self.weights = weights
        self.sigma = sigma

    @property
    def size(self):
        return len(self.members)

    @property
    def in_dim(self):
        return self.members[0].in_dim

    def __iter__(self):
        return iter(self.members)


def sample_degradation(ens, rng):
    """Draw (index, member) from the ensemble's weight distribution."""
    idx = int(rng.choice(ens.size, p=ens.weights))
    return idx, ens.members[idx]


# -- verification helpers -----------------------------------------------------


def adjoint_mismatch(op, rng, trials=100):
    """Worst relative gap between <u, Hv> and <Hᵀu, v> over random pairs."""
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(op.in_dim)
        u = rng.standard_normal(op.out_dim)
        a = float(np.dot(u, op.apply(v)))
        b = float(np.dot(op.adjoint_apply(u), v))
        scale = max(abs(a), abs(b), np.linalg.norm(u) * np.linalg.norm(v), 1e-300)
        worst = max(worst, abs(a - b) / scale)
    return worst


def gram_operator_norm(op, iters=200):
    """Power-iteration estimate of ||Hᵀ H||_2 (deterministic start vector)."""
    v = np.linspace(1.0, 2.0, op.in_dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = op.gram_apply(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam = float(np.dot(v, op.gram_apply(v)))
    return lam


# -- k-space row masks --------------------------------------------------------


def uniform_row_mask(n_rows, accel, offset=0, acs_lines=0):
    """Equidistant row sampling plus a fully sampled center band."""
    rows = np.zeros(n_rows, dtype=bool)
    rows[offset % accel :: accel] = True
    if acs_lines:
        start = (n_rows - acs_lines) // 2
        rows[start : start + acs_lines] = True
    return rows


def random_row_mask(n_rows, accel, acs_lines, rng):
    """Random row sampling at ~n/accel total rows, center band always included."""
    rows = np.zeros(n_rows, dtype=bool)
    if acs_lines:
        start = (n_rows - acs_lines) // 2
        rows[start : start + acs_lines] = True
    target = max(int(round(n_rows / accel)), int(rows.sum()))
    candidates = np.flatnonzero(~rows)
    extra = target - int(rows.sum())
    if extra > 0:
        chosen = rng.choice(candidates, size=min(extra, candidates.size), replace=False)
        rows[chosen] = True
    return rows


def row_mask_indices(shape, rows):
    """Kept interleaved-vector indices for the given k-space rows.

    Row masks are specified on the centered (fftshifted) grid, so a band in
    the middle of ``rows`` is a fully sampled region around DC; indices are
    converted to the unshifted transform order here.
    """
    h, w = shape
    rows = np.asarray(rows, dtype=bool)
    if rows.shape != (h,):
        raise ValueError(f"row mask must have shape ({h},)")
    kept = []
    for r in np.flatnonzero(rows):
        base = 2 * ((r - h // 2) % h) * w
        kept.extend(range(base, base + 2 * w))
    return np.asarray(sorted(kept), dtype=int)


def masked_fourier(shape, rows):
    """Row-subsampled unitary 2-D Fourier operator on interleaved vectors."""
    dft = DiscreteFourier(shape)
    mask = CoordinateMask(dft.out_dim, row_mask_indices(shape, rows))
    return Composition([dft, mask])
