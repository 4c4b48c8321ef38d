"""Algebra between the optical knobs and the Ising problem they realise.

The detector centre intensity is ``I(x) = |sum_l c_l x_l + F|^2`` with
``c_l = xi_l + a_l eta_l`` and ``F = -sum_m sigma_m z_m`` (fixed phase pi on
the third section).  Expanding the square gives

    I(x) = C + sum_{l<k} J_lk x_l x_k + sum_l h_l x_l

which is what :func:`effective_coupling` and :func:`effective_field` return.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .errors import ConfigurationError, InfeasibleError
from .lattice import IsingProblem, RelationMatrix, _frozen

log = logging.getLogger(__name__)

FIXED_PHASE_FACTOR = -1.0  # exp(j*pi) on the third section

SENSES = ("maximize", "minimize")

POLISH_LIMIT = 64  # largest n given the joint least-squares polish after NNLS


@dataclass(frozen=True, eq=False)
class IntensityProfile:
    """Per-spin amplitudes of the two modulated sections and the fixed third section."""

    xi: np.ndarray
    eta: np.ndarray
    sigma: np.ndarray = ()
    z: np.ndarray = ()

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float).reshape(-1)
        z = np.asarray(self.z, dtype=float).reshape(-1)
        if xi.ndim != 1 or xi.shape != eta.shape:
            raise ValueError("xi and eta must be 1-D vectors of equal length")
        if sigma.shape != z.shape:
            raise ValueError("sigma and z must have equal length")
        if np.any(xi < 0) or np.any(eta < 0) or np.any(sigma < 0):
            raise ValueError("amplitudes must be non-negative")
        if z.size and not np.all(np.abs(z) == 1):
            raise ValueError("fixed third-section spins must be -1 or +1")
        for name, arr in (("xi", xi), ("eta", eta), ("sigma", sigma), ("z", z)):
            object.__setattr__(self, name, _frozen(arr))

    @property
    def n(self) -> int:
        return self.xi.size

    @property
    def n_fixed(self) -> int:
        return self.sigma.size

    def replace(self, **changes) -> "IntensityProfile":
        kw = dict(xi=self.xi, eta=self.eta, sigma=self.sigma, z=self.z)
        kw.update(changes)
        return IntensityProfile(**kw)


def spin_coefficients(intensities: IntensityProfile, A: RelationMatrix) -> np.ndarray:
    """Complex field weight ``xi_l + a_l eta_l`` carried by spin l."""
    if A.n != intensities.n:
        raise ValueError("relation matrix and intensity profile sizes differ")
    return intensities.xi + A.entries * intensities.eta


def fixed_field(intensities: IntensityProfile) -> float:
    return FIXED_PHASE_FACTOR * float(intensities.sigma @ intensities.z)


def effective_coupling(intensities: IntensityProfile, A: RelationMatrix) -> np.ndarray:
    if A.n != intensities.n:
        raise ValueError("relation matrix and intensity profile sizes differ")
    xi, eta, a = intensities.xi, intensities.eta, A.entries
    re_a = a.real
    re_aa = (a[:, None] * np.conj(a)[None, :]).real
    J = (
        2 * np.outer(xi, xi)
        + 2 * np.outer(re_a * eta, xi)
        + 2 * np.outer(xi, re_a * eta)
        + 2 * re_aa * np.outer(eta, eta)
    )
    np.fill_diagonal(J, 0.0)
    # the four terms are individually symmetric, but rounding can differ by an ulp
    return (J + J.T) / 2


def effective_field(intensities: IntensityProfile, A: RelationMatrix):
    """Return ``(J, h)`` including the cross terms with the fixed third section.

    Raises
    ------
    ConfigurationError
        If the profile has no third section.
    """
    if intensities.n_fixed == 0:
        raise ConfigurationError("external field needs a non-empty third section")
    J = effective_coupling(intensities, A)
    c = spin_coefficients(intensities, A)
    h = 2 * c.real * fixed_field(intensities)
    return J, h


def intensity_constant(intensities: IntensityProfile, A: RelationMatrix) -> float:
    """Spin-independent part ``C`` of the centre intensity."""
    c = spin_coefficients(intensities, A)
    return float(np.sum(np.abs(c) ** 2) + fixed_field(intensities) ** 2)


@dataclass(frozen=True, eq=False)
class Knobs:
    """Everything loaded onto the modulator, plus whether the loop seeks a bright or dark centre.

    ``sense="maximize"`` drives the centre intensity up (bright target); the
    machine then minimises ``-I``.  ``sense="minimize"`` uses a dark target and
    minimises ``+I``.
    """

    intensities: IntensityProfile
    relation: RelationMatrix
    sense: str = "maximize"

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"sense must be one of {SENSES}, got {self.sense!r}")
        if self.relation.n != self.intensities.n:
            raise ValueError("relation matrix and intensity profile sizes differ")

    @property
    def n(self) -> int:
        return self.intensities.n

    def effective_problem(self) -> IsingProblem:
        """Ising problem whose energy is exactly ``-I(x)`` (maximize) or ``+I(x)`` (minimize)."""
        if self.intensities.n_fixed:
            J, h = effective_field(self.intensities, self.relation)
        else:
            J, h = effective_coupling(self.intensities, self.relation), np.zeros(self.n)
        C = intensity_constant(self.intensities, self.relation)
        if self.sense == "maximize":
            return IsingProblem(J, h, -C)
        return IsingProblem(-J, -h, C)


def negative_ratio_construction(n: int, r: int, xi: float = 1.0, eta: float = 2.0):
    """Uniform amplitudes with ``r`` relation entries ``-j`` and ``n - r`` entries ``+j``.

    With ``eta > xi`` exactly the ``r (n - r)`` pairs of opposite relation sign
    are negative.
    """
    if not 0 <= r <= n:
        raise ValueError(f"need 0 <= r <= n, got r={r}, n={n}")
    signs = np.array([-1] * r + [1] * (n - r))
    profile = IntensityProfile(np.full(n, float(xi)), np.full(n, float(eta)))
    return profile, RelationMatrix.quadrature(signs)


def negative_interaction_count(J: np.ndarray) -> int:
    return int(np.sum(np.triu(J, 1) < 0))


def zero_interaction(intensities: IntensityProfile, A: RelationMatrix, r: int, k: int) -> IntensityProfile:
    """Retune amplitudes of spins ``r``/``k`` so that ``J_rk`` vanishes.

    Only one amplitude among ``eta_r, xi_r, eta_k, xi_k`` is changed (tried in
    that order), so couplings between other spins are untouched.

    Raises
    ------
    InfeasibleError
        If every single-amplitude solution is negative or undefined.
    """
    if r == k:
        raise ValueError("r and k must differ")
    a = A.entries
    xi = intensities.xi.copy()
    eta = intensities.eta.copy()

    def coefficient_and_rest(name, i, j):
        # J_ij = alpha * knob + beta, linear in the chosen amplitude of spin i
        re_i, re_j, re_ij = a[i].real, a[j].real, (a[i] * np.conj(a[j])).real
        if name == "eta":
            alpha = 2 * re_i * xi[j] + 2 * re_ij * eta[j]
            beta = 2 * xi[i] * xi[j] + 2 * re_j * xi[i] * eta[j]
        else:
            alpha = 2 * xi[j] + 2 * re_j * eta[j]
            beta = 2 * re_i * xi[j] * eta[i] + 2 * re_ij * eta[i] * eta[j]
        return alpha, beta

    current = effective_coupling(intensities, A)[r, k]
    if current == 0:
        return intensities
    witness = []
    for name, i, j in (("eta", r, k), ("xi", r, k), ("eta", k, r), ("xi", k, r)):
        alpha, beta = coefficient_and_rest(name, i, j)
        if alpha == 0:
            witness.append((name, i, None))
            continue
        value = -beta / alpha
        witness.append((name, i, value))
        if value >= 0:
            if name == "eta":
                eta[i] = value
            else:
                xi[i] = value
            return intensities.replace(xi=xi, eta=eta)
    raise InfeasibleError(f"cannot zero J[{r},{k}] with non-negative amplitudes", witness)


@dataclass(frozen=True, eq=False)
class CouplingReport:
    J_effective: np.ndarray
    h_effective: np.ndarray
    residual: float

    def __post_init__(self):
        if self.residual < 0:
            raise ValueError("residual must be non-negative")


def _offdiag_residual(J_eff, J_target) -> float:
    D = J_eff - J_target
    np.fill_diagonal(D, 0.0)
    return float(np.linalg.norm(D))


def _top_two(M: np.ndarray):
    n = M.shape[0]
    if n > 300:
        from scipy.sparse.linalg import eigsh

        w, V = eigsh(M, k=2, which="LA")
    else:
        w, V = np.linalg.eigh(M)
        w, V = w[-2:], V[:, -2:]
    return np.clip(w, 0, None), V


def _rank_two_factor(J: np.ndarray, iterations: int, tol: float) -> np.ndarray:
    """``B`` (n x 2) with ``offdiag(B B^T)`` close to ``J / 2``, by diagonal imputation."""
    M = J / 2.0
    n = M.shape[0]
    scale = max(float(np.abs(M).max()), 1e-300)
    d = np.zeros(n)
    B = np.zeros((n, 2))
    for _ in range(iterations):
        full = M.copy()
        full[np.diag_indices(n)] = d
        w, V = _top_two(full)
        B = V * np.sqrt(w)
        d_new = np.sum(B * B, axis=1)
        if np.max(np.abs(d_new - d)) <= tol * scale:
            break
        d = d_new
    return B


def _orient(B: np.ndarray):
    """Rotate the two factors so the first is as non-negative as possible."""
    norms = np.hypot(B[:, 0], B[:, 1])
    live = norms > 1e-14 * max(norms.max(initial=0.0), 1e-300)
    if not np.any(live):
        return np.zeros(B.shape[0]), np.zeros(B.shape[0])
    ang = np.sort(np.arctan2(B[live, 1], B[live, 0]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    i = int(np.argmax(gaps))
    start = ang[(i + 1) % ang.size]
    centre = start + (2 * np.pi - gaps[i]) / 2
    q = np.array([np.cos(centre), np.sin(centre)])
    q_perp = np.array([-np.sin(centre), np.cos(centre)])
    return B @ q, B @ q_perp


def _refine(J, xi, eta, s, iterations, tol):
    """Coordinate-wise non-negative least squares on xi, then eta, signs fixed."""
    n = J.shape[0]
    S = np.outer(s, s).astype(float)
    xi, eta = xi.copy(), eta.copy()

    def residual():
        return _offdiag_residual(2 * np.outer(xi, xi) + 2 * S * np.outer(eta, eta), J)

    prev = residual()
    jscale = max(float(np.linalg.norm(J)), 1.0)
    for _ in range(iterations):
        for l in range(n):
            w = xi.copy()
            w[l] = 0.0
            den = 2 * (w @ w)
            if den > 0:
                xi[l] = max(0.0, float(w @ (J[l] - 2 * S[l] * eta[l] * eta)) / den)
        for l in range(n):
            w = S[l] * eta
            w[l] = 0.0
            den = 2 * (w @ w)
            if den > 0:
                eta[l] = max(0.0, float(w @ (J[l] - 2 * xi[l] * xi)) / den)
        cur = residual()
        if abs(prev - cur) <= tol * jscale:
            prev = cur
            break
        prev = cur
    if 2 <= n <= POLISH_LIMIT and prev > tol * jscale:
        xi, eta, prev = _polish(J, xi, eta, s, prev)
    return xi, eta, prev


def _polish(J, xi, eta, s, current):
    """Bounded joint least squares from the NNLS point (coordinate descent can crawl along valleys)."""
    n = J.shape[0]
    iu, ku = np.triu_indices(n, 1)
    ss = (s[iu] * s[ku]).astype(float)
    target = J[iu, ku]
    rows = np.arange(iu.size)

    def fun(p):
        a, b = p[:n], p[n:]
        return 2 * a[iu] * a[ku] + 2 * ss * b[iu] * b[ku] - target

    def jac(p):
        a, b = p[:n], p[n:]
        out = np.zeros((iu.size, 2 * n))
        out[rows, iu] = 2 * a[ku]
        out[rows, ku] = 2 * a[iu]
        out[rows, n + iu] = 2 * ss * b[ku]
        out[rows, n + ku] = 2 * ss * b[iu]
        return out

    fit = least_squares(fun, np.concatenate([xi, eta]), jac=jac, bounds=(0.0, np.inf), xtol=1e-15,
                        ftol=1e-15, gtol=1e-15, max_nfev=200)
    # residual over the full off-diagonal counts each pair twice
    res = float(np.sqrt(2.0) * np.linalg.norm(fit.fun))
    if res < current:
        return fit.x[:n].copy(), fit.x[n:].copy(), res
    return xi, eta, current


def fit_intensities(J_target, iterations: int = 50, tol: float = 1e-10):
    """Find quadrature knobs whose effective coupling best matches ``J_target``.

    The representable family is ``2 xi xi^T + 2 (s*eta)(s*eta)^T`` off the
    diagonal.  A rank-two factorisation (diagonal imputation) is rotated so
    its first factor is non-negative; that gives the initial ``xi`` and the
    sign pattern ``s``.  Coordinate-wise NNLS then polishes ``xi`` and ``eta``.
    The signs of the leading and second eigenvectors of ``J_target`` are
    also tried, and the best candidate is kept.

    Returns
    -------
    intensities, relation, report
        ``report.residual`` is the off-diagonal Frobenius distance.
    """
    J = np.asarray(J_target, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError("J_target must be square")
    if not np.allclose(J, J.T, rtol=0, atol=1e-12 * max(1.0, np.abs(J).max(initial=0))):
        raise ValueError("J_target must be symmetric")
    J = (J + J.T) / 2
    np.fill_diagonal(J, 0.0)
    n = J.shape[0]

    B = _rank_two_factor(J, iterations=2000 if n <= 300 else 200, tol=1e-15)
    u, v = _orient(B)
    candidates = [(np.clip(u, 0, None), np.abs(v), np.where(v < 0, -1, 1))]
    if n > 1:
        _, V = np.linalg.eigh(J) if n <= 300 else _top_two(J)
        for vec in (V[:, -1], V[:, -2]):
            s = np.where(vec < 0, -1, 1)
            candidates.append((np.clip(u, 0, None), np.abs(v), s))

    best = None
    for xi0, eta0, s in candidates:
        xi, eta, res = _refine(J, xi0, eta0, s, iterations, tol)
        if best is None or res < best[3]:
            best = (xi, eta, s, res)
        if res == 0.0:
            break
    xi, eta, s, _ = best
    profile = IntensityProfile(xi, eta)
    relation = RelationMatrix.quadrature(s)
    J_eff = effective_coupling(profile, relation)
    report = CouplingReport(J_eff, np.zeros(n), _offdiag_residual(J_eff, J))
    log.debug("fit_intensities n=%d residual=%.3e", n, report.residual)
    return profile, relation, report


# -- matrix files -----------------------------------------------------------

def save_matrix_dense(path, J) -> None:
    np.savetxt(path, np.asarray(J, dtype=float), fmt="%.17g")


def load_matrix_dense(path) -> np.ndarray:
    J = np.loadtxt(path, dtype=float, ndmin=2)
    if J.shape[0] != J.shape[1]:
        raise ValueError(f"{path}: dense matrix is not square ({J.shape})")
    return J


def save_matrix_triplets(path, J) -> None:
    """Upper-triangle non-zeros as ``l k value`` lines after a ``# n`` header."""
    J = np.asarray(J, dtype=float)
    rows, cols = np.nonzero(np.triu(J, 1))
    with open(path, "w") as fh:
        fh.write(f"# n {J.shape[0]}\n")
        for l, k in zip(rows, cols):
            fh.write(f"{l} {k} {J[l, k]:.17g}\n")


def load_matrix_triplets(path, n: int | None = None) -> np.ndarray:
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.strip()
        if not text:
            continue
        if text.startswith("#"):
            parts = text[1:].split()
            if len(parts) == 2 and parts[0] == "n" and n is None:
                n = int(parts[1])
            continue
        parts = text.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'l k value'")
        entries.append((int(parts[0]), int(parts[1]), float(parts[2])))
    if n is None:
        n = 1 + max((max(l, k) for l, k, _ in entries), default=-1)
    J = np.zeros((n, n))
    for l, k, w in entries:
        if l == k:
            raise ValueError(f"{path}: diagonal entry ({l},{k}) not allowed")
        J[l, k] = J[k, l] = w
    return J


def load_matrix(path) -> np.ndarray:
    """Files starting with a ``# n`` header are triplets, anything else is dense."""
    text = Path(path).read_text()
    if text.lstrip().startswith("# n "):
        return load_matrix_triplets(path)
    return load_matrix_dense(path)
