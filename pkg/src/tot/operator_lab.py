"""Spectral identification of the observation kernel on finite state spaces.

From the stationary joint p(x_{t-2}, x_{t-1}, x_t, x_{t+1}) alone, this module
recovers the kernel p(x_{t+1} | x_t, z_t) (up to a relabeling of z) and the
eigenvalue function

    k(z) = P_x[z, b, c] P_x[z, b', c'] / (P_x[z, b, c'] P_x[z, b', c])

for a probe (c = x_t, c' = xbar_t, b = x_{t-1}, b' = xbar_{t-1}).  With
M(c, b)[d, a] = p(x_{t+1}=d, x_t=c, x_{t-1}=b, x_{t-2}=a), the matrix

    AB = [M(c, b) M(c', b)^-1] [M(c', b') M(c, b')^-1]

equals L diag(k) L^-1, where L[:, z] = p(x_{t+1} | x_t=c, z), so its
eigenvectors normalized to unit sum are the kernel columns.
"""
from __future__ import annotations

import itertools
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .chains import DiscreteLatentChain

COND_LIMIT = 1e10
GAP_LIMIT = 1e-8
IMAG_LIMIT = 1e-10


class InjectivityError(ValueError):
    """A joint slice is numerically singular (injectivity fails)."""


class UniquenessError(ValueError):
    """The spectrum of AB does not determine a unique decomposition."""


@dataclass(frozen=True)
class Probe:
    x_t: int
    xbar_t: int
    x_prev: int
    xbar_prev: int

    def __post_init__(self):
        if self.x_t == self.xbar_t or self.x_prev == self.xbar_prev:
            raise ValueError("probe needs x_t != xbar_t and x_prev != xbar_prev")

    def as_tuple(self):
        return (self.x_t, self.xbar_t, self.x_prev, self.xbar_prev)


@dataclass
class SpectralResult:
    probe: Probe | None
    kernels: np.ndarray        # m x k, columns = p(x_{t+1} | x_t, z)
    eigenvalues: np.ndarray    # k
    permutation: np.ndarray | None = None  # permutation[j] = true state of recovered column j
    max_kernel_error: float | None = None
    max_eigen_error: float | None = None
    min_eigen_gap: float = float("inf")
    condition: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"probe": None if self.probe is None else list(self.probe.as_tuple()),
                "kernels": self.kernels.tolist(), "eigenvalues": self.eigenvalues.tolist(),
                "permutation": None if self.permutation is None else self.permutation.tolist(),
                "max_kernel_error": self.max_kernel_error, "max_eigen_error": self.max_eigen_error,
                "min_eigen_gap": self.min_eigen_gap, "condition": self.condition}


# ---------------------------------------------------------------- ground truth

PRECISIONS = ("double", "extended", "exact")


def build_joint4(chain: DiscreteLatentChain, precision: str = "double") -> np.ndarray:
    """J[a, b, c, d] = p(x_{t-2}=a, x_{t-1}=b, x_t=c, x_{t+1}=d) at stationarity.

    `precision` picks the arithmetic: "double", "extended" (long double), or
    "exact" (an object array of Fractions of the float inputs).  The slice
    inversions downstream amplify rounding in the joint by their condition
    numbers, so identification runs on the exact joint.
    """
    if precision not in PRECISIONS:
        raise ValueError(f"precision must be one of {PRECISIONS}")
    pi = chain.stationary()  # over (z_{t-2}, x_{t-2})
    Pz, Px = chain.P_z, chain.P_x
    if precision == "exact":
        pi, Pz, Px = (_to_fractions(a) for a in (pi, Pz, Px))
    elif precision == "extended":
        pi, Pz, Px = (a.astype(np.longdouble) for a in (pi, Pz, Px))
    # forward message over (z_{t-1}, a, b), then (z_t, a, b, c), then sum into d
    f1 = np.einsum("qa,qr,rab->rab", pi, Pz, Px)
    f2 = np.einsum("rab,rs,sbc->sabc", f1, Pz, Px)
    return np.einsum("sabc,su,ucd->abcd", f2, Pz, Px)


def _to_fractions(a: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape, dtype=object)
    for idx, v in np.ndenumerate(a):
        out[idx] = Fraction(float(v))
    return out


def true_kernel(chain: DiscreteLatentChain, x_t: int) -> np.ndarray:
    """L[:, z] = p(x_{t+1} | x_t, z_t = z)."""
    return chain.next_obs_kernel()[x_t].T


def k_ratio(chain: DiscreteLatentChain, probe: Probe) -> np.ndarray:
    c, c2, b, b2 = probe.as_tuple()
    P = chain.P_x
    return P[:, b, c] * P[:, b2, c2] / (P[:, b, c2] * P[:, b2, c])


def joint_slice(joint: np.ndarray, x_t: int, x_prev: int) -> np.ndarray:
    """M[d, a] = p(x_{t+1}=d, x_t, x_{t-1}, x_{t-2}=a)."""
    return joint[:, x_prev, x_t, :].T


# ---------------------------------------------------------------- identification

def _cond(M: np.ndarray, rank: int) -> float:
    s = np.linalg.svd(M, compute_uv=False)
    if s[rank - 1] <= 0:
        return float("inf")
    return float(s[0] / s[rank - 1])


def _right_divide(M1: np.ndarray, M2: np.ndarray, sweeps: int = 3) -> np.ndarray:
    """X with X @ M2 = M1.

    Object (Fraction) inputs are solved exactly; floating inputs are solved
    in double and refined with long-double residuals.
    """
    if M1.dtype == object or M2.dtype == object:
        return _exact_solve(M2.T, M1.T).T
    M1 = M1.astype(np.longdouble)
    M2 = M2.astype(np.longdouble)
    M2t = M2.T.astype(np.float64)
    X = np.linalg.solve(M2t, M1.T.astype(np.float64)).T.astype(np.longdouble)
    for _ in range(sweeps):
        R = M1 - X @ M2
        X = X + np.linalg.solve(M2t, R.T.astype(np.float64)).T
    return X


def _exact_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Gauss-Jordan solve of A X = B over the rationals."""
    n = A.shape[0]
    aug = [[Fraction(v) for v in A[i]] + [Fraction(v) for v in B[i]] for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise InjectivityError("slice is exactly singular")
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [v - f * w for v, w in zip(aug[r], aug[col])]
    out = np.empty((n, B.shape[1]), dtype=object)
    for i in range(n):
        out[i] = aug[i][n:]
    return out


def _rank_k_pinv(M: np.ndarray, rank: int) -> np.ndarray:
    U, s, Vt = np.linalg.svd(M)
    return (Vt[:rank].T / s[:rank]) @ U[:, :rank].T


def build_AB(joint: np.ndarray, probe: Probe, n_latent: int | None = None,
             cond_limit: float = COND_LIMIT) -> tuple[np.ndarray, dict]:
    """Form AB from four joint slices; returns (AB, condition numbers).

    With n_latent == m the slices are inverted exactly.  With fewer latent
    states the slices have rank n_latent and a rank-truncated pseudo-inverse
    is used, which gives AB = L diag(k) L^+ (so AB acts as L diag(k) L^-1 on
    the range of L and annihilates its complement).
    """
    m = joint.shape[0]
    r = m if n_latent is None else int(n_latent)
    if not 1 <= r <= m:
        raise ValueError("n_latent must lie in [1, m]")
    c, c2, b, b2 = probe.as_tuple()
    slices = {"M(x_t,x_prev)": joint_slice(joint, c, b), "M(xbar_t,x_prev)": joint_slice(joint, c2, b),
              "M(xbar_t,xbar_prev)": joint_slice(joint, c2, b2), "M(x_t,xbar_prev)": joint_slice(joint, c, b2)}
    conds = {name: _cond(M.astype(np.float64), r) for name, M in slices.items()}
    for name, cn in conds.items():
        if not cn <= cond_limit:
            raise InjectivityError(f"slice {name} is ill-conditioned (cond {cn:.3g} > {cond_limit:.0e})")
    if r == m:
        A = _right_divide(slices["M(x_t,x_prev)"], slices["M(xbar_t,x_prev)"])
        B = _right_divide(slices["M(xbar_t,xbar_prev)"], slices["M(x_t,xbar_prev)"])
    else:
        f = {name: M.astype(np.float64) for name, M in slices.items()}
        A = f["M(x_t,x_prev)"] @ _rank_k_pinv(f["M(xbar_t,x_prev)"], r)
        B = f["M(xbar_t,xbar_prev)"] @ _rank_k_pinv(f["M(x_t,xbar_prev)"], r)
    return (A @ B).astype(np.float64), conds


def spectral_identify(AB: np.ndarray, n_latent: int | None = None, truth_kernel=None,
                      truth_eigen=None, probe: Probe | None = None,
                      gap_limit: float = GAP_LIMIT) -> SpectralResult:
    m = AB.shape[0]
    r = m if n_latent is None else int(n_latent)
    vals, vecs = np.linalg.eig(AB)
    order = np.argsort(-np.abs(vals), kind="stable")[:r]
    vals, vecs = vals[order], vecs[:, order]
    if np.max(np.abs(vals.imag)) > IMAG_LIMIT or np.max(np.abs(vecs.imag)) > IMAG_LIMIT:
        raise UniquenessError("AB has a complex spectrum; no real decomposition at this probe")
    vals, vecs = vals.real, vecs.real
    gaps = [abs(vals[i] - vals[j]) for i in range(r) for j in range(i + 1, r)]
    if r < m:
        # kept eigenvalues must also separate from the discarded null space
        gaps.append(float(np.min(np.abs(vals))))
    min_gap = float(min(gaps)) if gaps else float("inf")
    if min_gap < gap_limit:
        raise UniquenessError(f"eigenvalues are not distinct (min gap {min_gap:.3g})")
    sums = vecs.sum(axis=0)
    if np.min(np.abs(sums)) < 1e-12:
        raise UniquenessError("an eigenvector cannot be normalized to a probability column")
    kernels = vecs / sums
    res = SpectralResult(probe, kernels, vals, min_eigen_gap=min_gap)
    if truth_kernel is not None:
        align_to_truth(res, np.asarray(truth_kernel), truth_eigen)
    return res


def align_to_truth(res: SpectralResult, truth_kernel: np.ndarray, truth_eigen=None) -> None:
    """Best column permutation onto the true kernel; fills the error fields."""
    cost = np.abs(res.kernels[:, :, None] - truth_kernel[:, None, :]).sum(axis=0)
    rows, cols = linear_sum_assignment(cost)
    perm = cols[np.argsort(rows)]
    res.permutation = perm
    res.max_kernel_error = float(np.max(np.abs(res.kernels - truth_kernel[:, perm])))
    if truth_eigen is not None:
        res.max_eigen_error = float(np.max(np.abs(res.eigenvalues - np.asarray(truth_eigen)[perm])))


def similarity_residual(AB: np.ndarray, L: np.ndarray, k: np.ndarray) -> float:
    """max |AB L - L diag(k)|."""
    return float(np.max(np.abs(AB @ L - L * k[None, :])))


# ---------------------------------------------------------------- probes and checks

def probe_candidates(m: int, x_t: int | None = None):
    xs = range(m) if x_t is None else [x_t]
    for c in xs:
        for c2, b, b2 in itertools.product(range(m), repeat=3):
            if c2 != c and b != b2:
                yield Probe(c, c2, b, b2)


def find_probe(joint: np.ndarray, n_latent: int | None = None, x_t: int | None = None,
               cond_limit: float = 1e6) -> tuple[Probe, float]:
    """Probe with the smallest estimated recovery error among valid candidates.

    Uses only the observed joint.  The score cond * |AB| / min(gap, 1) is a
    first-order bound on eigenvector perturbation.  Returns (probe, eigen-gap);
    raises UniquenessError if no candidate yields a real spectrum with
    distinct eigenvalues.
    """
    best, best_score, best_gap = None, np.inf, 0.0
    for probe in probe_candidates(joint.shape[0], x_t):
        try:
            AB, conds = build_AB(joint, probe, n_latent, cond_limit)
            res = spectral_identify(AB, n_latent, probe=probe)
        except (InjectivityError, UniquenessError):
            continue
        score = max(conds.values()) * np.max(np.abs(AB)) / min(res.min_eigen_gap, 1.0)
        if score < best_score:
            best, best_score, best_gap = probe, score, res.min_eigen_gap
    if best is None:
        raise UniquenessError("no probe point gives a unique spectral decomposition")
    return best, best_gap


def identify(chain: DiscreteLatentChain, probe: Probe | None = None, x_t: int | None = None) -> SpectralResult:
    """End to end: joint -> probe -> AB -> eigendecomposition, scored against the chain."""
    joint = build_joint4(chain, "exact")
    r = chain.k
    if probe is None:
        probe, _ = find_probe(joint, r, x_t)
    AB, conds = build_AB(joint, probe, r)
    res = spectral_identify(AB, r, true_kernel(chain, probe.x_t), k_ratio(chain, probe), probe)
    res.condition = conds
    return res


@dataclass
class AssumptionReport:
    a1_min_prob: float
    a1_ok: bool
    a2_kernel_rank: list[int]
    a2_kernel_cond: list[float]
    a2_slice_cond: float
    a2_ok: bool
    a3_min_gap: float | None
    a3_ok: bool
    a3_vacuous: bool
    probes: list[Probe]
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.a1_ok and self.a2_ok and self.a3_ok

    def to_dict(self) -> dict:
        return {"passed": self.passed, "a1_min_prob": self.a1_min_prob, "a1_ok": self.a1_ok,
                "a2_kernel_rank": self.a2_kernel_rank, "a2_kernel_cond": self.a2_kernel_cond,
                "a2_slice_cond": self.a2_slice_cond, "a2_ok": self.a2_ok,
                "a3_min_gap": self.a3_min_gap, "a3_ok": self.a3_ok, "a3_vacuous": self.a3_vacuous,
                "probes": [list(p.as_tuple()) for p in self.probes], "notes": self.notes}


def check_assumptions(chain: DiscreteLatentChain, probes=None, min_gap: float = 1e-4,
                      max_cond: float = 1e6) -> AssumptionReport:
    """Diagnostics for positivity (A1), injectivity (A2) and distinct eigenvalues (A3).

    Without explicit probes, the probe chosen by `find_probe` is checked (or
    all candidates are scanned for the A3 margin if none qualifies).
    """
    notes = []
    min_prob = float(min(chain.P_z.min(), chain.P_x.min()))
    a1 = min_prob > 0
    if not a1:
        notes.append("A1: some transition probability is zero")
    k, m = chain.k, chain.m
    K = chain.next_obs_kernel()
    ranks = [int(np.linalg.matrix_rank(K[c].T)) for c in range(m)]
    kconds = [_cond(K[c].T, k) for c in range(m)]
    joint = build_joint4(chain, "exact")
    if probes is None:
        try:
            probes = [find_probe(joint, k, cond_limit=max_cond)[0]]
        except UniquenessError:
            probes = []
            notes.append("no probe passes the conditioning and spectral checks")
    probes = [p if isinstance(p, Probe) else Probe(*p) for p in probes]
    slice_cond = 0.0
    for p in probes:
        c, c2, b, b2 = p.as_tuple()
        for (u, w) in ((c, b), (c2, b), (c2, b2), (c, b2)):
            slice_cond = max(slice_cond, _cond(joint_slice(joint, u, w).astype(np.float64), k))
    a2 = all(r == k for r in ranks) and max(kconds) <= max_cond and bool(probes) and slice_cond <= max_cond
    if k == 1:
        gap, a3, vac = None, True, True
        notes.append("A3: single latent state, distinctness is vacuous")
    else:
        vac = False
        gaps = []
        for p in probes:
            kv = k_ratio(chain, p)
            gaps.append(min(abs(kv[i] - kv[j]) for i in range(k) for j in range(i + 1, k)))
        gap = float(min(gaps)) if gaps else 0.0
        a3 = bool(gaps) and gap >= min_gap
    return AssumptionReport(min_prob, a1, ranks, kconds, slice_cond, a2, gap, a3, vac, probes, notes)
