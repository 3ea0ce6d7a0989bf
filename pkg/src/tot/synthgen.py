"""Synthetic latent-driven time series with known ground truth.

Latent step (per component i, in index order):

    z[t, i] = (lrelu(sum_l W_l[i] . z[t-l]) + V[i, :i] . z[t, :i]) * eps[t, i] + eps_z[t, i]

Observation step:

    x[t] = lrelu(lrelu(0.2 * lrelu(x[t-1] @ W_x) + z[t] + eps_o[t]) @ W_m)

with lrelu slope 0.2.  Dropping the observation edges removes the x[t-1]
branch.  Besides the four dense presets there is a sparse-mixing variant and
a drift variant whose mixing matrix is redrawn halfway through the series.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import networkx as nx
import numpy as np

from .binio import FormatError, pack_arrays, seal, unpack_arrays, unseal

SLOPE = 0.2
BURN_IN = 100
MAGIC = b"TOTD"
FORMAT_VERSION = 1


class GenerationError(RuntimeError):
    """The simulated trajectory left the finite range."""


class DatasetFormatError(FormatError):
    """A dataset file is corrupt, truncated, or of an unsupported version."""


class DatasetMismatchError(ValueError):
    """A dataset does not match the caller's expectations (e.g. dimension)."""


def lrelu(a, slope: float = SLOPE):
    return np.where(a > 0, a, slope * a)


@dataclass(frozen=True)
class GenConfig:
    n: int
    lag: int = 1
    obs_edges: bool = True
    total_steps: int = 20_000
    validation_size: int = 1024
    seed: int = 0
    noise_std_z: float = 1.0
    noise_std_o: float = 0.1
    sparse_mixing: bool = False
    drift_at: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.lag < 1:
            raise ValueError("lag must be >= 1")
        if self.total_steps < 2:
            raise ValueError("total_steps must be >= 2")
        if not 0 <= self.validation_size < self.total_steps:
            raise ValueError("validation_size must lie in [0, total_steps)")
        if self.noise_std_z < 0 or self.noise_std_o < 0:
            raise ValueError("noise scales must be non-negative")
        if self.drift_at is not None and not 0 < self.drift_at < self.total_steps:
            raise ValueError("drift_at must fall inside the series")


PRESETS: dict[str, GenConfig] = {
    "A": GenConfig(n=5, lag=1, obs_edges=True),
    "B": GenConfig(n=5, lag=1, obs_edges=False),
    "C": GenConfig(n=5, lag=2, obs_edges=True),
    "D": GenConfig(n=10, lag=1, obs_edges=True),
    "sparse": GenConfig(n=5, lag=1, obs_edges=True, sparse_mixing=True),
    "drift": GenConfig(n=5, lag=1, obs_edges=True, total_steps=4000, validation_size=0, drift_at=2000),
}


def preset(name: str, **overrides) -> GenConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return replace(PRESETS[name], **overrides)


@dataclass
class LatentProcessParams:
    W: np.ndarray  # (lag, n, n); W[l] weighs z[t-1-l]
    V: np.ndarray  # (n, n) strictly lower triangular

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim == 2:
            self.W = self.W[None]
        self.V = np.asarray(self.V, dtype=np.float64)
        if np.any(np.triu(self.V) != 0):
            raise ValueError("V must be strictly lower triangular")

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def lag(self) -> int:
        return self.W.shape[0]


@dataclass
class MixingParams:
    W_x: np.ndarray
    W_m: np.ndarray
    sparsity_mask: np.ndarray | None = None

    def __post_init__(self):
        self.W_x = np.asarray(self.W_x, dtype=np.float64)
        self.W_m = np.asarray(self.W_m, dtype=np.float64)
        if self.sparsity_mask is not None:
            self.sparsity_mask = np.asarray(self.sparsity_mask, dtype=bool)
            if np.any(self.W_m[~self.sparsity_mask] != 0):
                raise ValueError("W_m has nonzeros outside its sparsity mask")


@dataclass
class Dataset:
    x: np.ndarray
    z: np.ndarray
    config: GenConfig
    latent: LatentProcessParams
    mixing: MixingParams
    drift_mixing: MixingParams | None = None
    has_latents: bool = True

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def train_range(self) -> range:
        return range(0, self.T - self.config.validation_size)

    @property
    def validation_range(self) -> range:
        return range(self.T - self.config.validation_size, self.T)

    def equals(self, other: "Dataset") -> bool:
        a, b = _dataset_arrays(self), _dataset_arrays(other)
        return (self.config == other.config and a.keys() == b.keys()
                and all(np.array_equal(a[k], b[k]) for k in a))


# ---------------------------------------------------------------- simulation

def gen_latent_step(params: LatentProcessParams, z_hist: np.ndarray, rng=None,
                    eps=None, eps_z=None, noise_std_z: float = 1.0) -> np.ndarray:
    """One latent step. `z_hist` rows run oldest to newest (lag x n).

    Noise may be supplied explicitly through `eps` / `eps_z`; otherwise both
    are drawn from `rng` as standard normals scaled by `noise_std_z`.
    """
    z_hist = np.atleast_2d(np.asarray(z_hist, dtype=np.float64))
    n = params.n
    if z_hist.shape != (params.lag, n):
        raise ValueError(f"z_hist must have shape {(params.lag, n)}, got {z_hist.shape}")
    if eps is None:
        eps = noise_std_z * rng.standard_normal(n)
    if eps_z is None:
        eps_z = noise_std_z * rng.standard_normal(n)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (n,))
    eps_z = np.broadcast_to(np.asarray(eps_z, dtype=np.float64), (n,))
    # lag l uses z[t-1-l], i.e. row -1-l of the history
    drive = sum(params.W[l] @ z_hist[-1 - l] for l in range(params.lag))
    drive = lrelu(drive)
    z = np.zeros(n)
    for i in range(n):
        z[i] = (drive[i] + params.V[i, :i] @ z[:i]) * eps[i] + eps_z[i]
    return z


def gen_obs_step(params: MixingParams, x_prev: np.ndarray, z_t: np.ndarray, rng=None,
                 obs_edges: bool = True, eps_o=None, noise_std_o: float = 1.0) -> np.ndarray:
    z_t = np.asarray(z_t, dtype=np.float64)
    if eps_o is None:
        eps_o = noise_std_o * rng.standard_normal(z_t.shape[-1])
    inner = z_t + eps_o
    if obs_edges:
        inner = inner + SLOPE * lrelu(np.asarray(x_prev, dtype=np.float64) @ params.W_x)
    return lrelu(lrelu(inner) @ params.W_m)


def _draw_params(cfg: GenConfig, rng) -> tuple[LatentProcessParams, MixingParams]:
    n = cfg.n
    W = rng.uniform(-0.5, 0.5, size=(cfg.lag, n, n))
    V = np.tril(rng.uniform(-0.5, 0.5, size=(n, n)), k=-1)
    W_x = rng.uniform(-0.5, 0.5, size=(n, n))
    W_m, mask = _draw_mixing(cfg, rng)
    return LatentProcessParams(W, V), MixingParams(W_x, W_m, mask)


def _draw_mixing(cfg: GenConfig, rng) -> tuple[np.ndarray, np.ndarray | None]:
    n = cfg.n
    W_m = rng.uniform(-0.5, 0.5, size=(n, n))
    if not cfg.sparse_mixing:
        return W_m, None
    mask = sample_sparse_mask(n, rng, cfg.obs_edges)
    # keep surviving weights away from zero so the support is unambiguous
    W_m = np.sign(W_m) * (0.5 + np.abs(W_m)) * mask
    return W_m, mask


def sample_sparse_mask(n: int, rng, obs_edges: bool = True, max_tries: int = 1000) -> np.ndarray:
    """Random cyclic banded support, 1..ceil(n/2) entries per row, satisfying A4.

    Redraws row widths up to `max_tries` times.  If none passes, the last
    draw is narrowed one random wide row at a time until it does; the
    diagonal mask always passes, so this terminates.
    """
    max_width = max(1, -(-n // 2))

    def build(w):
        mask = np.zeros((n, n), dtype=bool)
        for i in range(n):
            mask[i, [(i + k) % n for k in range(int(w[i]))]] = True
        return mask

    for _ in range(max_tries):
        widths = np.array([int(rng.integers(1, max_width + 1)) for _ in range(n)])
        mask = build(widths)
        if check_sparse_mixing_assumption(mask, obs_edges).holds:
            return mask
    while not check_sparse_mixing_assumption(mask, obs_edges).holds:
        widths[rng.choice(np.flatnonzero(widths > 1))] -= 1
        mask = build(widths)
    return mask


def generate_dataset(cfg: GenConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    latent, mixing = _draw_params(cfg, rng)
    drift_mixing = None
    if cfg.drift_at is not None:
        W_m, mask = _draw_mixing(cfg, rng)
        drift_mixing = MixingParams(mixing.W_x, W_m, mask)
    x, z = _simulate(cfg, latent, mixing, drift_mixing, rng)
    return Dataset(x, z, cfg, latent, mixing, drift_mixing)


def _simulate(cfg, latent, mixing, drift_mixing, rng, burn_in: int = BURN_IN):
    n, L = cfg.n, cfg.lag
    steps = burn_in + cfg.total_steps
    z_hist = np.zeros((L, n))
    x_prev = np.zeros(n)
    xs = np.empty((cfg.total_steps, n))
    zs = np.empty((cfg.total_steps, n))
    for s in range(steps):
        t = s - burn_in
        mix = drift_mixing if (drift_mixing is not None and t >= cfg.drift_at) else mixing
        z = gen_latent_step(latent, z_hist, rng, noise_std_z=cfg.noise_std_z)
        x = gen_obs_step(mix, x_prev, z, rng, cfg.obs_edges, noise_std_o=cfg.noise_std_o)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(x))):
            raise GenerationError(f"trajectory became non-finite at step {t} (burn-in {burn_in})")
        if t >= 0:
            xs[t], zs[t] = x, z
        z_hist = np.vstack([z_hist[1:], z])
        x_prev = x
    return xs, zs


# ---------------------------------------------------------------- A4 checker

@dataclass
class SparsityReport:
    holds: bool
    intimate_sets: list[set[str]]
    degenerate: bool = False
    warnings: list[str] = field(default_factory=list)


def mixing_markov_network(mask: np.ndarray, obs_edges: bool = True,
                          instantaneous: bool = True) -> nx.Graph:
    """Moralized generation graph over {z_{t-1}, x_{t-1}, z_t, x_t}.

    Node names: 'z0_i', 'x0_j' for step t-1 and 'z1_i', 'x1_j' for step t.
    """
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[0]
    g = nx.DiGraph()
    for s in (0, 1):
        g.add_nodes_from(f"z{s}_{i}" for i in range(n))
        g.add_nodes_from(f"x{s}_{i}" for i in range(n))
        for i, j in zip(*np.nonzero(mask)):
            g.add_edge(f"z{s}_{i}", f"x{s}_{j}")
    for a in range(n):
        for b in range(n):
            g.add_edge(f"z0_{a}", f"z1_{b}")
            if obs_edges:
                g.add_edge(f"x0_{a}", f"x1_{b}")
            if instantaneous and a < b:
                g.add_edge(f"z1_{a}", f"z1_{b}")
    return nx.moral_graph(g)


def intimate_set(graph: nx.Graph, node) -> set:
    nbrs = set(graph[node])
    return {v for v in nbrs if all(graph.has_edge(v, w) for w in nbrs - {v})}


def check_sparse_mixing_assumption(mask, obs_edges: bool = True,
                                   instantaneous: bool = True) -> SparsityReport:
    """Report each z_{t,i}'s intimate neighbor set; A4 holds if all are empty."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise ValueError("mask must be square")
    n = mask.shape[0]
    graph = mixing_markov_network(mask, obs_edges, instantaneous)
    sets = [intimate_set(graph, f"z1_{i}") for i in range(n)]
    if n == 1:
        # nothing to disentangle from: the condition holds vacuously
        return SparsityReport(True, sets, degenerate=True,
                              warnings=["single latent: component-wise condition is vacuous"])
    return SparsityReport(all(not s for s in sets), sets)


# ---------------------------------------------------------------- persistence

_HEADER = struct.Struct("<4sIIIIIQIIqdd")
_FLAG_OBS, _FLAG_SPARSE, _FLAG_LATENTS = 1, 2, 4


def _dataset_arrays(ds: Dataset) -> dict[str, np.ndarray]:
    out = {"x": ds.x, "z": ds.z, "W": ds.latent.W, "V": ds.latent.V,
           "W_x": ds.mixing.W_x, "W_m": ds.mixing.W_m}
    if ds.mixing.sparsity_mask is not None:
        out["mask"] = ds.mixing.sparsity_mask.astype(np.float64)
    if ds.drift_mixing is not None:
        out["W_m_drift"] = ds.drift_mixing.W_m
        if ds.drift_mixing.sparsity_mask is not None:
            out["mask_drift"] = ds.drift_mixing.sparsity_mask.astype(np.float64)
    return out


def encode_dataset(ds: Dataset) -> bytes:
    c = ds.config
    flags = (_FLAG_OBS if c.obs_edges else 0) | (_FLAG_SPARSE if c.sparse_mixing else 0) \
        | (_FLAG_LATENTS if ds.has_latents else 0)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, c.n, c.total_steps, c.lag, flags, c.seed,
                          c.validation_size, BURN_IN, -1 if c.drift_at is None else c.drift_at,
                          c.noise_std_z, c.noise_std_o)
    return seal(header + pack_arrays(_dataset_arrays(ds)))


def decode_dataset(buf: bytes, expected_n: int | None = None) -> Dataset:
    try:
        body = unseal(buf, MAGIC, _HEADER.size)
    except FormatError as e:
        raise DatasetFormatError(f"dataset file: {e}") from None
    (_, version, n, T, lag, flags, seed, vsize, _burn, drift_at, sz, so) = _HEADER.unpack_from(body, 0)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version} (expected {FORMAT_VERSION})")
    if expected_n is not None and n != expected_n:
        raise DatasetMismatchError(f"dataset has n={n} but n={expected_n} was expected")
    try:
        arrays, pos = unpack_arrays(body, _HEADER.size)
    except FormatError as e:
        raise DatasetFormatError(f"dataset file: {e}") from None
    if pos != len(body):
        raise DatasetFormatError("trailing bytes after array table")
    cfg = GenConfig(n=n, lag=lag, obs_edges=bool(flags & _FLAG_OBS), total_steps=T,
                    validation_size=vsize, seed=seed, noise_std_z=sz, noise_std_o=so,
                    sparse_mixing=bool(flags & _FLAG_SPARSE),
                    drift_at=None if drift_at < 0 else drift_at)
    mask = arrays["mask"].astype(bool) if "mask" in arrays else None
    mixing = MixingParams(arrays["W_x"], arrays["W_m"], mask)
    drift = None
    if "W_m_drift" in arrays:
        dmask = arrays["mask_drift"].astype(bool) if "mask_drift" in arrays else None
        drift = MixingParams(arrays["W_x"], arrays["W_m_drift"], dmask)
    ds = Dataset(arrays["x"], arrays["z"], cfg, LatentProcessParams(arrays["W"], arrays["V"]),
                 mixing, drift, has_latents=bool(flags & _FLAG_LATENTS))
    if ds.x.shape != (T, n) or ds.z.shape != (T, n):
        raise DatasetFormatError("observation/latent blocks do not match the header")
    return ds


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(encode_dataset(ds))


def load_dataset(path, expected_n: int | None = None) -> Dataset:
    return decode_dataset(Path(path).read_bytes(), expected_n)


def export_csv(ds: Dataset, path) -> None:
    n = ds.n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *(f"x_{i + 1}" for i in range(n)), *(f"z_{i + 1}" for i in range(n))])
        for t in range(ds.T):
            w.writerow([t, *map(repr, ds.x[t].tolist()), *map(repr, ds.z[t].tolist())])
