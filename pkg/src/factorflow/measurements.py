"""Linear measurement operators over symmetric matrices.

An ensemble holds m symmetric measurement matrices A_1..A_m and optional
targets y. The forward map sends X to the vector of trace inner products
<A_i, X>; the adjoint sends r to sum_i r_i A_i.

All generators are deterministic functions of (params, seed). Randomness
comes from numpy's Philox counter-based bit generator keyed through
``SeedSequence(seed, spawn_key=stream)``, so identical seeds reproduce
identical ensembles bit for bit on every platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .linalg import eigh_sym, fro, min_eig, sym_mat, sym_part
from .tolerances import TOL


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for a (seed, substream) pair."""
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=tuple(int(s) for s in stream)
    )
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class MeasurementEnsemble:
    """m symmetric measurement matrices with optional targets.

    Treated as immutable after construction; safe for shared reads.
    """

    n: int
    mats: np.ndarray                      # (m, n, n)
    y: Optional[np.ndarray] = None        # (m,)
    _flat: np.ndarray = field(init=False, repr=False)
    _gram: Optional[np.ndarray] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.mats = np.asarray(self.mats, dtype=float)
        if self.mats.ndim != 3 or self.mats.shape[1:] != (self.n, self.n):
            raise ValueError(
                f"mats must have shape (m, {self.n}, {self.n}), "
                f"got {self.mats.shape}"
            )
        if self.m < 1:
            raise ValueError("ensemble needs at least one measurement")
        if not np.all(np.isfinite(self.mats)):
            raise ValueError("measurement matrices have non-finite entries")
        asym = max(fro(A - A.T) for A in self.mats)
        if asym > 1e-12 * max(1.0, max(fro(A) for A in self.mats)):
            raise ValueError("measurement matrices must be symmetric")
        self.mats = 0.5 * (self.mats + np.transpose(self.mats, (0, 2, 1)))
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=float).reshape(-1)
            if self.y.shape != (self.m,):
                raise ValueError(f"y must have length {self.m}")
        self._flat = self.mats.reshape(self.m, -1)
        w = np.linalg.eigvalsh(self.gram())
        if w[0] <= TOL.gram_independence * w[-1]:
            raise ValueError(
                "measurement matrices are not linearly independent "
                f"(Gram eigenvalue ratio {w[0] / max(w[-1], 1e-300):.3g})"
            )

    @property
    def m(self) -> int:
        return self.mats.shape[0]

    @property
    def flat(self) -> np.ndarray:
        """(m, n*n) row-flattened measurement matrices."""
        return self._flat

    def gram(self) -> np.ndarray:
        """Gram matrix G_ij = <A_i, A_j>."""
        if self._gram is None:
            self._gram = self._flat @ self._flat.T
        return self._gram

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Forward map: component i is <A_i, X>."""
        X = np.asarray(X, dtype=float)
        if X.shape != (self.n, self.n):
            raise ValueError(f"X must be {self.n}x{self.n}, got {X.shape}")
        return self._flat @ X.ravel()

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        """Adjoint map: sum_i r_i A_i."""
        r = np.asarray(r, dtype=float).reshape(-1)
        if r.shape != (self.m,):
            raise ValueError(f"r must have length {self.m}, got {r.shape}")
        return (self._flat.T @ r).reshape(self.n, self.n)

    def residual(self, X: np.ndarray) -> np.ndarray:
        if self.y is None:
            raise ValueError("ensemble has no targets")
        return self.apply(X) - self.y

    def with_targets(self, y: np.ndarray) -> "MeasurementEnsemble":
        return MeasurementEnsemble(n=self.n, mats=self.mats, y=y)


@dataclass
class ProblemInstance:
    """Ensemble plus optional planted ground truth and provenance."""

    ensemble: MeasurementEnsemble
    planted: Optional[np.ndarray] = None
    kind: str = "gaussian"
    seed: int = 0
    planted_spectrum: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.planted is not None:
            self.planted = sym_mat(self.planted)
            lo = min_eig(self.planted)
            if lo < -TOL.psd_floor * max(1.0, fro(self.planted)):
                raise ValueError(f"planted matrix not PSD (min eig {lo:.3g})")
            if self.ensemble.y is None:
                raise ValueError("planted instance must carry targets")
            gap = np.max(
                np.abs(self.ensemble.y - self.ensemble.apply(self.planted))
            )
            if gap > TOL.planted_target * max(
                1.0, float(np.max(np.abs(self.ensemble.y)))
            ):
                raise ValueError(f"targets do not match planted matrix ({gap:.3g})")
            if self.planted_spectrum is None:
                self.planted_spectrum = eigh_sym(self.planted).eigvals


# ---------------------------------------------------------------------------
# generators


def gaussian_ensemble(n: int, m: int, seed: int) -> MeasurementEnsemble:
    """m symmetrized iid Gaussian measurement matrices (targets unset).

    Each mask is normalized to unit Frobenius norm. That matches the energy
    of completion masks and keeps fixed step sizes in the 1e-3 range stable
    across problem sizes; the raw symmetrized-Gaussian scale would grow
    like n and destabilize factored descent on the same grids.
    """
    cap = n * (n + 1) // 2
    if not 1 <= m <= cap:
        raise ValueError(
            f"m={m} out of range for n={n} (symmetric dimension {cap})"
        )
    for attempt in range(8):
        rng = make_rng(seed, 0, attempt)
        G = rng.standard_normal((m, n, n))
        mats = 0.5 * (G + np.transpose(G, (0, 2, 1)))
        mats /= np.linalg.norm(mats.reshape(m, -1), axis=1)[:, None, None]
        try:
            return MeasurementEnsemble(n=n, mats=mats)
        except ValueError:
            continue  # dependent draw, resample
    raise RuntimeError("could not draw an independent Gaussian ensemble")


def _entry_mask(n: int, a: int, b: int) -> np.ndarray:
    A = np.zeros((n, n))
    if a == b:
        A[a, a] = 1.0
    else:
        A[a, b] = A[b, a] = 0.5
    return A


def completion_ensemble(
    n: int,
    m: int,
    dist: str = "uniform",
    seed: int = 0,
    gamma: float = 1.0,
) -> MeasurementEnsemble:
    """m distinct symmetrized entry masks, sampled without replacement.

    dist="uniform" picks index pairs uniformly; dist="powerlaw" draws each
    index with probability proportional to (k+1)**-gamma, so low indices
    are observed far more often.
    """
    pairs = [(a, b) for a in range(n) for b in range(a, n)]
    if not 1 <= m <= len(pairs):
        raise ValueError(f"m={m} exceeds the {len(pairs)} distinct entries")
    rng = make_rng(seed, 1)
    if dist == "uniform":
        idx = rng.choice(len(pairs), size=m, replace=False)
        chosen = [pairs[i] for i in idx]
    elif dist == "powerlaw":
        p = (np.arange(1, n + 1, dtype=float)) ** (-gamma)
        p /= p.sum()
        chosen_set: set[tuple[int, int]] = set()
        chosen = []
        attempts = 0
        while len(chosen) < m:
            a, b = rng.choice(n, size=2, p=p)
            pair = (min(a, b), max(a, b))
            if pair not in chosen_set:
                chosen_set.add(pair)
                chosen.append(pair)
            attempts += 1
            if attempts > 1_000_000:
                raise RuntimeError(
                    "power-law mask sampling stalled; lower m or gamma"
                )
    else:
        raise ValueError(f"unknown completion distribution {dist!r}")
    mats = np.stack([_entry_mask(n, a, b) for a, b in chosen])
    return MeasurementEnsemble(n=n, mats=mats)


def diagonal_ensemble(
    rows: np.ndarray, y: Optional[np.ndarray] = None
) -> MeasurementEnsemble:
    """Ensemble of diagonal measurement matrices built from the rows of a
    dense m x n coefficient array. Diagonal masks always commute."""
    rows = np.asarray(rows, dtype=float)
    m, n = rows.shape
    mats = np.zeros((m, n, n))
    for i in range(m):
        np.fill_diagonal(mats[i], rows[i])
    return MeasurementEnsemble(n=n, mats=mats, y=y)


def planted_psd(n: int, r: int, kind: str = "lowrank", seed: int = 0) -> np.ndarray:
    """Planted PSD ground truth.

    kind="lowrank": rank-r factor with iid standard normal entries.
    kind="decaying": full-rank spectrum with a k**-1.5 tail in a random
    orthogonal basis; the top eigenvalue is solved in closed form so that
    the nuclear-to-Frobenius ratio equals sqrt(r) exactly. A single global
    scale cannot move that ratio, so the top-eigenvalue degree of freedom
    is what pins it.
    """
    if not 1 <= r <= n:
        raise ValueError(f"rank r={r} out of range for n={n}")
    rng = make_rng(seed, 2)
    if kind == "lowrank":
        U0 = rng.standard_normal((n, r))
        return sym_part(U0 @ U0.T)
    if kind == "decaying":
        if n < 2:
            raise ValueError("decaying spectrum needs n >= 2")
        tail = np.arange(2, n + 1, dtype=float) ** (-1.5)
        s1 = float(tail.sum())
        s2 = float((tail**2).sum())
        if r == 1:
            raise ValueError("ratio sqrt(1) needs a rank-1 matrix; use lowrank")
        disc = s1 * s1 - (r - 1) * s2
        if disc <= 0:
            raise ValueError(f"nuclear/Frobenius ratio sqrt({r}) unattainable at n={n}")
        top = (s1 + np.sqrt(r) * np.sqrt(disc)) / (r - 1)
        lams = np.concatenate(([top], tail))
        lams = np.sort(lams)[::-1]
        Q, R = np.linalg.qr(rng.standard_normal((n, n)))
        Q = Q * np.sign(np.diag(R))  # fix QR sign convention for determinism
        return sym_part((Q * lams) @ Q.T)
    raise ValueError(f"unknown planted kind {kind!r}")


def embed_asymmetric(
    rect_mats: Sequence[np.ndarray], y: np.ndarray
) -> MeasurementEnsemble:
    """Lift rectangular measurements B_i of an n1 x n2 matrix into symmetric
    measurements of the (n1+n2) block matrix [[W, X], [X^T, Z]] such that
    <embedded_i, [[W,X],[X^T,Z]]> = <B_i, X>."""
    rect = [np.asarray(B, dtype=float) for B in rect_mats]
    if not rect:
        raise ValueError("need at least one rectangular measurement")
    n1, n2 = rect[0].shape
    for B in rect:
        if B.shape != (n1, n2):
            raise ValueError("rectangular measurements must share one shape")
    n = n1 + n2
    mats = np.zeros((len(rect), n, n))
    for i, B in enumerate(rect):
        mats[i, :n1, n1:] = 0.5 * B
        mats[i, n1:, :n1] = 0.5 * B.T
    return MeasurementEnsemble(n=n, mats=mats, y=np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# instance builders


def gaussian_instance(
    n: int, m: int, r: int, planted_kind: str = "lowrank", seed: int = 0
) -> ProblemInstance:
    ens = gaussian_ensemble(n, m, seed)
    star = planted_psd(n, r, planted_kind, seed)
    ens = ens.with_targets(ens.apply(star))
    return ProblemInstance(ensemble=ens, planted=star, kind="gaussian", seed=seed)


def completion_instance(
    n: int,
    m: int,
    dist: str = "uniform",
    r: int = 2,
    planted_kind: str = "lowrank",
    seed: int = 0,
    gamma: float = 1.0,
) -> ProblemInstance:
    ens = completion_ensemble(n, m, dist, seed, gamma)
    star = planted_psd(n, r, planted_kind, seed)
    ens = ens.with_targets(ens.apply(star))
    kind = "completion-uniform" if dist == "uniform" else "completion-powerlaw"
    return ProblemInstance(ensemble=ens, planted=star, kind=kind, seed=seed)


def planted_l1_problem(
    n: int,
    m: int,
    seed: int = 0,
    support_size: Optional[int] = None,
    margin: float = 0.9,
    off_support_scale: float = 0.4,
):
    """Random nonnegative least squares system A x = y whose planted sparse
    x* is the unique minimum l1-norm solution with a dual margin.

    Columns are built as a_k = t_k nu + w_k with w_k orthogonal to the unit
    dual certificate nu, t_k = 1 on the support and |t_k| <= 1 - margin off
    it. The default support size m makes the dual certificate unique, so
    the margin bounds every optimal dual away from the off-support
    constraints. The margin, the shrunken off-support columns, and the O(1)
    planted entries all serve one purpose: dynamics started at a small but
    finite scale leave residual mass of order scale**margin on off-support
    coordinates, and these dials keep that mass far below the planted
    signal. Ill-conditioned support blocks are redrawn (they make the
    downstream solves crawl).

    Returns (A, x_star, y, nu).
    """
    if not 0 < margin < 1:
        raise ValueError("margin must lie in (0, 1)")
    if support_size is None:
        support_size = m
    if not 1 <= support_size <= min(m, n):
        raise ValueError(f"support size {support_size} out of range")
    for attempt in range(64):
        rng = make_rng(seed, 3, attempt)
        nu = rng.standard_normal(m)
        nu /= np.linalg.norm(nu)
        support = rng.choice(n, size=support_size, replace=False)
        in_support = np.zeros(n, dtype=bool)
        in_support[support] = True
        t = rng.uniform(0.2 * (1 - margin), 1 - margin, size=n)
        t *= rng.choice([-1.0, 1.0], size=n)
        t[in_support] = 1.0
        W = rng.standard_normal((m, n))
        W -= np.outer(nu, nu @ W)  # orthogonal complement of the certificate
        W[:, ~in_support] *= off_support_scale
        A = np.outer(nu, t) + W
        if np.linalg.cond(A[:, support]) > 20.0:
            continue
        x_star = np.zeros(n)
        x_star[support] = rng.uniform(2.0, 6.0, size=support_size)
        return A, x_star, A @ x_star, nu
    raise RuntimeError("could not draw a well-conditioned support block")


def diagonal_instance(
    n: int,
    m: int,
    seed: int = 0,
    support_size: Optional[int] = None,
    margin: float = 0.9,
) -> ProblemInstance:
    """Commuting (diagonal) ensemble whose planted nonnegative diagonal is
    the unique trace-minimal PSD solution, with a dual margin (see
    :func:`planted_l1_problem`)."""
    rows, x_star, y, _ = planted_l1_problem(n, m, seed, support_size, margin)
    ens = diagonal_ensemble(rows, y=y)
    return ProblemInstance(
        ensemble=ens, planted=np.diag(x_star), kind="diagonal", seed=seed
    )


# ---------------------------------------------------------------------------
# serialization

_SCHEMA_VERSION = 1


def _mask_is_sparse(A: np.ndarray) -> bool:
    return np.count_nonzero(A) <= 2


def ensemble_to_json(
    e: MeasurementEnsemble, kind: str = "custom", seed: int = 0
) -> dict:
    sparse = all(_mask_is_sparse(A) for A in e.mats)
    if sparse:
        masks = []
        for A in e.mats:
            triples = [
                [int(i), int(j), float(A[i, j])]
                for i, j in zip(*np.nonzero(A))
                if i <= j
            ]
            masks.append(triples)
        mask_format = "triples"
    else:
        masks = [A.tolist() for A in e.mats]
        mask_format = "dense"
    return {
        "schema": _SCHEMA_VERSION,
        "n": e.n,
        "m": e.m,
        "kind": kind,
        "seed": seed,
        "mask_format": mask_format,
        "masks": masks,
        "y": None if e.y is None else e.y.tolist(),
    }


def ensemble_from_json(doc: dict) -> MeasurementEnsemble:
    n = int(doc["n"])
    if doc["mask_format"] == "triples":
        mats = np.zeros((int(doc["m"]), n, n))
        for k, triples in enumerate(doc["masks"]):
            for i, j, v in triples:
                mats[k, int(i), int(j)] = float(v)
                mats[k, int(j), int(i)] = float(v)
    else:
        mats = np.asarray(doc["masks"], dtype=float)
    y = None if doc.get("y") is None else np.asarray(doc["y"], dtype=float)
    return MeasurementEnsemble(n=n, mats=mats, y=y)


def instance_to_json(inst: ProblemInstance) -> dict:
    doc = ensemble_to_json(inst.ensemble, kind=inst.kind, seed=inst.seed)
    doc["planted_spectrum"] = (
        None
        if inst.planted_spectrum is None
        else np.asarray(inst.planted_spectrum, dtype=float).tolist()
    )
    return doc


def instance_from_json(doc: dict) -> ProblemInstance:
    ens = ensemble_from_json(doc)
    spectrum = doc.get("planted_spectrum")
    return ProblemInstance(
        ensemble=ens,
        planted=None,
        kind=str(doc.get("kind", "custom")),
        seed=int(doc.get("seed", 0)),
        planted_spectrum=None if spectrum is None else np.asarray(spectrum),
    )


def save_instance(inst: ProblemInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(instance_to_json(inst), f)


def load_instance(path) -> ProblemInstance:
    with open(path, "r", encoding="utf-8") as f:
        return instance_from_json(json.load(f))
