"""Exact probability algebra on finite worlds: the bridged log-likelihood,
its variational lower bound through an autoencoding bridge distribution,
and the identity tying the bound gap to a sum of KL divergences.

Worlds are bags of stochastic tables over small alphabets, so every
expectation is an exact finite sum. The gap identity is exact only when
the two conditional-independence substitutions it rests on hold as
equalities; worlds violating them report the discrepancy as a residual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .validation import check_int, check_scalar, check_stochastic_rows

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscreteWorld:
    """Finite alphabets with conditional tables and a weighted pair set.

    ``bridge`` holds one distribution over Z per pair: the autoencoding
    distribution of the pair's bridging sentence (the variational Q).
    """

    z_given_x: np.ndarray       # (|X|, |Z|)
    z_given_y: np.ndarray       # (|Y|, |Z|)
    y_given_z: np.ndarray       # (|Z|, |Y|)
    y_given_xz: np.ndarray      # (|X|, |Z|, |Y|)
    z_given_xy: np.ndarray      # (|X|, |Y|, |Z|)
    pairs: tuple[tuple[int, int, float], ...]
    bridge: np.ndarray          # (num_pairs, |Z|)
    # Per-pair replacements produced by the regularization probe.
    z_given_x_override: np.ndarray | None = None
    z_given_y_override: np.ndarray | None = None

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("pair set must be nonempty")
        for name in ("z_given_x", "z_given_y", "y_given_z", "y_given_xz",
                     "z_given_xy", "bridge"):
            check_stochastic_rows(getattr(self, name), name)
        if self.bridge.shape[0] != len(self.pairs):
            raise ValueError("bridge needs one row per pair")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.z_given_x.shape[0], self.z_given_y.shape[0],
                self.y_given_z.shape[0])

    def pair_z_given_x(self, idx: int) -> np.ndarray:
        if self.z_given_x_override is not None:
            return self.z_given_x_override[idx]
        return self.z_given_x[self.pairs[idx][0]]

    def pair_z_given_y(self, idx: int) -> np.ndarray:
        if self.z_given_y_override is not None:
            return self.z_given_y_override[idx]
        return self.z_given_y[self.pairs[idx][1]]


@dataclass(frozen=True)
class BoundReport:
    log_likelihood: float
    lower_bound: float
    gap: float
    kl_sum: float
    residual: float


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with explicit infinity on support violations."""
    support = p > 0
    if np.any(q[support] == 0):
        return float("inf")
    return float((p[support] * (np.log(p[support]) - np.log(q[support]))).sum())


def log_likelihood(world: DiscreteWorld) -> float:
    """Sum over pairs of w * log sum_z P(y|x,z) P(z|x), exact enumeration."""
    total = 0.0
    for idx, (x, y, w) in enumerate(world.pairs):
        marginal = float((world.y_given_xz[x, :, y] * world.pair_z_given_x(idx)).sum())
        if marginal == 0.0:
            log.warning("pair %d (x=%d, y=%d) has zero probability", idx, x, y)
            return float("-inf")
        total += w * np.log(marginal)
    return float(total)


def lower_bound(world: DiscreteWorld) -> float:
    """Variational bound: E_Q log P(y|z) - KL(Q || P(z|x)) summed over pairs.

    Replaces P(y|x,z) by P(y|z); a Q-supported zero in P(y|z) or P(z|x)
    makes the bound explicitly -inf.
    """
    total = 0.0
    for idx, (x, y, w) in enumerate(world.pairs):
        q = world.bridge[idx]
        support = q > 0
        p_y = world.y_given_z[:, y]
        p_zx = world.pair_z_given_x(idx)
        if np.any(p_y[support] == 0) or np.any(p_zx[support] == 0):
            log.warning("pair %d (x=%d, y=%d): bridge support outside the model",
                        idx, x, y)
            return float("-inf")
        term = float((q[support] * (np.log(p_y[support]) + np.log(p_zx[support])
                                    - np.log(q[support]))).sum())
        total += w * term
    return float(total)


def gap_identity(world: DiscreteWorld) -> BoundReport:
    """Bound report with the KL-sum comparison.

    ``residual`` measures how far the world is from satisfying the two
    substitutions exactly; it vanishes for coherently factorized worlds.
    """
    ll = log_likelihood(world)
    lb = lower_bound(world)
    gap = ll - lb
    kl_sum = 0.0
    for idx, (_, _, w) in enumerate(world.pairs):
        kl_sum += w * _kl(world.bridge[idx], world.pair_z_given_y(idx))
    residual = abs(gap - kl_sum)
    return BoundReport(log_likelihood=ll, lower_bound=lb, gap=gap,
                       kl_sum=float(kl_sum), residual=float(residual))


def crossconst_effect_probe(world: DiscreteWorld, lam: float) -> tuple[BoundReport, BoundReport]:
    """Pull P(z|x) and P(z|y) toward the bridge by linear interpolation.

    Models the regularizer's effect; returns reports before and after.
    """
    check_scalar(lam, "lam", minimum=0.0, maximum=1.0)
    before = gap_identity(world)
    zx = np.stack([(1.0 - lam) * world.pair_z_given_x(i) + lam * world.bridge[i]
                   for i in range(len(world.pairs))])
    zy = np.stack([(1.0 - lam) * world.pair_z_given_y(i) + lam * world.bridge[i]
                   for i in range(len(world.pairs))])
    after = gap_identity(replace(world, z_given_x_override=zx, z_given_y_override=zy))
    return before, after


def _positive_rows(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    rows = rng.uniform(0.1, 1.0, size=shape)
    return rows / rows.sum(axis=-1, keepdims=True)


def make_factorized_world(seed: int, nx: int = 5, ny: int = 5, nz: int = 5,
                          bridge: str = "random") -> DiscreteWorld:
    """World derived from a single joint P(x) P(z) P(y|z), all tables by
    marginalization, so both substitutions of the gap identity are exact.

    ``bridge="posterior"`` makes the bound tight (gap 0); ``"random"``
    exercises strictly positive, exactly matching gap and KL sum.
    """
    check_int(nx, "nx", minimum=2)
    check_int(ny, "ny", minimum=2)
    check_int(nz, "nz", minimum=2)
    rng = np.random.default_rng(seed)
    px = _positive_rows(rng, (nx,))
    pz = _positive_rows(rng, (nz,))
    pyz = _positive_rows(rng, (nz, ny))           # P(y|z)

    joint = px[:, None, None] * pz[None, :, None] * pyz[None, :, :]  # (x, z, y)
    py = joint.sum(axis=(0, 1))
    z_given_x = np.tile(pz, (nx, 1))
    z_given_y = (pz[:, None] * pyz / py[None, :]).T                  # (y, z)
    y_given_xz = np.tile(pyz[None, :, :], (nx, 1, 1))
    z_given_xy = np.tile(z_given_y[None, :, :], (nx, 1, 1))

    pairs = tuple((x, y, float(px[x] * py[y]))
                  for x in range(nx) for y in range(ny))
    if bridge == "posterior":
        q = np.stack([z_given_xy[x, y] for x, y, _ in pairs])
    elif bridge == "random":
        q = _positive_rows(rng, (len(pairs), nz))
    else:
        raise ValueError(f"unknown bridge mode {bridge!r}")
    return DiscreteWorld(z_given_x=z_given_x, z_given_y=z_given_y,
                         y_given_z=pyz, y_given_xz=y_given_xz,
                         z_given_xy=z_given_xy, pairs=pairs, bridge=q)


def make_chain_world(seed: int, nx: int = 5, ny: int = 5, nz: int = 5,
                     bridge: str = "random") -> DiscreteWorld:
    """General x -> z -> y chain world: the first substitution is exact,
    the second generally is not, so residuals are nonzero."""
    rng = np.random.default_rng(seed)
    px = _positive_rows(rng, (nx,))
    z_given_x = _positive_rows(rng, (nx, nz))
    pyz = _positive_rows(rng, (nz, ny))

    joint = px[:, None, None] * z_given_x[:, :, None] * pyz[None, :, :]
    pzy = joint.sum(axis=0)                        # (z, y)
    z_given_y = (pzy / pzy.sum(axis=0, keepdims=True)).T
    y_given_xz = np.tile(pyz[None, :, :], (nx, 1, 1))
    with np.errstate(invalid="ignore"):
        z_given_xy = joint / joint.sum(axis=1, keepdims=True)        # (x, z, y)
    z_given_xy = np.transpose(z_given_xy, (0, 2, 1))                 # (x, y, z)

    pxy = joint.sum(axis=1)
    pairs = tuple((x, y, float(pxy[x, y])) for x in range(nx) for y in range(ny))
    if bridge == "posterior":
        q = np.stack([z_given_xy[x, y] for x, y, _ in pairs])
    else:
        q = _positive_rows(rng, (len(pairs), nz))
    return DiscreteWorld(z_given_x=z_given_x, z_given_y=z_given_y,
                         y_given_z=pyz, y_given_xz=y_given_xz,
                         z_given_xy=z_given_xy, pairs=pairs, bridge=q)


def violate_factorization(world: DiscreteWorld, delta: float,
                          seed: int = 0) -> DiscreteWorld:
    """Mix P(y|x,z) away from P(y|z) by weight delta, leaving the other
    tables untouched; the gap identity's residual grows with delta."""
    check_scalar(delta, "delta", minimum=0.0, maximum=1.0)
    rng = np.random.default_rng(seed)
    noise = _positive_rows(rng, world.y_given_xz.shape)
    mixed = (1.0 - delta) * world.y_given_xz + delta * noise
    return replace(world, y_given_xz=mixed)


def residual_sweep(deltas, num_seeds: int, nx: int = 5, ny: int = 5,
                   nz: int = 5) -> dict[float, float]:
    """Median gap-identity residual per violation weight."""
    medians = {}
    for delta in deltas:
        residuals = []
        for seed in range(num_seeds):
            world = make_factorized_world(seed, nx, ny, nz, bridge="random")
            report = gap_identity(violate_factorization(world, delta, seed=seed + 1))
            residuals.append(report.residual)
        medians[float(delta)] = float(np.median(residuals))
    return medians


JENSEN_TOL = 1e-12
RESIDUAL_TOL = 1e-9


def verify_theory(num_seeds: int, nx: int = 5, ny: int = 5, nz: int = 5,
                  lambdas=(0.0, 0.25, 0.5, 0.75, 1.0)):
    """Run the invariant battery on seeded factorized worlds.

    Returns (rows, all_ok): one TSV-ready row per seed (seed, |X|, |Y|, |Z|,
    L, L_bar, gap, kl_sum, residual) and a flag that is False if any seed
    violates the bound, the gap identity, or the monotone-probe property.
    """
    rows = []
    all_ok = True
    for seed in range(num_seeds):
        world = make_factorized_world(seed, nx, ny, nz, bridge="random")
        report = gap_identity(world)
        kl_sums = [crossconst_effect_probe(world, lam)[1].kl_sum for lam in lambdas]
        monotone = all(a > b or (a == b == 0.0)
                       for a, b in zip(kl_sums[:-1], kl_sums[1:]))
        ok = (report.lower_bound <= report.log_likelihood + JENSEN_TOL
              and report.gap >= -1e-9
              and report.residual <= RESIDUAL_TOL
              and report.kl_sum >= -1e-12
              and monotone
              and kl_sums[-1] <= 1e-12)
        all_ok = all_ok and ok
        rows.append((seed, nx, ny, nz, report.log_likelihood, report.lower_bound,
                     report.gap, report.kl_sum, report.residual))
    return rows, all_ok
