"""
Gromov products and conformal premetrics for AnosovLab.

Two backends compute the Gromov product of an antipodal pair of flags:

- "busemann" lifts the pair to a group element g with (g+, g-) = (xi, eta)
  and averages the Busemann cocycles at the two flags;
- "angle" reads the fundamental-weight coordinates off angles in exterior
  powers: 2 omega_p(G) = -log sin of the angle between the line
  g(e_1 ^ ... ^ e_p) and the hyperplane g V^<.

For orthonormal frames the angle reduces to |det[xi_1..xi_p, eta_1..eta_{n-p}]|,
which is what premetric_matrix uses on whole samples.
"""

import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from lie_core import (
    PRODUCT,
    AVector,
    Flag,
    GroupDescriptor,
    LinearForm,
    antipodal_margin,
    busemann_batch,
    exterior_power,
    flag_equal,
    flags_to_group,
    opposition_coords,
)
from limit_sampler import FlagSample
from utils import get_logger
from utils.errors import AngleUnderflow, BasisMismatch, InsufficientSample, NotAntipodal
from utils.export import write_binary, write_csv

# Set up logger
logger = get_logger(__name__)

BACKENDS = ("busemann", "angle")
UNDERFLOW = 1e-300
ANTIPODAL_MARGIN = 1e-10
ROW_BLOCK = 128


def _check_pair(xi: Flag, eta: Flag) -> None:
    if xi.descriptor != eta.descriptor:
        raise BasisMismatch("Flags belong to different groups")
    d = xi.descriptor
    sym = d.symmetric_theta(xi.theta)
    margin = antipodal_margin(xi.with_theta(sym), eta)
    if margin < ANTIPODAL_MARGIN:
        raise NotAntipodal(f"Flags are not antipodal (margin {margin:.3e})", {"margin": margin})


def _gromov_busemann(xi: Flag, eta: Flag) -> np.ndarray:
    d = xi.descriptor
    g = flags_to_group(xi, eta)
    full = d.simple_roots
    b_xi = busemann_batch(xi.frame, g.matrix, g.inverse, d, full)
    b_eta = busemann_batch(eta.frame, g.matrix, g.inverse, d, full)
    return 0.5 * (b_xi + opposition_coords(d, b_eta))


def _angle_sines(g_matrix: np.ndarray, g_inverse: np.ndarray, d: GroupDescriptor) -> np.ndarray:
    """sin of the angle between g(e_1 ^ ... ^ e_p) and g V^< for every p."""
    sines = []
    if d.kind == PRODUCT:
        for i in range(d.size):
            line = np.linalg.norm(g_matrix[i][:, 0])
            normal = np.linalg.norm(g_inverse[i].T[:, 0])
            sines.append(1.0 / (line * normal))
        return np.array(sines)
    for p in range(1, d.size):
        # e_{1..p} is the first basis vector of the p-th exterior power
        line = np.linalg.norm(exterior_power(g_matrix, p)[:, 0])
        normal = np.linalg.norm(exterior_power(g_inverse.T, p)[:, 0])
        sines.append(1.0 / (line * normal))
    return np.array(sines)


def _gromov_angle(xi: Flag, eta: Flag) -> np.ndarray:
    d = xi.descriptor
    g = flags_to_group(xi, eta)
    sines = _angle_sines(g.matrix, g.inverse, d)
    if np.any(sines < UNDERFLOW):
        raise AngleUnderflow("Angle below 1e-300; the flags coincide at this resolution",
                             {"min_sine": float(sines.min())})
    omegas = -0.5 * np.log(sines)
    return omegas @ d.coroots.T


def gromov_product(xi: Flag, eta: Flag, backend: str = "busemann") -> AVector:
    """
    The Gromov product G(xi, eta) projected to theta union iota(theta).

    Args:
        xi: First flag
        eta: Second flag, antipodal to xi
        backend: "busemann" or "angle"

    Returns:
        The Gromov product as a Cartan vector

    Raises:
        NotAntipodal: if the pair is not in general position
        AngleUnderflow: angle backend only, if some angle is below 1e-300
    """
    if backend not in BACKENDS:
        raise ValueError(f"Unknown backend {backend!r}; expected one of {BACKENDS}")
    _check_pair(xi, eta)
    d = xi.descriptor
    coords = _gromov_busemann(xi, eta) if backend == "busemann" else _gromov_angle(xi, eta)
    return AVector(d, d.project_theta(coords, d.symmetric_theta(xi.theta)))


def transversality_logdets(frames_a: np.ndarray, frames_b: np.ndarray, d: GroupDescriptor) -> np.ndarray:
    """
    log|det[a_1..a_p, b_1..b_{n-p}]| for p = 1..rank, batched and broadcast.

    Returns an array (..., rank); -inf where the subspaces meet.
    """
    frames_a = np.asarray(frames_a)
    frames_b = np.asarray(frames_b)
    if d.kind == PRODUCT:
        a = frames_a[..., :, 0]
        b = frames_b[..., :, 0]
        dets = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
        with np.errstate(divide="ignore"):
            return np.log(np.abs(dets))
    n = d.size
    shape = np.broadcast_shapes(frames_a.shape, frames_b.shape)
    out = []
    for p in range(1, n):
        block = np.concatenate(
            [np.broadcast_to(frames_a[..., :, :p], shape[:-1] + (p,)),
             np.broadcast_to(frames_b[..., :, : n - p], shape[:-1] + (n - p,))],
            axis=-1,
        )
        _, logdet = np.linalg.slogdet(block)
        out.append(logdet)
    return np.stack(out, axis=-1)


def gromov_products_batch(frames_a: np.ndarray, frames_b: np.ndarray, d: GroupDescriptor) -> np.ndarray:
    """Gromov products of frame pairs through the determinant formula, shape (..., dim)."""
    omegas = -0.5 * transversality_logdets(frames_a, frames_b, d)
    return omegas @ d.coroots.T


def d_psi(xi: Flag, eta: Flag, psi: LinearForm, backend: str = "busemann") -> float:
    """The conformal premetric e^{-psi(G(xi, eta))}, 0 on the diagonal."""
    if psi.descriptor != xi.descriptor:
        raise BasisMismatch("Form and flags belong to different groups")
    if flag_equal(xi, eta):
        return 0.0
    return float(np.exp(-psi(gromov_product(xi, eta, backend))))


def circle_flag(descriptor: GroupDescriptor, angles: Sequence[float], theta: Optional[Sequence[int]] = None) -> Flag:
    """A point of a product of circles, given by one line angle per factor."""
    if descriptor.kind != PRODUCT:
        raise BasisMismatch("Circle points only exist for products of SL(2, R)")
    angles = np.asarray(angles, dtype=float)
    c, s = np.cos(angles), np.sin(angles)
    frame = np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)
    return Flag(descriptor, frame, tuple(theta or descriptor.simple_roots))


def d_pq(xi: Flag, eta: Flag, p: float, q: float) -> float:
    """
    d_{S1}(xi_1, eta_1)^p * d_{S1}(xi_2, eta_2)^q on a product of two circles,
    with d_{S1} the sine of the angle between the lines.
    """
    d = xi.descriptor
    if d.kind != PRODUCT or d.size != 2:
        raise BasisMismatch(f"d_pq needs a product of two SL(2, R), got {d.key}", {"group": d.key})
    sines = np.exp(transversality_logdets(xi.frame, eta.frame, d))
    return float(sines[0] ** p * sines[1] ** q)


def pq_form(descriptor: GroupDescriptor, p: float, q: float) -> LinearForm:
    """The form p alpha_1 + q alpha_2 whose premetric is d_pq."""
    if descriptor.kind != PRODUCT or descriptor.size != 2:
        raise BasisMismatch(f"(p, q)-forms need a product of two SL(2, R), got {descriptor.key}")
    return LinearForm(descriptor, [p, q], "root", f"pq({p:g},{q:g})")


# ---------------------------------------------------------------------- matrices


@dataclass
class PremetricMatrix:
    """Pairwise premetric values over a flag sample."""

    values: np.ndarray
    form: LinearForm
    backend: str
    excluded_pairs: int = 0
    info: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.values)

    def symmetrized(self) -> np.ndarray:
        """max(d(x, y), d(y, x)), for covering purposes only."""
        return np.maximum(self.values, self.values.T)

    def is_symmetric(self, rtol: float = 1e-6) -> bool:
        return bool(np.allclose(self.values, self.values.T, rtol=rtol, atol=0.0))

    def power(self, s: float) -> "PremetricMatrix":
        """The premetric of s * psi, which is d_psi^s."""
        return PremetricMatrix(self.values**s, self.form * s, self.backend, self.excluded_pairs)

    def swapped(self) -> "PremetricMatrix":
        """d(y, x) in place of d(x, y)."""
        return PremetricMatrix(self.values.T.copy(), self.form, self.backend, self.excluded_pairs)

    def subset(self, indices: Sequence[int]) -> "PremetricMatrix":
        indices = np.asarray(indices, dtype=int)
        return PremetricMatrix(self.values[np.ix_(indices, indices)], self.form, self.backend)

    def export_csv(self, path: Union[str, Path]) -> Path:
        i, j = np.nonzero(~np.eye(len(self), dtype=bool))
        rows = {"i": i, "j": j, "value": self.values[i, j]}
        return write_csv(path, pd.DataFrame(rows), ["i", "j", "value"])

    def export_binary(self, path: Union[str, Path]) -> Path:
        """Lower triangle, followed by the upper triangle when the matrix is not symmetric."""
        symmetric = self.is_symmetric()
        header = np.zeros(1, dtype=[("magic", "S8"), ("size", "<i8"), ("symmetric", "u1")])
        header["magic"] = b"ANOSPREM"
        header["size"] = len(self)
        header["symmetric"] = int(symmetric)
        lower = self.values[np.tril_indices(len(self), -1)]
        blocks = [lower] if symmetric else [lower, self.values.T[np.tril_indices(len(self), -1)]]
        records = np.concatenate(blocks).astype("<f8")
        return write_binary(path, header, records)


def premetric_rows(
    centers: np.ndarray,
    frames: np.ndarray,
    psi: LinearForm,
    backend: str = "determinant",
    theta: Optional[Sequence[int]] = None,
    pairs_per_block: int = 1_000_000,
) -> np.ndarray:
    """
    d_psi(center_i, frame_j) for every center against every frame.

    The "determinant" backend exponentiates sum_p (c_p / 2) log|det_p| over
    blocks of about pairs_per_block pairs. "busemann" and "angle" go pair by
    pair through d_psi on flags of type theta (every simple root by default).
    Pairs that coincide at float resolution give 0.
    """
    d = psi.descriptor
    frames = np.asarray(frames, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if backend == "determinant":
        weights = psi.weight_coefficients
        step = max(1, pairs_per_block // max(len(frames), 1))
        parts = []
        for start in range(0, len(centers), step):
            logdets = transversality_logdets(centers[start : start + step][:, None], frames[None, :], d)
            with np.errstate(invalid="ignore"):
                log_values = 0.5 * np.where(weights != 0, logdets * weights, 0.0).sum(axis=-1)
            parts.append(np.exp(log_values))
        return np.concatenate(parts) if parts else np.zeros((0, len(frames)))
    if backend not in BACKENDS:
        raise ValueError(f"Unknown backend {backend!r}; expected 'determinant' or one of {BACKENDS}")

    theta = d.validate_theta(theta if theta is not None else d.simple_roots)
    values = np.zeros((len(centers), len(frames)))
    targets = [Flag(d, frame, theta) for frame in frames]
    for i, center in enumerate(centers):
        xi = Flag(d, center, theta)
        for j, eta in enumerate(targets):
            try:
                values[i, j] = d_psi(xi, eta, psi, backend)
            except (NotAntipodal, AngleUnderflow):
                values[i, j] = 0.0
    return values


def premetric_matrix(
    sample: FlagSample,
    psi: LinearForm,
    backend: str = "determinant",
    workers: int = 1,
    min_on_cone: Optional[float] = None,
) -> PremetricMatrix:
    """
    All pairwise values d_psi(xi_i, xi_j) over a sample.

    Args:
        sample: Flag sample
        psi: Linear form, ideally positive on the limit cone
        backend: "determinant" (vectorized), "busemann" or "angle" (pairwise)
        workers: joblib workers for row blocks
        min_on_cone: minimum of psi over the estimated limit cone, if known

    Returns:
        The premetric matrix; pairs that coincide at float resolution are
        set to 0 and counted as excluded
    """
    d = sample.descriptor
    if psi.descriptor != d:
        raise BasisMismatch("Form and sample belong to different groups")
    if min_on_cone is not None and min_on_cone <= 0:
        logger.warning(f"{psi.name or 'form'} is not positive on the estimated limit cone (min {min_on_cone:.4g})")
    sym = d.symmetric_theta(sample.theta)
    outside = set(psi.support()) - set(sym)
    if outside:
        logger.warning(f"Form uses weights {sorted(outside)} outside theta={list(sym)}; values depend on frame lifts")

    if backend != "determinant" and backend not in BACKENDS:
        raise ValueError(f"Unknown backend {backend!r}")
    count = len(sample)
    blocks = [sample.frames[s : s + ROW_BLOCK] for s in range(0, count, ROW_BLOCK)]
    if workers > 1:
        parts = Parallel(n_jobs=workers)(
            delayed(premetric_rows)(rows, sample.frames, psi, backend, sample.theta) for rows in blocks
        )
    else:
        parts = [premetric_rows(rows, sample.frames, psi, backend, sample.theta) for rows in blocks]
    values = np.concatenate(parts) if parts else np.zeros((0, 0))

    np.fill_diagonal(values, 0.0)
    off = ~np.eye(count, dtype=bool)
    excluded = int((values[off] <= 0).sum())
    if excluded:
        logger.warning(f"{excluded} sample pairs coincide at float resolution and are excluded")
    logger.info(f"Premetric matrix {count}x{count} for {psi.name or 'form'} ({backend})")
    return PremetricMatrix(values, psi, backend, excluded)


def quasi_metric_constants(
    matrix: PremetricMatrix,
    max_triples: int = 200_000,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, object]:
    """
    Empirical quasi-triangle and quasi-symmetry constants.

    N_est is the largest d(1,3) / (d(1,2) + d(2,3)) over triples of distinct
    points (all of them when few enough, otherwise a seeded sample), and
    R_est the largest ratio d(i,j) / d(j,i).
    """
    values = matrix.values
    count = len(values)
    if count < 3:
        raise InsufficientSample("quasi_metric_constants needs at least 3 points", {"points": count})
    off = ~np.eye(count, dtype=bool)
    positive = off & (values > 0) & (values.T > 0)
    ratios = np.where(positive, values / np.where(positive, values.T, 1.0), 1.0)
    r_est = float(ratios.max())

    worst = (0.0, None)
    if count**3 <= max_triples:
        for i in range(count):
            denom = values[i][:, None] + values  # d(i, k) + d(k, j) indexed [k, j]
            with np.errstate(divide="ignore", invalid="ignore"):
                q = values[i][None, :] / denom
            q[:, i] = 0.0
            q[i, :] = 0.0
            np.fill_diagonal(q, 0.0)
            q = np.nan_to_num(q, nan=0.0, posinf=0.0)
            k, j = np.unravel_index(int(np.argmax(q)), q.shape)
            if q[k, j] > worst[0]:
                worst = (float(q[k, j]), (i, int(k), int(j)))
        sampled = count * (count - 1) * (count - 2)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        triples = rng.integers(0, count, size=(max_triples, 3))
        triples = triples[(triples[:, 0] != triples[:, 1]) & (triples[:, 1] != triples[:, 2])
                          & (triples[:, 0] != triples[:, 2])]
        i, k, j = triples.T
        denom = values[i, k] + values[k, j]
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.nan_to_num(values[i, j] / denom, nan=0.0, posinf=0.0)
        best = int(np.argmax(q))
        worst = (float(q[best]), tuple(int(x) for x in triples[best]))
        sampled = len(triples)

    logger.info(f"Quasi-metric constants: N_est = {worst[0]:.4f}, R_est = {r_est:.4f}")
    return {"N_est": worst[0], "R_est": r_est, "worst_triple": worst[1], "triples": sampled}


def comparison_ratio(first: PremetricMatrix, second: PremetricMatrix) -> float:
    """Largest max(a/b, b/a) over off-diagonal pairs where both are positive."""
    a, b = first.values, second.values
    mask = ~np.eye(len(a), dtype=bool) & (a > 0) & (b > 0)
    if not mask.any():
        return float("nan")
    ratio = a[mask] / b[mask]
    return float(np.maximum(ratio, 1.0 / ratio).max())


def main():
    """Compute the premetric matrix of a scenario's limit set sample."""
    from limit_sampler import sample_limit_set
    from scenario import load_scenario
    from word_engine import GeneratorSet, build_ball

    parser = argparse.ArgumentParser(description="Conformal premetric on a limit set sample")
    parser.add_argument("--config", "-c", type=str, required=True, help="Scenario file")
    parser.add_argument("--form", "-f", type=str, default=None, help="Form name")
    args = parser.parse_args()

    scenario = load_scenario(args.config)
    ball = build_ball(GeneratorSet.from_scenario(scenario), scenario.run.ball_length, scenario.run.budget)
    sample = sample_limit_set(ball, scenario.theta, scenario.run.dedupe_eps, scenario.run.max_sample)
    matrix = premetric_matrix(sample, scenario.form(args.form))
    print(quasi_metric_constants(matrix))


if __name__ == "__main__":
    main()
