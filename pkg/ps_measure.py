"""
Approximate Patterson-Sullivan measures and the checks run against them.

The measure is a weighted sum of atoms at the K-factor flags of ball
records, weight proportional to e^{-s psi(mu(gamma))} with s slightly above
the critical exponent. Shadows are decided by minimizing the distance from
g o to the Weyl chamber k exp(a+) o over the closed chamber, a convex
problem solved by projected gradient descent in chamber coordinates.
"""

import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from config import AHLFORS_BAND, PS_EXPONENT_MARGIN, SHADOW_BAND, SHADOW_RADIUS
from lie_core import (
    PRODUCT,
    Flag,
    GroupDescriptor,
    GroupElement,
    LinearForm,
    busemann_batch,
    cartan_coords,
    cartan_frames,
)
from limit_sampler import FlagSample
from poincare import critical_exponent
from premetric import PremetricMatrix, premetric_rows
from utils import get_logger
from utils.errors import DegenerateForm, InvalidTheta, OptimFailed, ScaleRangeTooNarrow
from utils.export import flag_frame_columns, write_csv
from word_engine import OrbitBall

# Set up logger
logger = get_logger(__name__)

TOLERANCE = 1e-6
STALL_TOLERANCE = 1e-4
MAX_ITERATIONS = 500
ARMIJO = 1e-4
MAX_STEP = 64.0
MIN_CENTERS = 100
MIN_DECADES = 2.0
CENTER_PAIRS = 2_000_000


def _doubled(values: np.ndarray) -> np.ndarray:
    return np.concatenate([values, values])


@dataclass
class AtomicMeasure:
    """A probability measure made of weighted flags."""

    descriptor: GroupDescriptor
    theta: Tuple[int, ...]
    frames: np.ndarray
    weights: np.ndarray
    ball_indices: np.ndarray
    letters: np.ndarray
    lengths: np.ndarray
    form: LinearForm
    s: float
    ball_length: int
    labels: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def flag(self, i: int) -> Flag:
        return Flag(self.descriptor, self.frames[i], self.theta)

    def word(self, i: int) -> str:
        return "".join(self.labels[x] for x in self.letters[i, : self.lengths[i]])

    def mass(self, mask: np.ndarray) -> float:
        return float(self.weights[mask].sum())

    def split(self) -> "AtomicMeasure":
        """Every atom duplicated with half its weight; the same measure."""
        return AtomicMeasure(
            self.descriptor, self.theta, _doubled(self.frames), _doubled(self.weights) / 2.0,
            _doubled(self.ball_indices), _doubled(self.letters), _doubled(self.lengths),
            self.form, self.s, self.ball_length, self.labels,
        )

    def as_sample(self) -> FlagSample:
        """The atom flags as a sample (weights dropped)."""
        return FlagSample(
            descriptor=self.descriptor,
            theta=self.theta,
            frames=self.frames,
            words=[self.word(i) for i in range(len(self))],
            ball_indices=self.ball_indices,
            dedupe_eps=0.0,
        )

    def describe(self) -> Dict[str, object]:
        return {
            "atoms": len(self),
            "total": self.total,
            "s": self.s,
            "ball_length": self.ball_length,
            "form": self.form.describe(),
        }

    def export_csv(self, path: Union[str, Path]) -> Path:
        flat = self.frames.reshape(len(self), -1)
        columns = flag_frame_columns(flat.shape[1])
        rows = [
            {"weight": w, "word": self.word(i), **dict(zip(columns, row))}
            for i, (w, row) in enumerate(zip(self.weights, flat))
        ]
        return write_csv(path, rows, ["weight", "word"] + columns)


def ps_approx(
    ball: OrbitBall,
    psi: LinearForm,
    s: Optional[float] = None,
    shell_min: int = 1,
    theta: Optional[Sequence[int]] = None,
) -> AtomicMeasure:
    """
    Weighted orbital measure approximating the Patterson-Sullivan measure of psi.

    Args:
        ball: Enumerated ball
        psi: Linear form positive on the limit cone
        s: Exponent; defaults to PS_EXPONENT_MARGIN times the critical exponent
        shell_min: Records shorter than this carry no atom
        theta: Flag type of the atoms (defaults to every simple root)

    Returns:
        The normalized measure

    Raises:
        DegenerateForm: if psi is not positive along the ball
    """
    d = ball.descriptor
    theta = d.validate_theta(theta if theta is not None else d.simple_roots)
    if s is None:
        s = PS_EXPONENT_MARGIN * critical_exponent(ball, psi).delta
    if s <= 0:
        raise DegenerateForm(f"Exponent s must be positive, got {s}", {"s": s})

    values = ball.form_values(psi)
    beyond = ball.lengths > 2
    if beyond.any() and (values[beyond] <= 0).mean() > 0.01:
        raise DegenerateForm("Form is non-positive on more than 1% of the records beyond length 2")

    mask = ball.lengths >= max(shell_min, 1)
    indices = np.flatnonzero(mask)
    log_weights = -s * values[indices]
    weights = np.exp(log_weights - special.logsumexp(log_weights))
    frames = cartan_frames(ball.matrices[indices], ball.inverses[indices], d)
    logger.info(f"Measure for {psi.name or 'form'} at s = {s:.5f}: {len(indices)} atoms")
    return AtomicMeasure(
        descriptor=d,
        theta=theta,
        frames=frames,
        weights=weights,
        ball_indices=indices,
        letters=ball.words[indices],
        lengths=ball.lengths[indices],
        form=psi,
        s=float(s),
        ball_length=ball.length,
        labels=list(ball.generators.letters),
    )


# ---------------------------------------------------------------------- shadows


def _full_diagonal(u: np.ndarray, d: GroupDescriptor) -> np.ndarray:
    if d.kind == PRODUCT:
        return np.stack([u, -u], axis=-1)
    return u


def _objective(c: np.ndarray, m: np.ndarray, m_inv: np.ndarray, d: GroupDescriptor, gradient: bool = True):
    """
    F(c) = |mu(exp(-u) M)|^2 with u = sum_p c_p coweight_p, and its gradient in c.

    The gradient in u is -diag(log H), H = h h^T, read from the Cartan
    frames and projection of h.
    """
    u = c @ d.coweights.T
    v = _full_diagonal(u, d)
    h = np.exp(-v)[..., :, None] * m
    h_inv = m_inv * np.exp(v)[..., None, :]
    mu = cartan_coords(h, h_inv, d)
    value = d.norm(mu) ** 2
    if not gradient:
        return value, None
    frames = cartan_frames(h, h_inv, d)
    if d.kind == PRODUCT:
        log_h = 2.0 * (frames[..., :, 0] ** 2 - frames[..., :, 1] ** 2) * mu[..., None]
        grad_u = -(log_h[..., 0] - log_h[..., 1])
    else:
        grad_u = -2.0 * np.einsum("...ij,...j->...i", frames**2, mu)
    return value, grad_u @ d.coweights


def _descend(
    m: np.ndarray,
    m_inv: np.ndarray,
    d: GroupDescriptor,
    start: np.ndarray,
    stop_below: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Batched projected gradient with Armijo backtracking on the orthant c >= 0.

    Returns:
        best values, minimizers and final projected-gradient norms
    """
    c = np.maximum(start, 0.0)
    value, grad = _objective(c, m, m_inv, d)
    step = np.ones(len(c))
    pg = np.linalg.norm(c - np.maximum(c - grad, 0.0), axis=-1)
    frozen = np.zeros(len(c), dtype=bool)
    for _ in range(MAX_ITERATIONS):
        active = (pg > TOLERANCE) & ~frozen
        if stop_below is not None:
            active &= value >= stop_below
        if not active.any():
            break
        idx = np.flatnonzero(active)
        t = step[idx].copy()
        trial = np.maximum(c[idx] - t[:, None] * grad[idx], 0.0)
        trial_value, _ = _objective(trial, m[idx], m_inv[idx], d, gradient=False)
        decrease = np.sum(grad[idx] * (c[idx] - trial), axis=-1)
        ok = trial_value <= value[idx] - ARMIJO * decrease
        for _ in range(50):
            if ok.all():
                break
            bad = np.flatnonzero(~ok)
            t[bad] *= 0.5
            trial[bad] = np.maximum(c[idx[bad]] - t[bad, None] * grad[idx[bad]], 0.0)
            trial_value[bad], _ = _objective(trial[bad], m[idx[bad]], m_inv[idx[bad]], d, gradient=False)
            decrease[bad] = np.sum(grad[idx[bad]] * (c[idx[bad]] - trial[bad]), axis=-1)
            ok[bad] = trial_value[bad] <= value[idx[bad]] - ARMIJO * decrease[bad]
        moved = idx[ok]
        c[moved] = trial[ok]
        value[moved], grad[moved] = _objective(c[moved], m[moved], m_inv[moved], d)
        step[moved] = np.minimum(2.0 * t[ok], MAX_STEP)
        step[idx[~ok]] = t[~ok]
        pg[idx] = np.linalg.norm(c[idx] - np.maximum(c[idx] - grad[idx], 0.0), axis=-1)
        # No acceptable step left at float resolution
        frozen[idx[~ok]] = True
    return value, c, pg


def shadow_distances(
    frames: np.ndarray,
    g: GroupElement,
    radius: Optional[float] = None,
) -> Dict[str, np.ndarray]:
    """
    Distances from g o to the chambers k exp(a+) o for a batch of frames k.

    With a radius, frames whose Busemann vector is 2R or more away from
    mu(g) are skipped (their distance is at least R), and descent stops as
    soon as a chamber comes within R.

    Returns:
        dist (exact minimum, or a lower bound for skipped frames, or a value
        below R when descent stopped early), grad_norm, evaluated mask
    """
    d = g.descriptor
    frames = np.asarray(frames, dtype=float)
    count = len(frames)
    mu_g = cartan_coords(g.matrix, g.inverse, d)
    beta = busemann_batch(frames, g.matrix, g.inverse, d, d.simple_roots)
    gap = d.norm(beta - mu_g)
    evaluate = np.ones(count, dtype=bool) if radius is None else gap < 2.0 * radius

    dist = 0.5 * gap
    grad_norm = np.zeros(count)
    idx = np.flatnonzero(evaluate)
    if len(idx):
        k = frames[idx]
        k_t = np.swapaxes(k, -1, -2)
        m = k_t @ g.matrix
        m_inv = g.inverse @ k
        stop = None if radius is None else radius**2
        seeds = [
            d.to_chamber_coords(beta[idx]),
            d.to_chamber_coords(np.broadcast_to(mu_g, beta[idx].shape)),
            np.zeros((len(idx), d.rank)),
        ]
        best = np.full(len(idx), np.inf)
        best_pg = np.zeros(len(idx))
        for seed in seeds:
            value, _, pg = _descend(m, m_inv, d, seed, stop_below=stop)
            better = value < best
            best[better] = value[better]
            best_pg[better] = pg[better]
        dist[idx] = np.sqrt(np.maximum(best, 0.0))
        grad_norm[idx] = best_pg
    return {"dist": dist, "grad_norm": grad_norm, "evaluated": evaluate}


def _check_shadow_theta(d: GroupDescriptor, theta: Sequence[int]) -> None:
    if d.kind != PRODUCT and tuple(theta) != d.simple_roots:
        raise InvalidTheta(
            "Shadows are only decided for full flags in SL(n, R) or for products of SL(2, R)",
            {"theta": list(theta)},
        )


def shadow_membership(xi: Flag, g: GroupElement, radius: float) -> Dict[str, object]:
    """
    Whether xi lies in the shadow O_R(o, g o), with the distance it was decided on.

    Raises:
        InvalidTheta: for partial flags in SL(n, R)
        OptimFailed: if descent stalls with gradient norm above 1e-4
    """
    _check_shadow_theta(xi.descriptor, xi.theta)
    result = shadow_distances(xi.frame[None], g)
    dist = float(result["dist"][0])
    grad_norm = float(result["grad_norm"][0])
    if grad_norm > STALL_TOLERANCE:
        raise OptimFailed("Chamber distance minimization stalled", dist**2, grad_norm)
    return {"member": dist < radius, "dist": dist}


def shadow_lemma_check(
    measure: AtomicMeasure,
    ball: OrbitBall,
    radius: float = SHADOW_RADIUS,
    per_length: int = 10,
    rng: Optional[np.random.Generator] = None,
    band: float = SHADOW_BAND,
) -> Dict[str, object]:
    """
    Ratios nu(O_R(o, gamma o)) * e^{psi(mu(gamma))} for sampled gamma with 4 <= |gamma| <= L - 2.

    The verdict passes when the non-empty ratios fit in [1/c0, c0] with
    c0 <= band and at most a tenth of the shadows are empty.
    """
    _check_shadow_theta(measure.descriptor, measure.theta)
    rng = rng if rng is not None else np.random.default_rng(0)
    psi = measure.form
    rows = []
    failures = 0
    for k in range(4, max(ball.length - 1, 4)):
        block = ball.shell(k)
        if block.stop <= block.start:
            continue
        size = min(per_length, block.stop - block.start)
        chosen = np.sort(rng.choice(np.arange(block.start, block.stop), size=size, replace=False))
        for i in chosen:
            g = ball.element(i)
            result = shadow_distances(measure.frames, g, radius)
            failures += int(np.sum(result["evaluated"] & (result["grad_norm"] > STALL_TOLERANCE)
                                   & (result["dist"] >= radius)))
            mass = measure.mass(result["dist"] < radius)
            rows.append({
                "word": ball.word_string(i),
                "length": k,
                "mass": mass,
                "ratio": mass * float(np.exp(psi(ball.cartan[i]))),
            })
    ratios = np.array([r["ratio"] for r in rows])
    positive = ratios[ratios > 0]
    empty = int(np.sum(ratios <= 0))
    c0 = float(max(positive.max(), 1.0 / positive.min())) if len(positive) else float("inf")
    passed = bool(c0 <= band and empty <= 0.1 * max(len(ratios), 1))
    if failures:
        logger.warning(f"{failures} chamber minimizations stalled during the shadow check")
    logger.info(f"Shadow lemma at R = {radius}: c0 = {c0:.3g}, {empty} empty shadows, pass = {passed}")
    return {
        "radius": radius,
        "c0": c0,
        "band": band,
        "empty_shadows": empty,
        "optim_failures": failures,
        "pass": passed,
        "ratios": rows,
    }


def radius_sweep(
    measure: AtomicMeasure,
    ball: OrbitBall,
    radii: Sequence[float],
    per_length: int = 10,
    seed: int = 0,
) -> List[Dict[str, object]]:
    """shadow_lemma_check at each radius with the same sampled elements."""
    results = []
    for radius in radii:
        check = shadow_lemma_check(measure, ball, radius, per_length, np.random.default_rng(seed))
        results.append({"radius": radius, "c0": check["c0"], "pass": check["pass"],
                        "empty_shadows": check["empty_shadows"]})
    return results


def _resolve_metric(measure: AtomicMeasure, metric: Union[PremetricMatrix, LinearForm]) -> LinearForm:
    if isinstance(metric, PremetricMatrix):
        if len(metric) != len(measure):
            logger.debug("Premetric matrix is not indexed by the atoms; using its form on atom frames")
        return metric.form
    return metric


def ball_masses(
    measure: AtomicMeasure,
    psi: LinearForm,
    centers: np.ndarray,
    scales: Sequence[float],
) -> Tuple[np.ndarray, np.ndarray]:
    """
    nu(B_psi(xi, r)) and the atom count of each ball, shape (scales, centers).

    Centers are processed in blocks so that no more than CENTER_PAIRS
    distances are held at once.
    """
    count = len(centers)
    masses = np.zeros((len(scales), count))
    members = np.zeros((len(scales), count), dtype=int)
    step = max(1, CENTER_PAIRS // max(len(measure), 1))
    for start in range(0, count, step):
        block = slice(start, min(start + step, count))
        distances = premetric_rows(centers[block], measure.frames, psi)
        for j, r in enumerate(scales):
            inside = distances < r
            masses[j, block] = inside @ measure.weights
            members[j, block] = inside.sum(axis=1)
    return masses, members


def ahlfors_check(
    measure: AtomicMeasure,
    metric: Union[PremetricMatrix, LinearForm],
    scales: Sequence[float],
    exponent: float = 1.0,
    centers: int = MIN_CENTERS,
    rng: Optional[np.random.Generator] = None,
    band: float = AHLFORS_BAND,
) -> Dict[str, object]:
    """
    Ratios nu(B_psi(xi, r)) / r^exponent over random atom centers and scales.

    Scales where more than 5% of the balls hold only their center or where
    the median ball holds half the mass are unresolved and left out of the
    verdict. The verdict passes when the 5th-95th percentile band of the
    resolved scales, which must span 2 decades, fits in [1/C, C] with
    C = C_est <= band.

    Raises:
        ScaleRangeTooNarrow: if the scale grid spans less than 2 decades
    """
    scales = np.sort(np.asarray(scales, dtype=float))
    if len(scales) < 2 or np.log10(scales[-1] / scales[0]) < MIN_DECADES:
        raise ScaleRangeTooNarrow(
            f"Ahlfors check needs scales over {MIN_DECADES} decades",
            {"lo": float(scales[0]) if len(scales) else None, "hi": float(scales[-1]) if len(scales) else None},
        )
    psi = _resolve_metric(measure, metric)
    rng = rng if rng is not None else np.random.default_rng(0)
    count = min(max(centers, MIN_CENTERS), len(measure))
    center_idx = np.sort(rng.choice(len(measure), size=count, replace=False))
    masses, members = ball_masses(measure, psi, measure.frames[center_idx], scales)

    table = []
    resolved = []
    for j, r in enumerate(scales):
        singletons = members[j] <= 1
        ratios = masses[j] / r**exponent
        p5, p50, p95 = np.percentile(ratios, [5, 50, 95])
        ok = bool(singletons.mean() <= 0.05 and np.median(masses[j]) < 0.5)
        resolved.append(ok)
        table.append({"r": float(r), "p5": float(p5), "p50": float(p50), "p95": float(p95), "resolved": ok})

    resolved = np.array(resolved)
    used = [row for row, ok in zip(table, resolved) if ok]
    span = float(np.log10(used[-1]["r"] / used[0]["r"])) if len(used) >= 2 else 0.0
    if used:
        hi = max(row["p95"] for row in used)
        lo = min(row["p5"] for row in used)
        c_est = float(max(hi, 1.0 / lo)) if lo > 0 else float("inf")
    else:
        c_est = float("inf")
    passed = bool(span >= MIN_DECADES and c_est <= band)
    logger.info(f"Ahlfors {exponent:g}-regularity: band factor {c_est:.3g} over {span:.2f} decades, pass = {passed}")
    return {
        "exponent": exponent,
        "C_est": c_est,
        "band": band,
        "resolved_decades": span,
        "centers": count,
        "pass": passed,
        "table": table,
    }


def ball_shadow_check(
    sample: FlagSample,
    ball: OrbitBall,
    psi: LinearForm,
    radius: float = SHADOW_RADIUS,
    prefix_lengths: Sequence[int] = range(4, 11),
    flags: int = 20,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, object]:
    """
    Inclusion constants between psi-balls and shadows along word rays.

    For a sampled flag xi with defining word w and each prefix g of the ray
    w w w ..., c is the largest constant with B_psi(xi, c e^{-psi(mu(g))})
    inside the shadow (on the sample) and c' the smallest with the shadow
    inside B_psi(xi, c' e^{-psi(mu(g))}). The check passes when the median
    constants drift by less than a factor 2 across prefix lengths.
    """
    _check_shadow_theta(sample.descriptor, sample.theta)
    rng = rng if rng is not None else np.random.default_rng(0)
    gens = ball.generators
    chosen = np.sort(rng.choice(len(sample), size=min(flags, len(sample)), replace=False))
    distances = premetric_rows(sample.frames[chosen], sample.frames, psi)

    per_length: Dict[int, Dict[str, List[float]]] = {m: {"c": [], "c_prime": []} for m in prefix_lengths}
    for row, i in enumerate(chosen):
        word = gens.parse_word(sample.words[i])
        ray = (word * (max(prefix_lengths) // len(word) + 1))[: max(prefix_lengths)]
        for m in prefix_lengths:
            g = gens.evaluate(ray[:m])
            scale = float(np.exp(-psi(cartan_coords(g.matrix, g.inverse, g.descriptor))))
            inside = shadow_distances(sample.frames, g, radius)["dist"] < radius
            outside = ~inside
            if outside.any():
                per_length[m]["c"].append(float(distances[row][outside].min()) / scale)
            if inside.any():
                per_length[m]["c_prime"].append(float(distances[row][inside].max()) / scale)

    rows = []
    for m in prefix_lengths:
        c_values, c_prime_values = per_length[m]["c"], per_length[m]["c_prime"]
        rows.append({
            "prefix_length": m,
            "c": float(np.median(c_values)) if c_values else float("nan"),
            "c_prime": float(np.median(c_prime_values)) if c_prime_values else float("nan"),
        })

    def drift(key: str) -> float:
        values = np.array([r[key] for r in rows])
        values = values[np.isfinite(values) & (values > 0)]
        return float(values.max() / values.min()) if len(values) >= 2 else float("nan")

    c_drift, c_prime_drift = drift("c"), drift("c_prime")
    passed = bool(np.isfinite(c_drift) and np.isfinite(c_prime_drift) and c_drift < 2.0 and c_prime_drift < 2.0)
    logger.info(f"Ball/shadow constants drift: c {c_drift:.3g}, c' {c_prime_drift:.3g}, pass = {passed}")
    return {"radius": radius, "c_drift": c_drift, "c_prime_drift": c_prime_drift, "pass": passed, "table": rows}


def conformality_check(
    measure: AtomicMeasure,
    ball: OrbitBall,
    word: str,
    cell_length: int = 2,
) -> Dict[str, object]:
    """
    Compare nu(gamma A) / nu(A) with the average of e^{psi(beta_xi(e, gamma^-1))} over A.

    Cells A are cylinders of atoms whose words start with a fixed reduced
    prefix that does not cancel against gamma.
    """
    gens = ball.generators
    letters = gens.parse_word(word)
    gamma = gens.evaluate(letters)
    inverse_beta = busemann_batch(measure.frames, gamma.inverse, gamma.matrix, measure.descriptor,
                                  measure.descriptor.simple_roots)
    factors = np.exp(measure.form(inverse_beta))

    prefix_len = measure.lengths >= cell_length
    prefixes = {tuple(row[:cell_length]) for row in measure.letters[prefix_len]}
    rows = []
    for prefix in sorted(prefixes):
        if prefix[0] == gens.inverse_letter(letters[-1]):
            continue
        cell = prefix_len & np.all(measure.letters[:, :cell_length] == np.array(prefix), axis=1)
        target = tuple(letters) + prefix
        span = len(target)
        image = (measure.lengths >= span) & np.all(measure.letters[:, :span] == np.array(target), axis=1)
        mass_a = measure.mass(cell)
        if mass_a <= 0 or not image.any():
            continue
        observed = measure.mass(image) / mass_a
        predicted = float(np.sum(measure.weights[cell] * factors[cell]) / mass_a)
        rows.append({
            "cell": gens.word_string(prefix),
            "observed": observed,
            "predicted": predicted,
            "relative_error": abs(observed - predicted) / predicted,
        })
    errors = np.array([r["relative_error"] for r in rows])
    median = float(np.median(errors)) if len(errors) else float("nan")
    logger.info(f"Conformality for {word}: median relative error {median:.3f} over {len(rows)} cells")
    return {"word": word, "median_relative_error": median, "cells": rows}


def main():
    """Build the measure of a scenario form and run the shadow-lemma check."""
    from scenario import load_scenario
    from word_engine import GeneratorSet, build_ball

    parser = argparse.ArgumentParser(description="Patterson-Sullivan approximation and shadow checks")
    parser.add_argument("--config", "-c", type=str, required=True, help="Scenario file")
    parser.add_argument("--radius", "-R", type=float, default=None, help="Shadow radius")
    args = parser.parse_args()

    scenario = load_scenario(args.config)
    run = scenario.run
    ball = build_ball(GeneratorSet.from_scenario(scenario), run.ball_length, run.budget)
    measure = ps_approx(ball, scenario.form(), shell_min=run.effective_shell_min)
    check = shadow_lemma_check(measure, ball, args.radius or run.radius)
    print(f"c0 = {check['c0']:.3g}, pass = {check['pass']}")


if __name__ == "__main__":
    main()
