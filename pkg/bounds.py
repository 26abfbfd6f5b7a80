"""
Weight inequalities, dimension bounds and the temperedness criterion.

The constant c_theta is the least c with sum over theta of
(chi_alpha + chi_iota(alpha)) <= c rho on the closed positive chamber. Both
sides are linear and the chamber is the cone over the fundamental
coweights, so the maximum of the ratio is attained on one of those rays.
"""

import argparse
import itertools
from typing import Dict, List, Optional, Sequence

import numpy as np

from dimension import riemannian_dimension
from lie_core import AVector, GroupDescriptor, LinearForm, builtin_forms, tits_pair_form
from limit_sampler import FlagSample
from poincare import critical_exponent, growth_indicator
from utils import get_logger
from word_engine import LimitCone, OrbitBall, limit_cone_estimate

# Set up logger
logger = get_logger(__name__)

GROWTH_TOLERANCE = 0.05


def _theta_sum(descriptor: GroupDescriptor, theta: Sequence[int]) -> LinearForm:
    """sum over alpha in theta of chi_alpha + chi_iota(alpha)."""
    coefficients = sum(tits_pair_form(descriptor, p).weight_coefficients for p in theta)
    return LinearForm(descriptor, coefficients, "weight", "theta_sum")


def _ratio_max(descriptor: GroupDescriptor, theta: Sequence[int], directions: np.ndarray) -> float:
    rho = builtin_forms(descriptor)["rho"]
    numerator = _theta_sum(descriptor, theta)(directions)
    return float(np.max(numerator / rho(directions)))


def c_theta(descriptor: GroupDescriptor, theta: Sequence[int]) -> float:
    """Maximum of sum_theta (chi_alpha + chi_iota(alpha)) / rho over the coweight rays."""
    theta = descriptor.validate_theta(theta)
    return _ratio_max(descriptor, theta, descriptor.coweights.T)


def c_theta_grid(descriptor: GroupDescriptor, theta: Sequence[int], resolution: int = 24) -> float:
    """The same maximum over a simplex lattice of chamber directions (rays included)."""
    theta = descriptor.validate_theta(theta)
    rank = descriptor.rank
    points = [c for c in itertools.product(range(resolution + 1), repeat=rank) if sum(c) == resolution]
    directions = np.array(points, dtype=float) @ descriptor.coweights.T
    return _ratio_max(descriptor, theta, directions)


def c_theta_cone(cone: LimitCone, theta: Sequence[int]) -> float:
    """The same maximum over the sampled limit-cone directions only."""
    theta = cone.descriptor.validate_theta(theta)
    return _ratio_max(cone.descriptor, theta, cone.directions)


def smilga_check(descriptor: GroupDescriptor) -> Dict[str, object]:
    """Weight coefficients of rho - sum_alpha chi_alpha, all of which must be >= 0."""
    forms = builtin_forms(descriptor)
    total = forms["rho"]
    for p in descriptor.simple_roots:
        total = total - forms[f"chi{p}"]
    coefficients = total.weight_coefficients
    return {"coefficients": coefficients.tolist(), "pass": bool(np.all(coefficients >= -1e-12))}


def forms_ordered(lower: LinearForm, upper: LinearForm) -> bool:
    """Whether lower <= upper on the closed positive chamber (checked on the coweight rays)."""
    rays = lower.descriptor.coweights.T
    return bool(np.all(upper(rays) - lower(rays) >= -1e-12))


def dimension_bounds_report(
    ball: OrbitBall,
    sample: FlagSample,
    theta: Sequence[int],
    scales: Optional[Sequence[float]] = None,
    dim_result: Optional[Dict[str, object]] = None,
) -> Dict[str, object]:
    """
    max_alpha delta_{chi_alpha + chi_iota(alpha)} <= dim <= max_alpha delta_alpha, with the sample's dimension.

    Args:
        ball: Enumerated ball
        sample: Limit set sample for the dimension estimate
        theta: Simple roots
        scales: Radii for the dimension estimate (auto_scales when None)
        dim_result: A precomputed riemannian_dimension result

    Returns:
        lower, upper, dim_est, the tolerance and the consistency verdict
    """
    d = ball.descriptor
    theta = d.validate_theta(theta)
    forms = builtin_forms(d)
    lower_reports, upper_reports = {}, {}
    ordered = True
    for p in theta:
        pair = tits_pair_form(d, p)
        root = forms[f"alpha{p}"]
        ordered &= forms_ordered(root, pair)
        lower_reports[pair.name] = critical_exponent(ball, pair)
        upper_reports[root.name] = critical_exponent(ball, root)
    if not ordered:
        logger.warning("Some chi_alpha + chi_iota(alpha) is not above alpha on the chamber")

    lower_name = max(lower_reports, key=lambda k: lower_reports[k].delta)
    upper_name = max(upper_reports, key=lambda k: upper_reports[k].delta)
    lower, upper = lower_reports[lower_name], upper_reports[upper_name]

    dim_result = dim_result if dim_result is not None else riemannian_dimension(sample, scales)
    dim_est = dim_result["dim"]
    ci = dim_result["ci"]
    tol = max(ci[1] - dim_est, dim_est - ci[0]) + lower.uncertainty + upper.uncertainty
    consistent = bool(lower.delta - tol <= dim_est <= upper.delta + tol)
    logger.info(
        f"Dimension bounds: {lower.delta:.4f} <= {dim_est:.4f} <= {upper.delta:.4f} "
        f"(tol {tol:.4f}, consistent = {consistent})"
    )
    return {
        "lower": lower.delta,
        "lower_form": lower_name,
        "upper": upper.delta,
        "upper_form": upper_name,
        "dim_est": dim_est,
        "ci": list(ci),
        "tolerance": tol,
        "consistent": consistent,
        "lower_le_upper": bool(lower.delta <= upper.delta + lower.uncertainty + upper.uncertainty),
        "forms_ordered": ordered,
        "exponents": {name: r.delta for name, r in {**lower_reports, **upper_reports}.items()},
    }


def direction_grid(cone: LimitCone, count: int = 9, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Unit directions spread over the sampled limit cone."""
    d = cone.descriptor
    if d.rank == 1 or len(cone.directions) == 1:
        return cone.directions[:1]
    if d.rank == 2:
        first, second = cone.extreme_directions[0], cone.extreme_directions[-1]
        weights = np.linspace(0.0, 1.0, count)
        grid = (1 - weights)[:, None] * first + weights[:, None] * second
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        grid = cone.directions[rng.choice(len(cone.directions), size=min(count, len(cone.directions)), replace=False)]
    return grid / d.norm(grid)[:, None]


def growth_bound_check(
    ball: OrbitBall,
    theta: Sequence[int],
    dim_est: float,
    aperture: float = 0.15,
    directions: Optional[np.ndarray] = None,
    tolerance: float = GROWTH_TOLERANCE,
) -> Dict[str, object]:
    """
    Margins dim * min_alpha (chi_alpha + chi_iota(alpha))(u) - psi_Gamma(u) over a direction grid.

    The rho-form margin c_theta * dim / #theta * rho(u) - psi_Gamma(u) is
    reported next to it, with c_theta over the chamber and over the limit
    cone. Directions where the growth indicator is -inf get margin +inf.
    """
    d = ball.descriptor
    theta = d.validate_theta(theta)
    cone = limit_cone_estimate(ball)
    if directions is None:
        directions = direction_grid(cone)
    pairs = [tits_pair_form(d, p) for p in theta]
    rho = builtin_forms(d)["rho"]
    c_chamber = c_theta(d, theta)
    c_cone = c_theta_cone(cone, theta)

    rows = []
    for u in np.atleast_2d(directions):
        indicator = growth_indicator(ball, AVector(d, u), aperture, theta)
        bound = dim_est * min(float(form(u)) for form in pairs)
        rho_bound = c_chamber * dim_est / len(theta) * float(rho(u))
        rho_cone_bound = c_cone * dim_est / len(theta) * float(rho(u))
        if np.isneginf(indicator):
            margin = rho_margin = rho_cone_margin = float("inf")
        else:
            margin = bound - indicator
            rho_margin = rho_bound - indicator
            rho_cone_margin = rho_cone_bound - indicator
        rows.append({
            "direction": u.tolist(),
            "growth_indicator": indicator,
            "margin": margin,
            "rho_margin": rho_margin,
            "rho_cone_margin": rho_cone_margin,
        })
    worst = min(r["margin"] for r in rows)
    passed = bool(worst >= -tolerance)
    logger.info(f"Growth bound: worst margin {worst:.4f} over {len(rows)} directions, pass = {passed}")
    return {
        "dim_est": dim_est,
        "aperture": aperture,
        "c_theta": c_chamber,
        "c_theta_cone": c_cone,
        "worst_margin": worst,
        "tolerance": tolerance,
        "pass": passed,
        "forms": [f.name for f in pairs],
        "directions": rows,
    }


def integrability_exponent(dim_est: float, threshold: float) -> float:
    """Smallest p >= 1 with dim <= (2 - 2/p) * threshold; inf when no p works."""
    x = dim_est / threshold
    if x >= 2.0:
        return float("inf")
    return max(1.0, 2.0 / (2.0 - x))


def temperedness_verdict(
    dim_est: float,
    ci: Sequence[float],
    theta: Sequence[int],
    descriptor: GroupDescriptor,
    cone: Optional[LimitCone] = None,
) -> Dict[str, object]:
    """
    Quote the criterion dim <= #theta / c_theta at the upper end of the dimension interval.

    Only the criterion is evaluated; nothing spectral is computed.
    """
    theta = descriptor.validate_theta(theta)
    threshold = len(theta) / c_theta(descriptor, theta)
    upper = float(max(ci[1], dim_est))
    margin = threshold - upper
    result = {
        "dim_est": dim_est,
        "criterion_value": threshold,
        "dim_upper": upper,
        "margin": margin,
        "verdict": bool(margin >= 0),
        "p_min": integrability_exponent(upper, threshold),
    }
    if cone is not None:
        cone_threshold = len(theta) / c_theta_cone(cone, theta)
        result["cone_criterion_value"] = cone_threshold
        result["cone_verdict"] = bool(upper <= cone_threshold)
    logger.info(f"Temperedness criterion {upper:.4f} <= {threshold:.4f}: {result['verdict']}")
    return result


def c_theta_table(max_n: int = 8) -> List[Dict[str, object]]:
    """c_Pi(SL(n, R)) for n = 2..max_n."""
    return [{"n": n, "c_Pi": c_theta(GroupDescriptor.sl(n), range(1, n))} for n in range(2, max_n + 1)]


def main():
    """Print c_theta for SL(n, R) and every theta of a small rank."""
    parser = argparse.ArgumentParser(description="Weight-inequality constants")
    parser.add_argument("--n", type=int, default=3, help="Matrix size")
    args = parser.parse_args()

    d = GroupDescriptor.sl(args.n)
    for size in range(1, d.rank + 1):
        for theta in itertools.combinations(d.simple_roots, size):
            print(f"theta={list(theta)}: c = {c_theta(d, theta):.6f}")


if __name__ == "__main__":
    main()
