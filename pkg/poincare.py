"""
Critical exponents and growth indicators for AnosovLab.

Two estimators of the critical exponent of sum_gamma e^{-s psi(mu(gamma))}
are run on every ball:

- count-slope: least-squares slope of log N(T), N(T) = #{psi(mu) <= T}, over
  the part of the T-range where the ball is complete, minus its transient
  and truncation ends;
- series-bisection: the s at which the geometric mean of the last shell-sum
  ratios S_{k+1}(s) / S_k(s) crosses 1.

The spread between the two is reported as the uncertainty.
"""

import argparse
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special, stats

from lie_core import PRODUCT, AVector, LinearForm, opposition_form, symmetrize_form
from utils import get_logger
from utils.errors import DegenerateForm
from word_engine import OrbitBall

# Set up logger
logger = get_logger(__name__)

WINDOW = (0.3, 0.95)
GRID_POINTS = 64
SMOOTHING_SHELLS = 3
DEGENERATE_FRACTION = 0.01
MIN_CONE_RECORDS = 20


@dataclass
class ExponentReport:
    """Critical exponent of one form on one ball."""

    delta: float
    method: str
    delta_count: float
    delta_series: Optional[float]
    fit_window: Tuple[float, float]
    residual: float
    intercept: float
    counts: List[Tuple[float, int]]
    shell_counts: List[int]
    nonpositive_records: int = 0
    nonpositive_words: List[str] = field(default_factory=list)
    form: Optional[str] = None
    shell_sums: List[float] = field(default_factory=list)

    @property
    def spread(self) -> float:
        if self.delta_series is None:
            return 0.0
        return abs(self.delta_count - self.delta_series)

    @property
    def uncertainty(self) -> float:
        """Combined error bar: fit residual and method spread."""
        return max(self.residual, self.spread)

    def to_dict(self) -> Dict[str, object]:
        return {
            "delta": self.delta,
            "method": self.method,
            "delta_count_slope": self.delta_count,
            "delta_series_bisection": self.delta_series,
            "spread": self.spread,
            "fit_window": list(self.fit_window),
            "residual": self.residual,
            "intercept": self.intercept,
            "counts": [{"T": t, "N": n} for t, n in self.counts],
            "shell_counts": self.shell_counts,
            "nonpositive_records": self.nonpositive_records,
            "nonpositive_words": self.nonpositive_words,
            "form": self.form,
            "shell_log_sums": self.shell_sums,
        }


def _check_positive(ball: OrbitBall, values: np.ndarray) -> Tuple[int, List[str]]:
    beyond = ball.lengths > 2
    bad = beyond & (values <= 0)
    count = int(bad.sum())
    total = int(beyond.sum())
    if total and count > DEGENERATE_FRACTION * total:
        raise DegenerateForm(
            f"Form is non-positive on {count} of {total} records beyond length 2",
            {"nonpositive": count, "records": total},
        )
    nonpositive = np.flatnonzero((values <= 0) & (ball.lengths > 0))
    return int(len(nonpositive)), [ball.word_string(i) for i in nonpositive[:20]]


def count_slope(values: np.ndarray, t_complete: float, window: Tuple[float, float] = WINDOW) -> Dict[str, float]:
    """
    Slope of log N(T) over the window (as fractions of t_complete).

    Returns:
        slope, intercept, residual (RMS of the fit), the T-grid and counts
    """
    grid = np.linspace(window[0] * t_complete, window[1] * t_complete, GRID_POINTS)
    counts = np.searchsorted(np.sort(values), grid, side="right")
    counts = np.maximum(counts, 1)
    log_counts = np.log(counts)
    if np.ptp(log_counts) == 0:
        return {"slope": 0.0, "intercept": float(log_counts[0]), "residual": 0.0, "grid": grid, "counts": counts}
    fit = stats.linregress(grid, log_counts)
    residuals = log_counts - (fit.intercept + fit.slope * grid)
    rms = float(np.sqrt(np.mean(residuals**2)))
    # Residual in slope units: RMS error spread over the window width
    residual = max(float(fit.stderr), rms / max(grid[-1] - grid[0], 1e-12))
    return {"slope": float(fit.slope), "intercept": float(fit.intercept), "residual": residual,
            "grid": grid, "counts": counts}


def shell_log_sums(ball: OrbitBall, values: np.ndarray, s: float) -> np.ndarray:
    """log S_k(s) = log sum over |gamma| = k of e^{-s psi(mu(gamma))}, for k = 0..L."""
    out = np.empty(ball.length + 1)
    for k in range(ball.length + 1):
        block = ball.shell(k)
        out[k] = special.logsumexp(-s * values[block])
    return out


def series_bisection(ball: OrbitBall, values: np.ndarray) -> Optional[float]:
    """
    Zero of the smoothed shell-ratio exponent s -> (log S_L(s) - log S_{L-m}(s)) / m.

    Returns None when the ball has fewer than two shells.
    """
    length = ball.length
    if length < 2:
        return None
    m = min(SMOOTHING_SHELLS, length - 1)
    outer, inner = ball.shell(length), ball.shell(length - m)

    def rate(s: float) -> float:
        return (special.logsumexp(-s * values[outer]) - special.logsumexp(-s * values[inner])) / m

    if rate(0.0) <= 0:
        return 0.0
    hi = 1.0
    for _ in range(80):
        if rate(hi) < 0:
            break
        hi *= 2.0
    else:
        raise DegenerateForm("Shell sums do not decay for any s; the form does not grow along the ball")
    return float(optimize.brentq(rate, 0.0, hi, xtol=1e-12))


def critical_exponent(ball: OrbitBall, psi: LinearForm, primary: str = "series-bisection") -> ExponentReport:
    """
    Critical exponent of psi on the ball by both estimators.

    Args:
        ball: Enumerated ball
        psi: Linear form, positive on the limit cone
        primary: Which estimator fills ExponentReport.delta

    Returns:
        The exponent report

    Raises:
        DegenerateForm: if psi <= 0 on more than 1% of the records beyond length 2
    """
    values = ball.form_values(psi)
    nonpositive, bad_words = _check_positive(ball, values)
    if nonpositive:
        logger.warning(f"{nonpositive} records have non-positive {psi.name or 'form'} values")

    outer = ball.shell(ball.length)
    t_complete = float(values[outer].min()) if ball.length > 0 else 0.0
    if t_complete <= 0:
        raise DegenerateForm("The outer shell does not give a positive completeness level",
                             {"t_complete": t_complete})
    fit = count_slope(values, t_complete)
    delta_series = series_bisection(ball, values)

    if primary == "series-bisection" and delta_series is not None:
        delta, method = delta_series, "series-bisection"
    else:
        delta, method = fit["slope"], "count-slope"

    report = ExponentReport(
        delta=delta,
        method=method,
        delta_count=fit["slope"],
        delta_series=delta_series,
        fit_window=(float(fit["grid"][0]), float(fit["grid"][-1])),
        residual=fit["residual"],
        intercept=fit["intercept"],
        counts=[(float(t), int(n)) for t, n in zip(fit["grid"], fit["counts"])],
        shell_counts=[int(ball.shell(k).stop - ball.shell(k).start) for k in range(ball.length + 1)],
        nonpositive_records=nonpositive,
        nonpositive_words=bad_words,
        form=psi.name,
        shell_sums=[float(x) for x in shell_log_sums(ball, values, delta)],
    )
    series_text = f"{delta_series:.6f}" if delta_series is not None else "n/a"
    logger.info(
        f"delta[{psi.name or 'form'}] = {delta:.6f} (count-slope {fit['slope']:.6f}, "
        f"series {series_text}, residual {fit['residual']:.2e})"
    )
    return report


def growth_indicator(
    ball: OrbitBall,
    u: AVector,
    aperture: float,
    theta: Optional[Sequence[int]] = None,
) -> float:
    """
    Growth indicator at u from the round cone of the given aperture about u.

    The cone's exponent is the count-slope of #{gamma : mu_theta(gamma) in C,
    |mu_theta(gamma)| <= T}; the result is |u| times that slope, or -inf
    when the cone holds too few records to fit.
    """
    if not 0 < aperture <= np.pi / 4:
        raise ValueError(f"Aperture must lie in (0, pi/4], got {aperture}")
    d = ball.descriptor
    theta = tuple(theta) if theta is not None else d.simple_roots
    mu = d.project_theta(ball.cartan, theta)
    u_coords = d.project_theta(u.coords, theta)
    u_norm = float(d.norm(u_coords))
    if u_norm == 0:
        raise ValueError("Direction must be nonzero")

    norms = d.norm(mu)
    scale = 2.0 if d.kind == PRODUCT else 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        cosines = scale * (mu @ u_coords) / (norms * u_norm)
    inside = (norms > 0) & (cosines >= np.cos(aperture))
    if inside.sum() < MIN_CONE_RECORDS:
        return float("-inf")

    t_complete = float(norms[ball.shell(ball.length)].min())
    fit = count_slope(norms[inside], t_complete)
    if len(np.unique(fit["counts"])) < 4:
        return float("-inf")
    return u_norm * fit["slope"]


def tangent_normalize(psi: LinearForm, ball: OrbitBall) -> LinearForm:
    """delta_psi * psi, whose critical exponent is 1."""
    report = critical_exponent(ball, psi)
    if not 0 < report.delta < np.inf:
        raise DegenerateForm(f"Cannot normalize: delta = {report.delta}", {"delta": report.delta})
    scaled = psi * report.delta
    scaled.name = f"tangent({psi.name})" if psi.name else "tangent"
    return scaled


def rigidity_bound(delta_1: float, delta_2: float, p: float, q: float) -> float:
    """(p / delta_1 + q / delta_2)^-1, the exponent of the self-joining when sigma = id."""
    return 1.0 / (p / delta_1 + q / delta_2)


def symmetrization_report(ball: OrbitBall, psi: LinearForm) -> Dict[str, object]:
    """Exponents of psi, psi o iota and the symmetrized form, with the gap against the combined residual."""
    base = critical_exponent(ball, psi)
    mirrored = critical_exponent(ball, opposition_form(psi))
    symmetric = critical_exponent(ball, symmetrize_form(psi))
    gap = base.delta - symmetric.delta
    combined = base.residual + symmetric.residual
    return {
        "delta_psi": base.delta,
        "delta_psi_iota": mirrored.delta,
        "delta_psi_bar": symmetric.delta,
        "gap": gap,
        "combined_residual": combined,
        "strict": bool(gap > 3 * combined),
    }


def main():
    """Print the critical exponent of a scenario form."""
    from scenario import load_scenario
    from word_engine import GeneratorSet, build_ball

    parser = argparse.ArgumentParser(description="Critical exponent of a linear form")
    parser.add_argument("--config", "-c", type=str, required=True, help="Scenario file")
    parser.add_argument("--form", "-f", type=str, default=None, help="Form name")
    parser.add_argument("--ball-length", "-L", type=int, default=None, help="Maximal word length")
    args = parser.parse_args()

    scenario = load_scenario(args.config)
    length = args.ball_length if args.ball_length is not None else scenario.run.ball_length
    ball = build_ball(GeneratorSet.from_scenario(scenario), length, scenario.run.budget)
    report = critical_exponent(ball, scenario.form(args.form))
    print(f"delta = {report.delta:.6f} ({report.method}), spread {report.spread:.2e}")


if __name__ == "__main__":
    main()
