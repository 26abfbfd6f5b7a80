"""
Covering numbers and box dimensions of finite flag samples.

Covers are greedy farthest-point traversals of the symmetrized premetric,
so one traversal gives N(r) at every radius: N(r) is one plus the number of
insertion radii above r. The dimension is the slope of log N(r) against
log(1/r) over the contiguous window of scales with the best linear fit.
"""

import argparse
from typing import Dict, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from lie_core import LinearForm, frame_distances, symmetrize_form
from limit_sampler import FlagSample
from poincare import critical_exponent
from premetric import PremetricMatrix, premetric_matrix
from utils import get_logger
from utils.errors import InsufficientScales
from word_engine import OrbitBall

# Set up logger
logger = get_logger(__name__)

MIN_SCALES = 8
MIN_DECADES = 1.5
MIN_WINDOW = 6
MIN_SMALL_SCALE_COVER = 10
R2_SLACK = 0.005
ROW_BLOCK = 256


def _as_distances(matrix: Union[PremetricMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(matrix, PremetricMatrix):
        return matrix.symmetrized()
    values = np.asarray(matrix, dtype=float)
    return np.maximum(values, values.T)


def insertion_radii(distances: np.ndarray) -> np.ndarray:
    """
    Farthest-point traversal from point 0.

    Returns:
        radii[k] = distance from the (k+2)-th center to the first k+1 centers,
        a non-increasing sequence of length n - 1
    """
    count = len(distances)
    if count == 0:
        return np.zeros(0)
    nearest = distances[0].copy()
    radii = np.empty(count - 1)
    for k in range(count - 1):
        far = int(np.argmax(nearest))
        radii[k] = nearest[far]
        np.minimum(nearest, distances[far], out=nearest)
    return radii


def covering_number(matrix: Union[PremetricMatrix, np.ndarray], r: float, radii: Optional[np.ndarray] = None) -> int:
    """
    Size of the greedy cover at radius r.

    Centers are added farthest-first until every point lies within r of a
    center; the order is fixed by the sample order.
    """
    if r <= 0:
        raise ValueError(f"Radius must be positive, got {r}")
    if radii is None:
        radii = insertion_radii(_as_distances(matrix))
    return int(1 + np.count_nonzero(radii > r))


def auto_scales(distances: np.ndarray, decades: float = 2.0, count: int = 16) -> np.ndarray:
    """
    Geometric grid from the median nearest-neighbour distance up to the median distance.

    The lower end is pushed down when needed so the grid spans at least the
    given number of decades.
    """
    values = np.atleast_2d(np.asarray(distances, dtype=float))
    positive = values[values > 0]
    if not len(positive):
        raise InsufficientScales("No positive distances to build a scale grid from")
    hi = float(np.median(positive))
    nearest = np.where(values > 0, values, np.inf).min(axis=1)
    lo = float(np.median(nearest[np.isfinite(nearest)]))
    lo = min(lo, hi * 10.0 ** (-decades))
    return np.geomspace(lo, hi, count)


def _check_scales(scales: np.ndarray) -> None:
    if len(scales) < MIN_SCALES:
        raise InsufficientScales(
            f"Need at least {MIN_SCALES} scales, got {len(scales)}",
            {"scales": len(scales), "required": MIN_SCALES},
        )
    if np.any(scales <= 0):
        raise InsufficientScales("Scales must be positive")
    decades = float(np.log10(scales.max() / scales.min()))
    if decades < MIN_DECADES:
        raise InsufficientScales(
            f"Scales span {decades:.2f} decades, need {MIN_DECADES}",
            {"decades": decades, "required": MIN_DECADES},
        )


def _best_window(x: np.ndarray, y: np.ndarray) -> Dict[str, object]:
    """Contiguous window of at least MIN_WINDOW points with the best R^2, preferring longer windows on near-ties."""
    fits = []
    for lo in range(len(x)):
        for hi in range(lo + MIN_WINDOW, len(x) + 1):
            if np.ptp(y[lo:hi]) == 0:
                continue
            fit = stats.linregress(x[lo:hi], y[lo:hi])
            fits.append((lo, hi, fit))
    if not fits:
        return {}
    best_r2 = max(f.rvalue**2 for _, _, f in fits)
    near = [item for item in fits if item[2].rvalue**2 >= best_r2 - R2_SLACK]
    lo, hi, fit = max(near, key=lambda item: (item[1] - item[0], item[2].rvalue**2))
    return {"lo": lo, "hi": hi, "fit": fit}


def box_dimension(
    matrix: Union[PremetricMatrix, np.ndarray],
    scales: Sequence[float],
) -> Dict[str, object]:
    """
    Box dimension from greedy covers over a geometric grid of radii.

    Args:
        matrix: Premetric matrix, or a raw distance array
        scales: Radii, at least 8 of them over at least 1.5 decades

    Returns:
        Dict with dim, ci (lo, hi), intercept, r2, window and the per-scale table

    Raises:
        InsufficientScales: if the grid is too short or the covers saturate
    """
    scales = np.sort(np.asarray(scales, dtype=float))
    _check_scales(scales)
    distances = _as_distances(matrix)
    count = len(distances)
    radii = insertion_radii(distances)
    covers = np.array([covering_number(distances, r, radii) for r in scales])

    if covers[0] <= MIN_SMALL_SCALE_COVER:
        logger.warning(f"Only {covers[0]} balls at the smallest scale; sample too coarse for these scales")
    usable = (covers > 1) & (covers < count)
    if (~usable).any():
        logger.warning(f"{int((~usable).sum())} saturated scales excluded from the fit")

    x = np.log(1.0 / scales)
    y = np.log(covers)
    index = np.flatnonzero(usable)
    # Longest contiguous run of usable scales
    runs = np.split(index, np.flatnonzero(np.diff(index) != 1) + 1) if len(index) else []
    run = max(runs, key=len) if runs else np.array([], dtype=int)
    if len(run) < MIN_WINDOW:
        raise InsufficientScales(
            f"Only {len(run)} unsaturated scales, need {MIN_WINDOW}",
            {"usable": int(len(run)), "sample": count},
        )

    chosen = _best_window(x[run], y[run])
    if not chosen:
        raise InsufficientScales("Covering numbers are constant over the usable scales")
    lo, hi, fit = chosen["lo"], chosen["hi"], chosen["fit"]
    window = run[lo:hi]

    slopes = [fit.slope]
    for a in range(lo, hi):
        for b in range(a + MIN_WINDOW, hi + 1):
            if (a, b) != (lo, hi) and np.ptp(y[run][a:b]) > 0:
                slopes.append(stats.linregress(x[run][a:b], y[run][a:b]).slope)
    ci = (
        float(min(min(slopes), fit.slope - 2 * fit.stderr)),
        float(max(max(slopes), fit.slope + 2 * fit.stderr)),
    )
    in_window = np.zeros(len(scales), dtype=bool)
    in_window[window] = True
    table = [
        {"r": float(r), "N": int(n), "in_window": bool(w)} for r, n, w in zip(scales, covers, in_window)
    ]
    logger.info(f"Box dimension {fit.slope:.4f} (ci {ci[0]:.4f}..{ci[1]:.4f}, R^2 {fit.rvalue**2:.4f})")
    return {
        "dim": float(fit.slope),
        "ci": ci,
        "intercept": float(fit.intercept),
        "r2": float(fit.rvalue**2),
        "window": (float(scales[window[0]]), float(scales[window[-1]])),
        "sample_size": count,
        "table": table,
    }


def _riemannian_rows(frames: np.ndarray, rows: np.ndarray, descriptor, theta) -> np.ndarray:
    return frame_distances(frames[rows][:, None], frames[None, :], descriptor, theta)


def riemannian_distances(sample: FlagSample, workers: int = 1) -> np.ndarray:
    """Chordal flag distances max over theta of the principal-angle sine, for every pair."""
    count = len(sample)
    blocks = [np.arange(s, min(s + ROW_BLOCK, count)) for s in range(0, count, ROW_BLOCK)]
    if workers > 1:
        parts = Parallel(n_jobs=workers)(
            delayed(_riemannian_rows)(sample.frames, rows, sample.descriptor, sample.theta) for rows in blocks
        )
    else:
        parts = [_riemannian_rows(sample.frames, rows, sample.descriptor, sample.theta) for rows in blocks]
    distances = np.concatenate(parts) if parts else np.zeros((0, 0))
    np.fill_diagonal(distances, 0.0)
    return distances


def riemannian_dimension(
    sample: FlagSample,
    scales: Optional[Sequence[float]] = None,
    workers: int = 1,
    distances: Optional[np.ndarray] = None,
) -> Dict[str, object]:
    """Box dimension of the sample in the Riemannian (chordal) flag metric; scales default to auto_scales."""
    if distances is None:
        distances = riemannian_distances(sample, workers)
    result = box_dimension(distances, scales if scales is not None else auto_scales(distances))
    result["metric"] = "riemannian"
    return result


def psi_dimension_report(
    sample: FlagSample,
    psi: LinearForm,
    ball: OrbitBall,
    scales: Optional[Sequence[float]] = None,
    workers: int = 1,
) -> Dict[str, object]:
    """
    Box dimension under d_psi next to delta_psi and the exponent of the symmetrized form.

    For psi positive on the limit cone the psi-dimension should match the
    exponent of the symmetrized form, and it is at most 1 for a tangent form.
    """
    matrix = premetric_matrix(sample, psi, workers=workers)
    if scales is None:
        scales = auto_scales(matrix.symmetrized())
    box = box_dimension(matrix, scales)
    delta = critical_exponent(ball, psi)
    delta_bar = critical_exponent(ball, symmetrize_form(psi))
    tolerance = max(box["ci"][1] - box["dim"], box["dim"] - box["ci"][0]) + delta_bar.uncertainty
    return {
        "form": psi.describe(),
        "dim": box["dim"],
        "ci": box["ci"],
        "delta_psi": delta.delta,
        "delta_psi_bar": delta_bar.delta,
        "matches_symmetrized": bool(abs(box["dim"] - delta_bar.delta) <= tolerance),
        "tolerance": tolerance,
        "table": box["table"],
    }


def subsample_stability(
    matrix: Union[PremetricMatrix, np.ndarray],
    scales: Sequence[float],
    fraction: float = 0.7,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, float]:
    """Dimension of a random subsample next to the full estimate."""
    distances = _as_distances(matrix)
    rng = rng if rng is not None else np.random.default_rng(0)
    keep = np.sort(rng.choice(len(distances), size=int(fraction * len(distances)), replace=False))
    full = box_dimension(distances, scales)
    part = box_dimension(distances[np.ix_(keep, keep)], scales)
    return {"full": full["dim"], "subsample": part["dim"], "fraction": fraction, "ci": full["ci"]}


def main():
    """Print the Riemannian box dimension of a scenario's limit set sample."""
    from limit_sampler import sample_limit_set
    from scenario import load_scenario, scale_grid
    from word_engine import GeneratorSet, build_ball

    parser = argparse.ArgumentParser(description="Box dimension of a limit set sample")
    parser.add_argument("--config", "-c", type=str, required=True, help="Scenario file")
    args = parser.parse_args()

    scenario = load_scenario(args.config)
    run = scenario.run
    ball = build_ball(GeneratorSet.from_scenario(scenario), run.ball_length, run.budget)
    sample = sample_limit_set(ball, scenario.theta, run.dedupe_eps, run.max_sample)
    result = riemannian_dimension(sample, scale_grid(run.scales) if run.scales else None)
    print(f"dim = {result['dim']:.4f} (ci {result['ci'][0]:.4f}..{result['ci'][1]:.4f})")


if __name__ == "__main__":
    main()
