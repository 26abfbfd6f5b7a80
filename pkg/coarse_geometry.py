"""
Coarse geometry of the orbit premetric d_psi(g o, h o) = psi(mu(g^-1 h)).

Triangle defects are sampled over triples stratified by word length; the
Gromov product of two limit flags is compared with the distance from o to
the tree geodesic between the word rays that define them; and the orbit
map is checked to be a quasi-isometry by a linear fit against word length.
"""

import argparse
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from lie_core import LinearForm, cartan_coords
from limit_sampler import FlagSample
from premetric import gromov_products_batch
from utils import get_logger
from utils.errors import InsufficientSample
from word_engine import GeneratorSet, OrbitBall

# Set up logger
logger = get_logger(__name__)

HISTOGRAM_BINS = 40
Word = Union[str, Sequence[int]]


def _letters(gens: GeneratorSet, word: Word) -> Tuple[int, ...]:
    return gens.parse_word(word) if isinstance(word, str) else tuple(word)


def orbit_premetric(gens: GeneratorSet, gamma_1: Word, gamma_2: Word, psi: LinearForm) -> float:
    """psi(mu(gamma_1^-1 gamma_2)) for two words."""
    g1 = gens.evaluate(_letters(gens, gamma_1))
    g2 = gens.evaluate(_letters(gens, gamma_2))
    h = g1.inv() @ g2
    return float(psi(cartan_coords(h.matrix, h.inverse, gens.descriptor)))


def _pair_values(ball: OrbitBall, i: np.ndarray, j: np.ndarray, psi: LinearForm) -> np.ndarray:
    """psi(mu(g_i^-1 g_j)) for index arrays."""
    matrices = ball.inverses[i] @ ball.matrices[j]
    inverses = ball.inverses[j] @ ball.matrices[i]
    return psi(cartan_coords(matrices, inverses, ball.descriptor))


def word_distance(ball: OrbitBall, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Free-group word distance |g_i^-1 g_j| = |w_i| + |w_j| - 2 (common prefix length)."""
    same = (ball.words[i] == ball.words[j]) & (ball.words[i] >= 0)
    common = np.cumprod(same, axis=-1).sum(axis=-1)
    return ball.lengths[i] + ball.lengths[j] - 2 * common


def _stratified_indices(ball: OrbitBall, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform length shell first, then a uniform record inside it."""
    offsets = ball.shell_offsets
    shells = rng.integers(0, ball.length + 1, size=count)
    starts, stops = offsets[shells], offsets[shells + 1]
    return starts + (rng.random(count) * (stops - starts)).astype(np.int64)


def triangle_defect(
    ball: OrbitBall,
    psi: LinearForm,
    n_triples: int = 10_000,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, object]:
    """
    Largest d(1,3) - d(1,2) - d(2,3) over sampled triples of orbit points.

    Args:
        ball: Enumerated ball
        psi: Linear form, positive on the limit cone
        n_triples: Number of sampled triples
        rng: Random generator (defaults to seed 0)

    Returns:
        D_est with its witness triple, the defect histogram, the collinear
        defects along reduced words, and the smallest pair value seen
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    i, j, k = (_stratified_indices(ball, n_triples, rng) for _ in range(3))
    d13 = _pair_values(ball, i, k, psi)
    d12 = _pair_values(ball, i, j, psi)
    d23 = _pair_values(ball, j, k, psi)
    defects = d13 - d12 - d23
    worst = int(np.argmax(defects))
    counts, edges = np.histogram(defects, bins=HISTOGRAM_BINS)

    long_pairs = np.concatenate([
        values[word_distance(ball, a, b) > 2]
        for values, a, b in ((d13, i, k), (d12, i, j), (d23, j, k))
    ])
    collinear = _collinear_defects(ball, psi, min(n_triples, 2000), rng)
    result = {
        "D_est": float(defects[worst]),
        "witness": [ball.word_string(x) for x in (i[worst], j[worst], k[worst])],
        "triples": n_triples,
        "histogram": [
            {"lo": float(lo), "hi": float(hi), "count": int(c)} for lo, hi, c in zip(edges[:-1], edges[1:], counts)
        ],
        "collinear_max_abs": collinear,
        "min_value_far_pairs": float(long_pairs.min()) if len(long_pairs) else float("nan"),
        "form": psi.describe(),
    }
    logger.info(f"Triangle defect D_est = {result['D_est']:.4f} over {n_triples} triples")
    return result


def _collinear_defects(ball: OrbitBall, psi: LinearForm, count: int, rng: np.random.Generator) -> float:
    """Largest |d(e, w) - d(e, u) - d(u, w)| over words w = u v split at a random point."""
    candidates = np.flatnonzero(ball.lengths >= 2)
    if not len(candidates):
        return 0.0
    chosen = rng.choice(candidates, size=min(count, len(candidates)), replace=False)
    worst = 0.0
    for idx in chosen:
        word = ball.word(idx)
        cut = int(rng.integers(1, len(word)))
        prefix = ball.index_of(word[:cut])
        d_total = float(psi(ball.cartan[idx]))
        d_first = float(psi(ball.cartan[prefix]))
        d_rest = float(_pair_values(ball, np.array([prefix]), np.array([idx]), psi)[0])
        worst = max(worst, abs(d_total - d_first - d_rest))
    return worst


def gromov_vs_geodesic(
    sample: FlagSample,
    gens: GeneratorSet,
    psi: LinearForm,
    pairs: int = 50,
    repeats: Sequence[int] = (4, 8),
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, object]:
    """
    |psi(G(xi, eta)) - min over the geodesic [xi, eta] of d_psi(o, gamma o)|.

    The flags come from cyclically reduced words u, v; the tree geodesic
    between the ends u^inf and v^inf is the union of the two rays beyond
    their common prefix, truncated at the given number of repetitions.
    The check passes when the largest difference grows by less than a
    factor 2 from the first to the last repetition count.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    d = sample.descriptor
    count = len(sample)
    if count < 2:
        raise InsufficientSample("gromov_vs_geodesic needs at least two flags", {"flags": count})
    picks = rng.integers(0, count, size=(pairs, 2))
    picks = picks[picks[:, 0] != picks[:, 1]]

    rows = []
    for a, b in picks:
        u = gens.parse_word(sample.words[a])
        v = gens.parse_word(sample.words[b])
        gromov = gromov_products_batch(sample.frames[a], sample.frames[b], d)
        psi_g = float(psi(gromov))
        if not np.isfinite(psi_g):
            continue
        row = {"xi": sample.words[a], "eta": sample.words[b], "psi_G": psi_g}
        for m in repeats:
            ray_u, ray_v = u * m, v * m
            common = 0
            while common < min(len(ray_u), len(ray_v)) and ray_u[common] == ray_v[common]:
                common += 1
            vertices = [ray_u[:t] for t in range(common, len(ray_u) + 1)]
            vertices += [ray_v[:t] for t in range(common + 1, len(ray_v) + 1)]
            values = []
            for vertex in vertices:
                g = gens.evaluate(vertex)
                values.append(float(psi(cartan_coords(g.matrix, g.inverse, d))))
            row[f"min_orbit_{m}"] = min(values)
            row[f"difference_{m}"] = abs(psi_g - min(values))
        rows.append(row)

    maxima = {m: max((r[f"difference_{m}"] for r in rows), default=float("nan")) for m in repeats}
    first, last = maxima[repeats[0]], maxima[repeats[-1]]
    growth = last / first if first > 0 else (1.0 if last == 0 else float("inf"))
    passed = bool(np.isfinite(growth) and growth < 2.0)
    logger.info(f"Gromov product vs geodesic: max differences {maxima}, pass = {passed}")
    return {"max_difference": maxima, "growth": growth, "pass": passed, "pairs": rows}


def quasi_isometry_fit(ball: OrbitBall, psi: LinearForm) -> Dict[str, float]:
    """Linear fit of d_psi(o, gamma o) against |gamma|; the orbit map is a quasi-isometry when the slope is positive."""
    values = ball.form_values(psi)
    fit = stats.linregress(ball.lengths.astype(float), values)
    residuals = values - (fit.intercept + fit.slope * ball.lengths)
    result = {
        "slope": float(fit.slope),
        "intercept": float(fit.intercept),
        "max_abs_residual": float(np.abs(residuals).max()),
        "r2": float(fit.rvalue**2),
        "pass": bool(fit.slope > 0),
    }
    logger.info(f"Quasi-isometry fit: slope {result['slope']:.4f}, max residual {result['max_abs_residual']:.4f}")
    return result


def main():
    """Print the triangle defect of a scenario form."""
    from scenario import load_scenario
    from word_engine import build_ball

    parser = argparse.ArgumentParser(description="Coarse triangle defect of the orbit premetric")
    parser.add_argument("--config", "-c", type=str, required=True, help="Scenario file")
    parser.add_argument("--triples", "-n", type=int, default=None, help="Number of sampled triples")
    args = parser.parse_args()

    scenario = load_scenario(args.config)
    run = scenario.run
    ball = build_ball(GeneratorSet.from_scenario(scenario), run.ball_length, run.budget)
    result = triangle_defect(ball, scenario.form(), args.triples or run.triples, np.random.default_rng(run.seed))
    print(f"D_est = {result['D_est']:.4f} (witness {' '.join(result['witness'])})")


if __name__ == "__main__":
    main()
