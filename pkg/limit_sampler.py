"""
Limit set sampling for AnosovLab.

Points of the limit set are approximated by attracting flags of
cyclically reduced words: each word is squared (with renormalization) until
its singular-value gaps at theta are large, and the flag of the K-factor of
that power is taken as the attracting flag. Samples are deduplicated under
the chordal flag metric with a KD-tree on projection-matrix embeddings.
"""

import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from config import DEDUPE_EPS, MAX_SAMPLE, MAX_SQUARINGS
from lie_core import (
    PRODUCT,
    Flag,
    GroupDescriptor,
    GroupElement,
    antipodal_margin,
    cartan_coords,
    cartan_frames,
    frame_distances,
    renormalize,
)
from utils import get_logger
from utils.errors import NotProximal
from utils.export import flag_frame_columns, write_binary, write_csv
from word_engine import OrbitBall

# Set up logger
logger = get_logger(__name__)

MIN_GAP = np.log(1.5)
TARGET_GAP = np.log(1e6)
MAX_GAP = np.log(1e30)
STABILITY = 1e-10
ANTIPODAL_OK = 1e-10


def _theta_gaps(mu: np.ndarray, descriptor: GroupDescriptor, theta: Sequence[int]) -> np.ndarray:
    """Smallest log singular-value gap over theta, batched."""
    roots = descriptor.root_forms[[p - 1 for p in theta]]
    return (mu @ roots.T).min(axis=-1)


def attracting_frames(
    matrices: np.ndarray,
    inverses: np.ndarray,
    descriptor: GroupDescriptor,
    theta: Sequence[int],
    max_squarings: int = MAX_SQUARINGS,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Attracting frames for a batch of elements.

    Each element is squared until its theta-gaps exceed 1e6 and two
    successive K-factor flags agree, or the gap is so large that further
    squaring only adds rounding.

    Returns:
        (frames, proximal) where proximal marks elements whose gap cleared 1.5
    """
    count = len(matrices)
    power = renormalize(np.array(matrices, dtype=float), descriptor)
    power_inv = renormalize(np.array(inverses, dtype=float), descriptor)
    frames = np.array(cartan_frames(power, power_inv, descriptor))
    have_prev = np.zeros(count, dtype=bool)
    done = np.zeros(count, dtype=bool)
    gaps = np.zeros(count)

    for step in range(max_squarings + 1):
        active = np.flatnonzero(~done)
        if len(active) == 0:
            break
        mu = cartan_coords(power[active], power_inv[active], descriptor)
        gaps[active] = _theta_gaps(mu, descriptor, theta)
        ready = gaps[active] > TARGET_GAP
        if np.any(ready):
            idx = active[ready]
            new = cartan_frames(power[idx], power_inv[idx], descriptor)
            moved = frame_distances(frames[idx], new, descriptor, theta)
            converged = (have_prev[idx] & (moved < STABILITY)) | (gaps[idx] > MAX_GAP)
            frames[idx] = new
            have_prev[idx] = True
            done[idx[converged]] = True
        if step == max_squarings:
            break
        active = np.flatnonzero(~done)
        power[active] = renormalize(power[active] @ power[active], descriptor)
        power_inv[active] = renormalize(power_inv[active] @ power_inv[active], descriptor)

    # Elements that never reached the target still get their last K-flag if the gap is usable
    late = ~have_prev & (gaps > MIN_GAP)
    if np.any(late):
        idx = np.flatnonzero(late)
        frames[idx] = cartan_frames(power[idx], power_inv[idx], descriptor)
    proximal = gaps > MIN_GAP
    return frames, proximal


def attracting_flag(g: GroupElement, theta: Sequence[int], max_squarings: int = MAX_SQUARINGS) -> Flag:
    """
    The attracting flag of a theta-proximal element.

    Args:
        g: Group element
        theta: Simple roots defining the flag type
        max_squarings: Maximal number of squarings

    Returns:
        The flag of the K-factor of g^m for the adaptive power m

    Raises:
        NotProximal: if the theta-gaps of g^m never exceed 1.5
    """
    d = g.descriptor
    theta = d.validate_theta(theta)
    frames, proximal = attracting_frames(g.matrix[None], g.inverse[None], d, theta, max_squarings)
    if not proximal[0]:
        raise NotProximal(
            f"Element is not proximal at theta={list(theta)} after {max_squarings} squarings",
            {"theta": list(theta)},
        )
    return Flag(d, frames[0], theta)


def antipodal(xi: Flag, eta: Flag) -> Dict[str, object]:
    """
    Transversality test for two flags.

    The test runs over theta union iota(theta), so two points of the same
    limit set can be compared directly.
    """
    d = xi.descriptor
    sym = d.symmetric_theta(xi.theta)
    margin = antipodal_margin(xi.with_theta(sym), eta.with_theta(d.iota_theta(sym)))
    return {"ok": bool(margin > ANTIPODAL_OK), "margin": margin}


def pairwise_antipodal_margins(frames: np.ndarray, descriptor: GroupDescriptor, theta: Sequence[int]) -> np.ndarray:
    """Matrix of antipodality margins between all pairs of frames (diagonal set to 0)."""
    sym = descriptor.symmetric_theta(theta)
    count = len(frames)
    margins = np.full((count, count), np.inf)
    for p in sym:
        if descriptor.kind == PRODUCT:
            a = frames[:, p - 1, :, 0]
            dets = np.abs(a[:, None, 0] * a[None, :, 1] - a[:, None, 1] * a[None, :, 0])
        else:
            n = descriptor.size
            dets = np.empty((count, count))
            for start in range(0, count, 256):
                rows = frames[start : start + 256]
                left = np.broadcast_to(rows[:, None, :, :p], (len(rows), count, n, p))
                right = np.broadcast_to(frames[None, :, :, : n - p], (len(rows), count, n, n - p))
                dets[start : start + 256] = np.abs(np.linalg.det(np.concatenate([left, right], axis=-1)))
        margins = np.minimum(margins, dets)
    np.fill_diagonal(margins, 0.0)
    return margins


def _embedding(frames: np.ndarray, descriptor: GroupDescriptor, theta: Sequence[int]) -> np.ndarray:
    """Flattened projection matrices of the theta-subspaces."""
    blocks = []
    for p in theta:
        if descriptor.kind == PRODUCT:
            v = frames[:, p - 1, :, :1]
        else:
            v = frames[:, :, :p]
        blocks.append((v @ np.swapaxes(v, -1, -2)).reshape(len(frames), -1))
    return np.concatenate(blocks, axis=1)


def dedupe_frames(
    frames: np.ndarray,
    descriptor: GroupDescriptor,
    theta: Sequence[int],
    eps: float,
) -> np.ndarray:
    """
    Indices of a greedy eps-separated subset, scanning in input order.

    A KD-tree on projection-matrix embeddings proposes neighbours; the exact
    chordal distance decides.
    """
    if len(frames) == 0:
        return np.zeros(0, dtype=int)
    points = _embedding(frames, descriptor, theta)
    # |P - P'|_F <= sqrt(2 p) sin(max angle) for each block
    radius = eps * np.sqrt(2.0 * descriptor.n * len(theta))
    tree = cKDTree(points)
    removed = np.zeros(len(frames), dtype=bool)
    kept = []
    for i in range(len(frames)):
        if removed[i]:
            continue
        kept.append(i)
        near = np.array(tree.query_ball_point(points[i], radius), dtype=int)
        near = near[(near > i) & ~removed[near]] if len(near) else near
        if len(near):
            dist = frame_distances(frames[i][None], frames[near], descriptor, theta)
            removed[near[dist < eps]] = True
    return np.array(kept, dtype=int)


@dataclass
class FlagSample:
    """Deduplicated attracting flags with the words they came from."""

    descriptor: GroupDescriptor
    theta: Tuple[int, ...]
    frames: np.ndarray
    words: List[str]
    ball_indices: np.ndarray
    dedupe_eps: float
    skipped: int = 0
    candidates: int = 0
    stats: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    def flag(self, i: int) -> Flag:
        return Flag(self.descriptor, self.frames[i], self.theta)

    @property
    def flags(self) -> List[Flag]:
        return [self.flag(i) for i in range(len(self))]

    def subset(self, indices: Sequence[int]) -> "FlagSample":
        indices = np.asarray(indices, dtype=int)
        return FlagSample(
            self.descriptor,
            self.theta,
            self.frames[indices],
            [self.words[i] for i in indices],
            self.ball_indices[indices],
            self.dedupe_eps,
            self.skipped,
            self.candidates,
        )

    def min_pairwise_distance(self) -> float:
        if len(self) < 2:
            return float("inf")
        dist = frame_distances(self.frames[:, None], self.frames[None, :], self.descriptor, self.theta)
        np.fill_diagonal(dist, np.inf)
        return float(dist.min())

    def describe(self) -> Dict[str, object]:
        return {
            "size": len(self),
            "candidates": self.candidates,
            "skipped_not_proximal": self.skipped,
            "dedupe_eps": self.dedupe_eps,
            "theta": list(self.theta),
            **self.stats,
        }

    def to_rows(self) -> List[Dict[str, object]]:
        flat = self.frames.reshape(len(self), -1)
        columns = flag_frame_columns(flat.shape[1])
        return [{"word": w, **dict(zip(columns, row))} for w, row in zip(self.words, flat)]

    def export_csv(self, path: Union[str, Path]) -> Path:
        columns = ["word"] + flag_frame_columns(int(np.prod(self.frames.shape[1:])))
        return write_csv(path, self.to_rows(), columns)

    def export_binary(self, path: Union[str, Path], word_width: int) -> Path:
        header = np.zeros(1, dtype=[("magic", "S8"), ("count", "<i8"), ("theta", "<i4", (len(self.theta),))])
        header["magic"] = b"ANOSFLAG"
        header["count"] = len(self)
        header["theta"] = self.theta
        record_t = np.dtype([("word", "S%d" % max(word_width, 1)), ("frame", "<f8", self.frames.shape[1:])])
        records = np.zeros(len(self), dtype=record_t)
        records["word"] = [w.encode() for w in self.words]
        records["frame"] = self.frames
        return write_binary(path, header, records)


def sample_limit_set(
    ball: OrbitBall,
    theta: Sequence[int],
    dedupe_eps: float = DEDUPE_EPS,
    max_sample: int = MAX_SAMPLE,
    rng: Optional[np.random.Generator] = None,
    shell_min: int = 1,
) -> FlagSample:
    """
    Attracting flags of the cyclically reduced words of the ball.

    Args:
        ball: Enumerated ball
        theta: Flag type
        dedupe_eps: Minimal chordal distance between kept flags
        max_sample: Cap on the sample size; a seeded uniform subset is kept beyond it
        rng: Random generator for the cap (defaults to seed 0)
        shell_min: Only words of at least this length are used

    Returns:
        The deduplicated sample; non-proximal words are skipped and counted
    """
    d = ball.descriptor
    theta = d.validate_theta(theta)
    mask = ball.cyclically_reduced_mask() & (ball.lengths >= shell_min)
    indices = np.flatnonzero(mask)
    logger.info(f"Extracting attracting flags of {len(indices)} cyclically reduced words")

    frames, proximal = attracting_frames(ball.matrices[indices], ball.inverses[indices], d, theta)
    skipped = int((~proximal).sum())
    if skipped:
        logger.warning(f"Skipped {skipped} words that are not proximal at theta={list(theta)}")
    indices, frames = indices[proximal], frames[proximal]

    keep = dedupe_frames(frames, d, theta, dedupe_eps)
    indices, frames = indices[keep], frames[keep]
    if len(indices) > max_sample:
        rng = rng if rng is not None else np.random.default_rng(0)
        chosen = np.sort(rng.choice(len(indices), size=max_sample, replace=False))
        indices, frames = indices[chosen], frames[chosen]
        logger.info(f"Capped sample at {max_sample} flags")

    sample = FlagSample(
        descriptor=d,
        theta=theta,
        frames=frames,
        words=[ball.word_string(i) for i in indices],
        ball_indices=indices,
        dedupe_eps=dedupe_eps,
        skipped=skipped,
        candidates=int(mask.sum()),
    )
    logger.info(f"Limit set sample: {len(sample)} flags (from {sample.candidates} candidates)")
    return sample


def main():
    """Sample a scenario's limit set and write it as CSV."""
    from scenario import load_scenario
    from word_engine import GeneratorSet, build_ball

    parser = argparse.ArgumentParser(description="Sample the limit set of a scenario")
    parser.add_argument("--config", "-c", type=str, required=True, help="Scenario file")
    parser.add_argument("--out", "-o", type=str, default="limit_sample.csv", help="Output CSV")
    args = parser.parse_args()

    scenario = load_scenario(args.config)
    ball = build_ball(GeneratorSet.from_scenario(scenario), scenario.run.ball_length, scenario.run.budget)
    sample = sample_limit_set(ball, scenario.theta, scenario.run.dedupe_eps, scenario.run.max_sample)
    sample.export_csv(args.out)
    print(f"Wrote {len(sample)} flags to {args.out}")


if __name__ == "__main__":
    main()
