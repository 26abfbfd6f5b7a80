"""
Word enumeration for AnosovLab.

Balls of freely reduced words over a symmetric generating set are built one
length shell at a time: every word of shell k is extended by every letter
that does not cancel its last letter, and the whole shell is multiplied in a
single batched matmul. Words come out in length-lex order with respect to
the alphabet a < A < b < B < ... .
"""

import argparse
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from config import BALL_BUDGET, RENORMALIZE_EVERY, VERBOSE_OUTPUT
from lie_core import (
    AVector,
    GroupDescriptor,
    GroupElement,
    LinearForm,
    builtin_forms,
    cartan_coords,
    renormalize,
)
from utils import get_logger
from utils.errors import BudgetExceeded, InvalidElement, LabError
from utils.export import write_binary

# Set up logger
logger = get_logger(__name__)

PAD = -1
CACHE_MAGIC = b"ANOSBALL"
ANOSOV_THRESHOLD = 0.05


class GeneratorSet:
    """
    Generators with formal inverses.

    Letter 2i is the i-th generator (lower-case label) and letter 2i+1 its
    inverse (upper-case label), so the inverse of letter x is x ^ 1.
    """

    def __init__(self, descriptor: GroupDescriptor, matrices: Dict[str, np.ndarray]):
        if not matrices:
            raise InvalidElement("A generating set needs at least one generator")
        self.descriptor = descriptor
        self.labels = sorted(matrices)
        letters, mats, invs = [], [], []
        for label in self.labels:
            g = GroupElement.from_matrix(descriptor, matrices[label])
            gi = g.inv()
            if not np.allclose(g.matrix @ gi.matrix, descriptor.identity_matrix(), atol=1e-10):
                raise InvalidElement(f"Inverse of generator {label} is inaccurate", {"label": label})
            letters += [label, label.upper()]
            mats += [g.matrix, gi.matrix]
            invs += [g.inverse, gi.inverse]
        self.letters: List[str] = letters
        self.matrices = np.stack(mats)
        self.inverses = np.stack(invs)

    @classmethod
    def from_scenario(cls, scenario) -> "GeneratorSet":
        return cls(scenario.descriptor, scenario.generators)

    @property
    def rank(self) -> int:
        """Number of generator pairs."""
        return len(self.labels)

    @property
    def size(self) -> int:
        return len(self.letters)

    @staticmethod
    def inverse_letter(x: Union[int, np.ndarray]) -> Union[int, np.ndarray]:
        return x ^ 1

    def fingerprint(self) -> str:
        """Stable digest of the group kind and generator matrices."""
        digest = hashlib.sha256(self.descriptor.key.encode())
        for label in self.labels:
            digest.update(label.encode())
        digest.update(np.ascontiguousarray(self.matrices, dtype="<f8").tobytes())
        return digest.hexdigest()

    def word_string(self, word: Sequence[int]) -> str:
        return "".join(self.letters[x] for x in word if x != PAD) or "e"

    def parse_word(self, text: str) -> Tuple[int, ...]:
        if text in ("", "e"):
            return ()
        try:
            word = tuple(self.letters.index(ch) for ch in text)
        except ValueError as e:
            raise LabError(f"Word {text!r} uses letters outside {self.letters}") from e
        return word

    def evaluate(self, word: Sequence[int]) -> GroupElement:
        """Product of the letters, accumulated left to right with periodic renormalization."""
        g = GroupElement.identity(self.descriptor)
        for step, x in enumerate(w for w in word if w != PAD):
            g = g @ GroupElement(self.descriptor, self.matrices[x], self.inverses[x])
            if (step + 1) % RENORMALIZE_EVERY == 0:
                g = g.renormalized()
        return g


def ball_size(rank: int, length: int) -> int:
    """Number of freely reduced words of length <= length in a free group of the given rank."""
    if length <= 0:
        return 1
    if rank == 1:
        return 1 + 2 * length
    return 1 + sum(2 * rank * (2 * rank - 1) ** (k - 1) for k in range(1, length + 1))


def reduce_word(word: Sequence[int]) -> Tuple[int, ...]:
    """Free reduction (the only relation is x x^-1 = e)."""
    stack: List[int] = []
    for x in word:
        if stack and stack[-1] == (x ^ 1):
            stack.pop()
        else:
            stack.append(x)
    return tuple(stack)


def is_cyclically_reduced(word: Sequence[int]) -> bool:
    return len(word) <= 1 or word[0] != (word[-1] ^ 1)


@dataclass(frozen=True)
class OrbitRecord:
    """One enumerated word with its matrix and Cartan projection."""

    word: str
    letters: Tuple[int, ...]
    length: int
    matrix: GroupElement
    cartan: AVector


@dataclass
class OrbitBall:
    """
    All reduced words of length <= length, stored column-wise.

    Records are in length-lex order, so each length shell is a contiguous
    block starting at shell_offsets[k].
    """

    generators: GeneratorSet
    length: int
    words: np.ndarray
    lengths: np.ndarray
    matrices: np.ndarray
    inverses: np.ndarray
    cartan: np.ndarray

    @property
    def descriptor(self) -> GroupDescriptor:
        return self.generators.descriptor

    def __len__(self) -> int:
        return len(self.lengths)

    @property
    def shell_offsets(self) -> np.ndarray:
        return np.searchsorted(self.lengths, np.arange(self.length + 2))

    def shell(self, k: int) -> slice:
        offsets = self.shell_offsets
        return slice(int(offsets[k]), int(offsets[k + 1]))

    def word(self, i: int) -> Tuple[int, ...]:
        return tuple(int(x) for x in self.words[i, : self.lengths[i]])

    def word_string(self, i: int) -> str:
        return self.generators.word_string(self.word(i))

    def element(self, i: int) -> GroupElement:
        return GroupElement(self.descriptor, self.matrices[i], self.inverses[i])

    def record(self, i: int) -> OrbitRecord:
        return OrbitRecord(
            word=self.word_string(i),
            letters=self.word(i),
            length=int(self.lengths[i]),
            matrix=self.element(i),
            cartan=AVector(self.descriptor, self.cartan[i]),
        )

    def __iter__(self) -> Iterator[OrbitRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def index_of(self, word: Sequence[int]) -> Optional[int]:
        """Position of a reduced word in the ball, or None."""
        word = tuple(word)
        k = len(word)
        if k > self.length:
            return None
        block = self.shell(k)
        if k == 0:
            return block.start
        candidates = self.words[block, :k]
        hits = np.flatnonzero(np.all(candidates == np.array(word), axis=1))
        return int(block.start + hits[0]) if len(hits) else None

    def form_values(self, psi: LinearForm) -> np.ndarray:
        """psi(mu(gamma)) for every record."""
        return psi(self.cartan)

    def cyclically_reduced_mask(self) -> np.ndarray:
        first = self.words[:, 0]
        last = self.words[np.arange(len(self)), np.maximum(self.lengths - 1, 0)]
        return (self.lengths >= 1) & ((self.lengths == 1) | (first != (last ^ 1)))


# ---------------------------------------------------------------------- enumeration


def _extend_shell(gens: GeneratorSet, words, mats, invs, k: int, first_letter: Optional[int]):
    """Shell k+1 from shell k."""
    count = len(words)
    letters = np.arange(gens.size)
    parents = np.repeat(np.arange(count), gens.size)
    appended = np.tile(letters, count)
    if k == 0:
        keep = np.ones(len(parents), dtype=bool)
        if first_letter is not None:
            keep = appended == first_letter
    else:
        keep = appended != (words[parents, k - 1] ^ 1)
    parents, appended = parents[keep], appended[keep]

    new_words = np.full((len(parents), words.shape[1]), PAD, dtype=np.int8)
    new_words[:, :k] = words[parents, :k]
    new_words[:, k] = appended
    new_mats = mats[parents] @ gens.matrices[appended]
    new_invs = gens.inverses[appended] @ invs[parents]
    if (k + 1) % RENORMALIZE_EVERY == 0:
        new_mats = renormalize(new_mats, gens.descriptor)
        new_invs = renormalize(new_invs, gens.descriptor)
    return new_words, new_mats, new_invs


def _enumerate_shells(gens: GeneratorSet, length: int, first_letter: Optional[int] = None):
    """Yield (words, matrices, inverses) per shell 0..length."""
    width = max(length, 1)
    words = np.full((1, width), PAD, dtype=np.int8)
    mats = gens.descriptor.identity_matrix()[None]
    invs = mats.copy()
    if first_letter is None or length == 0:
        yield words, mats, invs
    for k in range(length):
        words, mats, invs = _extend_shell(gens, words, mats, invs, k, first_letter)
        yield words, mats, invs


def _enumerate_partition(gens: GeneratorSet, length: int, first_letter: Optional[int]):
    shells = []
    for words, mats, invs in _enumerate_shells(gens, length, first_letter):
        cartan = cartan_coords(mats, invs, gens.descriptor)
        shells.append((words, mats, invs, cartan))
    return shells


def _check_budget(gens: GeneratorSet, length: int, budget: int) -> int:
    if length < 0:
        raise LabError(f"Ball length must be >= 0, got {length}")
    count = ball_size(gens.rank, length)
    if count > budget:
        raise BudgetExceeded(count, budget)
    return count


def build_ball(
    gens: GeneratorSet,
    length: int,
    budget: int = BALL_BUDGET,
    workers: int = 1,
) -> OrbitBall:
    """
    Enumerate the ball of radius length.

    Args:
        gens: Generating set
        length: Maximal word length L
        budget: Maximal number of records
        workers: Number of joblib workers; the enumeration is split by first letter

    Returns:
        The ball, in length-lex order regardless of the worker count
    """
    count = _check_budget(gens, length, budget)
    logger.info(f"Enumerating {count} reduced words up to length {length} ({gens.descriptor.key})")

    if workers > 1 and length > 0:
        parts = Parallel(n_jobs=workers)(
            delayed(_enumerate_partition)(gens, length, x) for x in range(gens.size)
        )
        identity = _enumerate_partition(gens, 0, None)[0]
        shells = [identity]
        for k in range(1, length + 1):
            shells.append(tuple(np.concatenate([part[k - 1][c] for part in parts]) for c in range(4)))
    else:
        shells = []
        iterator = _enumerate_shells(gens, length)
        for words, mats, invs in tqdm(iterator, total=length + 1, desc="Shells", disable=not VERBOSE_OUTPUT):
            shells.append((words, mats, invs, cartan_coords(mats, invs, gens.descriptor)))

    words = np.concatenate([s[0] for s in shells])
    lengths = np.concatenate([np.full(len(s[0]), k, dtype=np.int32) for k, s in enumerate(shells)])
    ball = OrbitBall(
        generators=gens,
        length=length,
        words=words,
        lengths=lengths,
        matrices=np.concatenate([s[1] for s in shells]),
        inverses=np.concatenate([s[2] for s in shells]),
        cartan=np.concatenate([s[3] for s in shells]),
    )
    for k in range(length + 1):
        logger.debug(f"Shell {k}: {ball.shell(k).stop - ball.shell(k).start} words")
    return ball


def enumerate_ball(gens: GeneratorSet, length: int, budget: int = BALL_BUDGET) -> Iterator[OrbitRecord]:
    """
    Stream the records of the ball shell by shell, in length-lex order.

    Raises:
        BudgetExceeded: before producing anything, if the ball is too large
    """
    _check_budget(gens, length, budget)
    for words, mats, invs in _enumerate_shells(gens, length):
        cartan = cartan_coords(mats, invs, gens.descriptor)
        for i in range(len(words)):
            word = tuple(int(x) for x in words[i] if x != PAD)
            yield OrbitRecord(
                word=gens.word_string(word),
                letters=word,
                length=len(word),
                matrix=GroupElement(gens.descriptor, mats[i], invs[i]),
                cartan=AVector(gens.descriptor, cartan[i]),
            )


# ---------------------------------------------------------------------- diagnostics


def anosov_diagnostic(ball: OrbitBall, theta: Sequence[int]) -> Dict[str, object]:
    """
    Empirical Anosov test: linear growth of alpha(mu(gamma)) in |gamma|.

    C_fit is the least C >= 1 with alpha(mu) >= |gamma| / C - C for every
    record and every alpha in theta. The verdict also asks the outer shell's
    ratio alpha(mu) / |gamma| to stay above a fixed threshold.
    """
    d = ball.descriptor
    theta = d.validate_theta(theta)
    forms = builtin_forms(d)
    values = np.stack([forms[f"alpha{p}"](ball.cartan) for p in theta], axis=1)
    lengths = ball.lengths[:, None].astype(float)

    # Least C with l / C - C <= a is the positive root of C^2 + a C - l = 0
    roots = 0.5 * (-values + np.sqrt(values**2 + 4.0 * lengths))
    c_fit = float(max(1.0, roots.max()))

    per_shell = []
    for k in range(1, ball.length + 1):
        block = ball.shell(k)
        per_shell.append(float((values[block] / k).min()))
    min_margin = per_shell[-1] if per_shell else 0.0
    passed = bool(np.isfinite(c_fit) and min_margin >= ANOSOV_THRESHOLD)
    if not passed:
        logger.warning(f"Anosov diagnostic failed for theta={list(theta)}: outer-shell margin {min_margin:.4f}")
    return {
        "C_fit": c_fit,
        "min_margin": min_margin,
        "pass": passed,
        "theta": list(theta),
        "threshold": ANOSOV_THRESHOLD,
        "per_shell_min_ratio": per_shell,
        "generators": ball.generators.labels,
    }


@dataclass
class LimitCone:
    """Normalized Cartan directions of the outer shells and a description of their hull."""

    descriptor: GroupDescriptor
    directions: np.ndarray
    chart: np.ndarray
    extreme_directions: np.ndarray
    angular_spread: float
    support: Dict[str, float]

    def min_form(self, psi: LinearForm) -> float:
        """Smallest value of psi on the sampled unit directions."""
        return float(psi(self.directions).min())

    def mean_direction(self) -> np.ndarray:
        mean = self.directions.mean(axis=0)
        return mean / self.descriptor.norm(mean)

    def contains(self, u: np.ndarray, tol: float = 0.05) -> bool:
        """Whether a unit direction lies within tol of a sampled direction."""
        u = np.asarray(u, dtype=float) / self.descriptor.norm(u)
        return bool(self.descriptor.norm(self.directions - u).min() <= tol)

    def describe(self) -> Dict[str, object]:
        return {
            "count": len(self.directions),
            "angular_spread": self.angular_spread,
            "extreme_directions": self.extreme_directions,
            "support": self.support,
            "mean_direction": self.mean_direction(),
        }


def limit_cone_estimate(ball: OrbitBall, shell_min: Optional[int] = None) -> LimitCone:
    """
    Unit Cartan directions mu(gamma) / |mu(gamma)| for |gamma| >= shell_min.

    For rank two the hull is described by its two extreme directions; in
    every rank a support table gives the minimum of each simple root and
    fundamental weight over the directions.
    """
    d = ball.descriptor
    if shell_min is None:
        shell_min = max(ball.length - 2, 1)
    if shell_min >= ball.length and ball.length > 0:
        shell_min = ball.length
    mask = ball.lengths >= shell_min
    vectors = ball.cartan[mask]
    norms = d.norm(vectors)
    vectors = vectors[norms > 1e-12]
    directions = vectors / d.norm(vectors)[:, None]
    chart = directions @ d.chart

    if d.rank == 1:
        extreme = directions[:1]
        spread = 0.0
    elif d.rank == 2:
        angles = np.arctan2(chart[:, 1], chart[:, 0])
        center = np.angle(np.exp(1j * angles).mean())
        offsets = np.angle(np.exp(1j * (angles - center)))
        lo, hi = int(np.argmin(offsets)), int(np.argmax(offsets))
        extreme = directions[[lo, hi]]
        spread = float(offsets[hi] - offsets[lo])
    else:
        mean = chart.mean(axis=0)
        mean /= np.linalg.norm(mean)
        cosines = np.clip(chart @ mean, -1.0, 1.0)
        far = int(np.argmin(cosines))
        extreme = directions[[far]]
        spread = float(2.0 * np.arccos(cosines.min()))

    forms = builtin_forms(d)
    support = {}
    for p in d.simple_roots:
        support[f"min_alpha{p}"] = float(forms[f"alpha{p}"](directions).min())
        support[f"min_omega{p}"] = float(forms[f"omega{p}"](directions).min())
    logger.info(f"Limit cone from {len(directions)} directions, angular spread {spread:.4f} rad")
    return LimitCone(d, directions, chart, extreme, spread, support)


# ---------------------------------------------------------------------- cache


def _cache_dtypes(ball_descriptor: GroupDescriptor, length: int):
    header = np.dtype([("magic", "S8"), ("fingerprint", "S64"), ("length", "<i4"), ("count", "<i8")])
    shape = ball_descriptor.matrix_shape
    record = np.dtype([
        ("word", "i1", (max(length, 1),)),
        ("matrix", "<f8", shape),
        ("inverse", "<f8", shape),
        ("cartan", "<f8", (ball_descriptor.dim,)),
    ])
    return header, record


def save_ball_cache(ball: OrbitBall, path: Union[str, Path]) -> Path:
    """Write the ball as a little-endian columnar binary file."""
    header_t, record_t = _cache_dtypes(ball.descriptor, ball.length)
    header = np.zeros(1, dtype=header_t)
    header["magic"] = CACHE_MAGIC
    header["fingerprint"] = ball.generators.fingerprint().encode()
    header["length"] = ball.length
    header["count"] = len(ball)
    records = np.zeros(len(ball), dtype=record_t)
    records["word"] = ball.words
    records["matrix"] = ball.matrices
    records["inverse"] = ball.inverses
    records["cartan"] = ball.cartan
    return write_binary(path, header, records)


def load_ball_cache(gens: GeneratorSet, path: Union[str, Path]) -> OrbitBall:
    """
    Read a ball written by save_ball_cache for the same generators.

    Raises:
        LabError: if the file belongs to other generators or is truncated
    """
    raw = Path(path).read_bytes()
    header_t, _ = _cache_dtypes(gens.descriptor, 1)
    header = np.frombuffer(raw[: header_t.itemsize], dtype=header_t)[0]
    if header["magic"] != CACHE_MAGIC:
        raise LabError(f"{path} is not a ball cache")
    if header["fingerprint"].decode() != gens.fingerprint():
        raise LabError(f"{path} was written for different generators")
    length = int(header["length"])
    _, record_t = _cache_dtypes(gens.descriptor, length)
    body = raw[header_t.itemsize:]
    if len(body) != int(header["count"]) * record_t.itemsize:
        raise LabError(f"{path} is truncated")
    records = np.frombuffer(body, dtype=record_t)
    words = np.array(records["word"], dtype=np.int8)
    lengths = (words != PAD).sum(axis=1).astype(np.int32)
    logger.info(f"Loaded {len(records)} cached words up to length {length} from {path}")
    return OrbitBall(
        generators=gens,
        length=length,
        words=words,
        lengths=lengths,
        matrices=np.array(records["matrix"]),
        inverses=np.array(records["inverse"]),
        cartan=np.array(records["cartan"]),
    )


def main():
    """Enumerate a ball for a scenario and print the Anosov diagnostic."""
    from scenario import load_scenario

    parser = argparse.ArgumentParser(description="Enumerate reduced words and diagnose the Anosov condition")
    parser.add_argument("--config", "-c", type=str, required=True, help="Scenario file")
    parser.add_argument("--ball-length", "-L", type=int, default=None, help="Maximal word length")
    args = parser.parse_args()

    scenario = load_scenario(args.config)
    length = args.ball_length if args.ball_length is not None else scenario.run.ball_length
    ball = build_ball(GeneratorSet.from_scenario(scenario), length, scenario.run.budget)
    report = anosov_diagnostic(ball, scenario.theta)
    print(f"{len(ball)} words, C_fit = {report['C_fit']:.4f}, margin = {report['min_margin']:.4f}, "
          f"pass = {report['pass']}")


if __name__ == "__main__":
    main()
