"""
Lie-theoretic core for AnosovLab.

This module holds the root data of SL(n, R) and of finite products of
SL(2, R), together with the primitive operations every other module builds
on: Cartan and Iwasawa decompositions, the Busemann cocycle, the opposition
involution, linear forms on the Cartan subspace, flags and antipodality.

Conventions: K is the orthogonal group, A the positive diagonal matrices,
N the upper unipotent matrices, so the minimal parabolic P stabilizes the
standard flag e1 < <e1, e2> < ... . Simple roots and fundamental weights are
indexed 1..rank.
"""

import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from utils import get_logger
from utils.errors import BasisMismatch, InvalidElement, InvalidTheta, NotAntipodal

# Set up logger
logger = get_logger(__name__)

SL = "SL"
PRODUCT = "SL2^k"

DET_TOLERANCE = 1e-9
FLAG_TOLERANCE = 1e-8
ANTIPODAL_MARGIN = 1e-10
BASES = ("root", "weight", "dual")


class GroupDescriptor:
    """
    The ambient group together with its root and weight tables.

    For SL(n, R) the Cartan subspace is stored in trace-zero diagonal
    coordinates (n entries). For a product of k copies of SL(2, R) it is
    stored as (t_1, ..., t_k), factor i having Cartan part (t_i, -t_i).
    """

    def __init__(self, kind: str, size: int):
        if kind not in (SL, PRODUCT):
            raise ValueError(f"Unknown group kind {kind!r}")
        if kind == SL and size < 2:
            raise ValueError("SL(n, R) needs n >= 2")
        if kind == PRODUCT and size < 1:
            raise ValueError("A product needs at least one SL(2, R) factor")
        self.kind = kind
        self.size = size

        if kind == SL:
            n = size
            self.rank = n - 1
            self.dim = n
            self.matrix_shape: Tuple[int, ...] = (n, n)
            self.w0_permutation = tuple(range(n - 1, -1, -1))
            eye = np.eye(n)
            self.root_forms = np.array([eye[p] - eye[p + 1] for p in range(n - 1)])
            steps = np.array([[1.0 if i <= p else 0.0 for i in range(n)] for p in range(n - 1)])
            self.weight_forms = steps - steps.mean(axis=1, keepdims=True)
            # Dual bases: alpha_p(coweight_q) = omega_p(coroot_q) = delta_pq
            self.coweights = self.weight_forms.T.copy()
            self.coroots = self.root_forms.T.copy()
        else:
            k = size
            self.rank = k
            self.dim = k
            self.matrix_shape = (k, 2, 2)
            self.w0_permutation = tuple(range(k))
            self.root_forms = 2.0 * np.eye(k)
            self.weight_forms = np.eye(k)
            self.coweights = 0.5 * np.eye(k)
            self.coroots = np.eye(k)

        self.simple_roots = tuple(range(1, self.rank + 1))
        # Orthonormal basis of the Cartan subspace in the chosen coordinates
        q, _ = np.linalg.qr(self.coroots)
        self.chart = q[:, : self.rank]

    # ------------------------------------------------------------------ identity
    @classmethod
    def sl(cls, n: int) -> "GroupDescriptor":
        return cls(SL, n)

    @classmethod
    def product(cls, k: int) -> "GroupDescriptor":
        return cls(PRODUCT, k)

    @property
    def key(self) -> str:
        return f"SL{self.size}" if self.kind == SL else f"SL2x{self.size}"

    @property
    def n(self) -> int:
        """Size of the matrices of one factor."""
        return self.size if self.kind == SL else 2

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GroupDescriptor) and other.key == self.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return f"GroupDescriptor({self.key})"

    # ------------------------------------------------------------------ roots
    def validate_theta(self, theta: Iterable[int]) -> Tuple[int, ...]:
        """Return theta as a sorted tuple, rejecting empty or out-of-range sets."""
        theta = tuple(sorted(set(int(a) for a in theta)))
        if not theta:
            raise InvalidTheta("theta must be a non-empty set of simple roots", {"theta": []})
        bad = [a for a in theta if a not in self.simple_roots]
        if bad:
            raise InvalidTheta(
                f"Simple root indices {bad} out of range 1..{self.rank}",
                {"theta": list(theta), "rank": self.rank},
            )
        return theta

    def opposite_root(self, p: int) -> int:
        """Index of iota(alpha_p)."""
        return self.size - p if self.kind == SL else p

    def iota_theta(self, theta: Iterable[int]) -> Tuple[int, ...]:
        return tuple(sorted(self.opposite_root(p) for p in theta))

    def symmetric_theta(self, theta: Iterable[int]) -> Tuple[int, ...]:
        """theta union iota(theta)."""
        theta = tuple(theta)
        return tuple(sorted(set(theta) | set(self.iota_theta(theta))))

    # ------------------------------------------------------------------ vectors
    def norm(self, coords: np.ndarray) -> np.ndarray:
        """Riemannian norm on the Cartan subspace (d(go, ho) = |mu(g^-1 h)|)."""
        coords = np.asarray(coords, dtype=float)
        scale = 1.0 if self.kind == SL else 2.0
        return np.sqrt(scale * np.sum(coords**2, axis=-1))

    def in_chamber(self, coords: np.ndarray, tol: float = 1e-12) -> bool:
        coords = np.asarray(coords, dtype=float)
        if self.kind == SL:
            return bool(np.all(np.diff(coords) <= tol))
        return bool(np.all(coords >= -tol))

    def project_theta(self, coords: np.ndarray, theta: Sequence[int]) -> np.ndarray:
        """The projection p_theta onto the Cartan subspace of theta."""
        coords = np.asarray(coords, dtype=float)
        if self.kind == PRODUCT:
            mask = np.zeros(self.size)
            mask[[p - 1 for p in theta]] = 1.0
            return coords * mask
        cuts = [0] + sorted(theta) + [self.size]
        out = np.empty_like(coords)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            out[..., lo:hi] = coords[..., lo:hi].mean(axis=-1, keepdims=True)
        return out

    def from_chamber_coords(self, c: np.ndarray) -> np.ndarray:
        """Vector with alpha_p-values c_p (chamber coordinates)."""
        return np.asarray(c, dtype=float) @ self.coweights.T

    def to_chamber_coords(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=float) @ self.root_forms.T

    def identity_matrix(self) -> np.ndarray:
        if self.kind == SL:
            return np.eye(self.size)
        return np.tile(np.eye(2), (self.size, 1, 1))

    def w0_matrix(self) -> np.ndarray:
        """Permutation matrix of the longest Weyl element (columns e_n, ..., e_1)."""
        if self.kind == SL:
            return np.eye(self.size)[:, list(self.w0_permutation)]
        return np.tile(np.array([[0.0, 1.0], [1.0, 0.0]]), (self.size, 1, 1))


# ---------------------------------------------------------------------- vectors


@dataclass(frozen=True, eq=False)
class AVector:
    """A point of the Cartan subspace in the descriptor's coordinates."""

    descriptor: GroupDescriptor
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))

    @property
    def norm(self) -> float:
        return float(self.descriptor.norm(self.coords))

    def in_chamber(self) -> bool:
        return self.descriptor.in_chamber(self.coords)

    def unit(self) -> "AVector":
        size = self.norm
        return AVector(self.descriptor, self.coords / size if size > 0 else self.coords)

    def __add__(self, other: "AVector") -> "AVector":
        return AVector(self.descriptor, self.coords + other.coords)

    def __sub__(self, other: "AVector") -> "AVector":
        return AVector(self.descriptor, self.coords - other.coords)

    def __mul__(self, scalar: float) -> "AVector":
        return AVector(self.descriptor, self.coords * scalar)

    __rmul__ = __mul__

    def allclose(self, other: "AVector", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.coords, other.coords, atol=atol, rtol=0.0))

    def __repr__(self) -> str:
        return f"AVector({self.descriptor.key}, {np.array2string(self.coords, precision=6)})"


# ---------------------------------------------------------------------- forms


class LinearForm:
    """
    A linear functional on the Cartan subspace.

    Coefficients are given against a declared basis: simple roots ("root"),
    fundamental weights ("weight"), or raw dual coordinates ("dual").
    Internally the form is held as a dual vector, so evaluation does not
    depend on the basis it was declared in.
    """

    def __init__(
        self,
        descriptor: GroupDescriptor,
        coefficients: Sequence[float],
        basis: str = "weight",
        name: Optional[str] = None,
    ):
        if basis not in BASES:
            raise BasisMismatch(f"Unknown basis tag {basis!r}", {"basis": basis})
        coefficients = np.asarray(coefficients, dtype=float)
        expected = descriptor.dim if basis == "dual" else descriptor.rank
        if coefficients.shape != (expected,):
            raise BasisMismatch(
                f"{basis} coefficients for {descriptor.key} need {expected} entries, got {coefficients.shape}",
                {"basis": basis, "expected": expected},
            )
        self.descriptor = descriptor
        self.basis = basis
        self.coefficients = coefficients
        self.name = name
        if basis == "root":
            dual = coefficients @ descriptor.root_forms
        elif basis == "weight":
            dual = coefficients @ descriptor.weight_forms
        else:
            dual = coefficients
        if descriptor.kind == SL:
            dual = dual - dual.mean()
        self.dual = dual

    def __call__(self, coords: Union[np.ndarray, AVector]) -> Union[float, np.ndarray]:
        if isinstance(coords, AVector):
            if coords.descriptor != self.descriptor:
                raise BasisMismatch("Form and vector belong to different groups")
            return float(coords.coords @ self.dual)
        return np.asarray(coords, dtype=float) @ self.dual

    def to_basis(self, basis: str) -> "LinearForm":
        """The same functional with coefficients against another basis."""
        if basis == "root":
            coefficients = self.dual @ self.descriptor.coweights
        elif basis == "weight":
            coefficients = self.dual @ self.descriptor.coroots
        elif basis == "dual":
            coefficients = self.dual
        else:
            raise BasisMismatch(f"Unknown basis tag {basis!r}", {"basis": basis})
        return LinearForm(self.descriptor, coefficients, basis, self.name)

    @property
    def weight_coefficients(self) -> np.ndarray:
        return self.dual @ self.descriptor.coroots

    def support(self, tol: float = 1e-12) -> Tuple[int, ...]:
        """Indices p with a nonzero omega_p coefficient (the form lives on a_theta for theta containing these)."""
        w = self.weight_coefficients
        return tuple(int(p + 1) for p in np.flatnonzero(np.abs(w) > tol))

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        return np.allclose(opposition_form(self).dual, self.dual, atol=tol, rtol=0.0)

    def _combine(self, other: "LinearForm", sign: float) -> "LinearForm":
        if other.descriptor != self.descriptor:
            raise BasisMismatch("Cannot combine forms of different groups")
        return LinearForm(self.descriptor, self.dual + sign * other.dual, "dual").to_basis(self.basis)

    def __add__(self, other: "LinearForm") -> "LinearForm":
        return self._combine(other, 1.0)

    def __sub__(self, other: "LinearForm") -> "LinearForm":
        return self._combine(other, -1.0)

    def __mul__(self, scalar: float) -> "LinearForm":
        return LinearForm(self.descriptor, self.coefficients * float(scalar), self.basis, self.name)

    __rmul__ = __mul__

    def __neg__(self) -> "LinearForm":
        return self * -1.0

    def allclose(self, other: "LinearForm", atol: float = 1e-12) -> bool:
        return other.descriptor == self.descriptor and np.allclose(self.dual, other.dual, atol=atol, rtol=0.0)

    def describe(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "basis": self.basis,
            "coefficients": self.coefficients.tolist(),
            "weight_coefficients": self.weight_coefficients.tolist(),
        }

    def __repr__(self) -> str:
        label = f"{self.name}: " if self.name else ""
        return f"LinearForm({label}{self.basis} {np.array2string(self.coefficients, precision=6)})"


def eval_form(psi: LinearForm, v: AVector) -> float:
    """Evaluate psi at v; the two must come from the same descriptor."""
    if psi.descriptor != v.descriptor:
        raise BasisMismatch(
            f"Form of {psi.descriptor.key} evaluated on a vector of {v.descriptor.key}",
            {"form": psi.descriptor.key, "vector": v.descriptor.key},
        )
    return psi(v)


def builtin_forms(descriptor: GroupDescriptor) -> Dict[str, LinearForm]:
    """
    Simple roots, fundamental weights, Tits weights and rho.

    The group is split over R, so the Tits weight chi_p is the fundamental
    weight omega_p.
    """
    forms: Dict[str, LinearForm] = {}
    eye = np.eye(descriptor.rank)
    for p in descriptor.simple_roots:
        forms[f"alpha{p}"] = LinearForm(descriptor, eye[p - 1], "root", f"alpha{p}")
        forms[f"omega{p}"] = LinearForm(descriptor, eye[p - 1], "weight", f"omega{p}")
        forms[f"chi{p}"] = LinearForm(descriptor, eye[p - 1], "weight", f"chi{p}")
    forms["rho"] = LinearForm(descriptor, np.ones(descriptor.rank), "weight", "rho")
    return forms


def tits_pair_form(descriptor: GroupDescriptor, p: int) -> LinearForm:
    """chi_p + chi_iota(p)."""
    coefficients = np.zeros(descriptor.rank)
    coefficients[p - 1] += 1.0
    coefficients[descriptor.opposite_root(p) - 1] += 1.0
    return LinearForm(descriptor, coefficients, "weight", f"chi{p}+chi{descriptor.opposite_root(p)}")


# ---------------------------------------------------------------------- opposition


def opposition_coords(descriptor: GroupDescriptor, coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    if descriptor.kind == PRODUCT:
        return coords.copy()
    return -coords[..., ::-1]


def opposition(v: AVector) -> AVector:
    """iota = -Ad(w0) on the Cartan subspace."""
    return AVector(v.descriptor, opposition_coords(v.descriptor, v.coords))


def opposition_form(psi: LinearForm) -> LinearForm:
    """psi composed with iota, in the basis psi was declared in."""
    dual = opposition_coords(psi.descriptor, psi.dual)
    return LinearForm(psi.descriptor, dual, "dual", psi.name).to_basis(psi.basis)


def symmetrize_form(psi: LinearForm) -> LinearForm:
    """(psi + psi o iota) / 2."""
    mirrored = opposition_form(psi)
    name = f"sym({psi.name})" if psi.name else None
    out = LinearForm(psi.descriptor, 0.5 * (psi.dual + mirrored.dual), "dual", name).to_basis(psi.basis)
    return out


# ---------------------------------------------------------------------- elements


def renormalize(matrices: np.ndarray, descriptor: GroupDescriptor) -> np.ndarray:
    """Rescale (batches of) matrices back to determinant +-1 per factor."""
    det = np.abs(np.linalg.det(matrices))
    n = descriptor.n
    return matrices / det[..., None, None] ** (1.0 / n)


@dataclass(frozen=True, eq=False)
class GroupElement:
    """
    A determinant-one matrix (or stack of 2x2 matrices) with its inverse.

    The inverse is tracked through every product instead of being recomputed,
    which keeps the small singular values of long words accurate.
    """

    descriptor: GroupDescriptor
    matrix: np.ndarray
    inverse: np.ndarray = field(repr=False)

    @classmethod
    def from_matrix(
        cls,
        descriptor: GroupDescriptor,
        matrix: Union[np.ndarray, Sequence],
        inverse: Optional[np.ndarray] = None,
        check: bool = True,
    ) -> "GroupElement":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != descriptor.matrix_shape:
            raise InvalidElement(
                f"Expected shape {descriptor.matrix_shape}, got {matrix.shape}",
                {"shape": list(matrix.shape)},
            )
        if not np.all(np.isfinite(matrix)):
            raise InvalidElement("Matrix has non-finite entries")
        if check:
            det = np.atleast_1d(np.linalg.det(matrix))
            if np.any(np.abs(det - 1.0) > DET_TOLERANCE):
                raise InvalidElement(
                    f"Determinant {det.tolist()} is not 1 within {DET_TOLERANCE}",
                    {"det": det.tolist()},
                )
        if inverse is None:
            inverse = np.linalg.inv(matrix)
        return cls(descriptor, matrix, np.asarray(inverse, dtype=float))

    @classmethod
    def identity(cls, descriptor: GroupDescriptor) -> "GroupElement":
        eye = descriptor.identity_matrix()
        return cls(descriptor, eye, eye.copy())

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.descriptor, self.matrix @ other.matrix, other.inverse @ self.inverse)

    def inv(self) -> "GroupElement":
        return GroupElement(self.descriptor, self.inverse, self.matrix)

    def renormalized(self) -> "GroupElement":
        return GroupElement(
            self.descriptor,
            renormalize(self.matrix, self.descriptor),
            renormalize(self.inverse, self.descriptor),
        )

    def power(self, m: int) -> "GroupElement":
        """g^m for m >= 0 by repeated squaring."""
        result = GroupElement.identity(self.descriptor)
        base = self
        while m > 0:
            if m & 1:
                result = (result @ base).renormalized()
            base = (base @ base).renormalized()
            m >>= 1
        return result

    def allclose(self, other: "GroupElement", atol: float = 1e-10) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0.0))


def exp_a(v: AVector) -> GroupElement:
    """exp of a Cartan vector as a diagonal group element."""
    d = v.descriptor
    if d.kind == SL:
        return GroupElement(d, np.diag(np.exp(v.coords)), np.diag(np.exp(-v.coords)))
    mats = np.zeros((d.size, 2, 2))
    mats[:, 0, 0] = np.exp(v.coords)
    mats[:, 1, 1] = np.exp(-v.coords)
    invs = np.zeros_like(mats)
    invs[:, 0, 0] = mats[:, 1, 1]
    invs[:, 1, 1] = mats[:, 0, 0]
    return GroupElement(d, mats, invs)


# ---------------------------------------------------------------------- Cartan


def cartan_coords(matrices: np.ndarray, inverses: np.ndarray, descriptor: GroupDescriptor) -> np.ndarray:
    """
    Cartan projections of a batch of elements, shape (..., dim).

    The top half of the singular values comes from g and the bottom half from
    the tracked inverse, so both ends keep full relative accuracy.
    """
    matrices = np.asarray(matrices, dtype=float)
    if not np.all(np.isfinite(matrices)) or not np.all(np.isfinite(inverses)):
        raise InvalidElement("Non-finite matrix entries in Cartan projection")
    if descriptor.kind == PRODUCT:
        s = np.linalg.svd(matrices, compute_uv=False)
        return 0.5 * (np.log(s[..., 0]) - np.log(s[..., 1]))
    n = descriptor.size
    half = n // 2
    s_top = np.linalg.svd(matrices, compute_uv=False)[..., :half]
    s_inv = np.linalg.svd(inverses, compute_uv=False)[..., :half]
    top = np.log(s_top)
    bottom = -np.log(s_inv[..., ::-1])
    parts = [top, bottom]
    if n % 2:
        # Middle value from the trace-zero condition
        middle = -(top.sum(axis=-1) + bottom.sum(axis=-1))
        parts = [top, middle[..., None], bottom]
    logs = np.concatenate(parts, axis=-1)
    logs = -np.sort(-logs, axis=-1, kind="stable")
    return logs - logs.mean(axis=-1, keepdims=True)


def cartan_projection(g: GroupElement) -> AVector:
    """mu(g): the log singular values of g, non-increasing."""
    return AVector(g.descriptor, cartan_coords(g.matrix, g.inverse, g.descriptor))


def distance(g: GroupElement, h: GroupElement) -> float:
    """Riemannian distance d(go, ho) = |mu(g^-1 h)|."""
    return cartan_projection(g.inv() @ h).norm


def cartan_frames(matrices: np.ndarray, inverses: np.ndarray, descriptor: GroupDescriptor) -> np.ndarray:
    """
    Orthonormal K-factors k1 of g = k1 exp(mu) k2 for a batch of elements.

    The first n//2 columns are left singular vectors of g, the last n//2 are
    left singular vectors of g^-T in reverse order, and for odd n the middle
    column completes the frame. Every leading span is then read from the
    side on which it is well conditioned.
    """
    if descriptor.kind == PRODUCT:
        u, _, _ = np.linalg.svd(matrices)
        return u
    n = descriptor.size
    half = n // 2
    u, _, _ = np.linalg.svd(matrices)
    w, _, _ = np.linalg.svd(np.swapaxes(inverses, -1, -2))
    basis = np.concatenate([u[..., :half], w[..., :half]], axis=-1)
    q, r = np.linalg.qr(basis, mode="complete")
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    signs = np.ones(q.shape[:-2] + (n,))
    signs[..., : 2 * half] = np.where(diag < 0, -1.0, 1.0)
    q = q * signs[..., None, :]
    order = list(range(half)) + list(range(2 * half, n)) + list(range(2 * half - 1, half - 1, -1))
    return q[..., order]


# ---------------------------------------------------------------------- Iwasawa


def _positive_qr(matrices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(matrices)
    signs = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    return q * signs[..., None, :], r * signs[..., :, None]


def iwasawa(g: GroupElement) -> Tuple[GroupElement, AVector, GroupElement]:
    """
    g = k exp(a) n with k orthogonal and n upper unipotent.

    Computed from the QR factorization with positive diagonal.
    """
    d = g.descriptor
    k, r = _positive_qr(g.matrix)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    n = r / diag[..., :, None]
    if d.kind == SL:
        logs = np.log(diag)
        a = AVector(d, logs - logs.mean())
    else:
        a = AVector(d, 0.5 * (np.log(diag[..., 0]) - np.log(diag[..., 1])))
    k_el = GroupElement(d, k, np.swapaxes(k, -1, -2))
    n_el = GroupElement(d, n, np.linalg.inv(n))
    return k_el, a, n_el


def iwasawa_cocycle(
    matrices: np.ndarray,
    inverses: np.ndarray,
    frames: np.ndarray,
    descriptor: GroupDescriptor,
) -> np.ndarray:
    """
    sigma(h, kP) for batches: the A-part of the Iwasawa decomposition of h k.

    The leading half of diag R is read from QR(h k); the trailing half from
    QR(h^-T k J) with J the column reversal, whose diagonal is the reversed
    reciprocal of diag R. For odd n the middle entry follows from det = 1.
    """
    matrices = np.asarray(matrices, dtype=float)
    frames = np.asarray(frames, dtype=float)
    n = descriptor.n
    half = n // 2
    r = np.linalg.qr(matrices @ frames)[1]
    r_dual = np.linalg.qr(np.swapaxes(inverses, -1, -2) @ frames[..., ::-1])[1]
    top = np.log(np.abs(np.diagonal(r, axis1=-2, axis2=-1)[..., :half]))
    bottom = -np.log(np.abs(np.diagonal(r_dual, axis1=-2, axis2=-1)[..., :half]))[..., ::-1]
    if descriptor.kind == PRODUCT:
        return 0.5 * (top[..., 0] - bottom[..., 0])
    parts = [top, bottom]
    if n % 2:
        parts = [top, -(top.sum(axis=-1) + bottom.sum(axis=-1))[..., None], bottom]
    logs = np.concatenate(parts, axis=-1)
    return logs - logs.mean(axis=-1, keepdims=True)


# ---------------------------------------------------------------------- flags


@dataclass(frozen=True, eq=False)
class Flag:
    """
    A (partial) flag: an orthonormal frame whose leading column spans are the
    subspaces, plus the subset theta of simple roots saying which subspace
    dimensions matter. For products the frame is a stack of 2x2 frames whose
    first columns are the circle points.
    """

    descriptor: GroupDescriptor
    frame: np.ndarray
    theta: Tuple[int, ...]

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=float)
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "theta", tuple(sorted(self.theta)))
        gram = np.swapaxes(frame, -1, -2) @ frame
        if not np.allclose(gram, self.descriptor.identity_matrix(), atol=1e-10):
            raise InvalidElement("Flag frame is not orthonormal within 1e-10")

    @classmethod
    def from_basis(cls, descriptor: GroupDescriptor, basis: np.ndarray, theta: Sequence[int]) -> "Flag":
        """Orthonormalize a (not necessarily orthogonal) basis, keeping leading spans."""
        q, _ = _positive_qr(np.asarray(basis, dtype=float))
        return cls(descriptor, q, tuple(theta))

    @classmethod
    def standard(cls, descriptor: GroupDescriptor, theta: Optional[Sequence[int]] = None) -> "Flag":
        return cls(descriptor, descriptor.identity_matrix(), tuple(theta or descriptor.simple_roots))

    @classmethod
    def opposite_standard(cls, descriptor: GroupDescriptor, theta: Optional[Sequence[int]] = None) -> "Flag":
        """w0 applied to the standard flag, as a point of F_iota(theta)."""
        theta = tuple(theta or descriptor.simple_roots)
        return cls(descriptor, descriptor.w0_matrix(), descriptor.iota_theta(theta))

    def subspace(self, p: int) -> np.ndarray:
        """Orthonormal basis of the p-dimensional subspace (SL) or circle point of factor p (product)."""
        if self.descriptor.kind == PRODUCT:
            return self.frame[p - 1][:, :1]
        return self.frame[:, :p]

    def translate(self, g: GroupElement) -> "Flag":
        """g applied to the flag."""
        return Flag.from_basis(self.descriptor, g.matrix @ self.frame, self.theta)

    def with_theta(self, theta: Sequence[int]) -> "Flag":
        return Flag(self.descriptor, self.frame, tuple(theta))


def principal_sines(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sine of the largest principal angle between subspaces with orthonormal bases a, b (batched)."""
    s = np.linalg.svd(np.swapaxes(a, -1, -2) @ b, compute_uv=False)
    smallest = np.clip(s[..., -1], 0.0, 1.0)
    return np.sqrt(np.clip(1.0 - smallest**2, 0.0, 1.0))


def frame_distances(
    frames_a: np.ndarray,
    frames_b: np.ndarray,
    descriptor: GroupDescriptor,
    theta: Sequence[int],
) -> np.ndarray:
    """Chordal distances max_{p in theta} sin(angle between p-th subspaces), batched and broadcast."""
    out = None
    for p in theta:
        if descriptor.kind == PRODUCT:
            a = frames_a[..., p - 1, :, :1]
            b = frames_b[..., p - 1, :, :1]
        else:
            a = frames_a[..., :, :p]
            b = frames_b[..., :, :p]
        s = principal_sines(a, b)
        out = s if out is None else np.maximum(out, s)
    return out


def flag_distance(xi: Flag, eta: Flag) -> float:
    """Chordal flag distance: the largest principal-angle sine over theta."""
    return float(frame_distances(xi.frame, eta.frame, xi.descriptor, xi.theta))


def flag_equal(xi: Flag, eta: Flag, tol: float = FLAG_TOLERANCE) -> bool:
    return xi.theta == eta.theta and flag_distance(xi, eta) <= tol


def antipodal_margin(xi: Flag, eta: Flag) -> float:
    """
    Smallest |det| of [xi_p | eta_{n-p}] over p in theta, frames orthonormal.

    A value of 1 means the subspaces are orthogonal complements; 0 means some
    pair of complementary subspaces intersects.
    """
    d = xi.descriptor
    margins = []
    for p in xi.theta:
        if d.kind == PRODUCT:
            block = np.column_stack([xi.frame[p - 1][:, 0], eta.frame[p - 1][:, 0]])
        else:
            block = np.column_stack([xi.frame[:, :p], eta.frame[:, : d.size - p]])
        margins.append(abs(float(np.linalg.det(block))))
    return min(margins)


def flags_to_group(xi: Flag, eta: Flag) -> GroupElement:
    """
    A group element g with g+ = xi and g- = eta.

    Column i of g spans xi_i intersected with eta_{n-i+1}; the columns are
    then rescaled so that det g = 1.
    """
    d = xi.descriptor
    margin = antipodal_margin(xi.with_theta(d.simple_roots), eta.with_theta(d.simple_roots))
    if margin < ANTIPODAL_MARGIN:
        raise NotAntipodal(f"Flags are not in general position (margin {margin:.3e})", {"margin": margin})
    if d.kind == PRODUCT:
        g = np.stack([np.column_stack([xi.frame[i][:, 0], eta.frame[i][:, 0]]) for i in range(d.size)])
        det = np.linalg.det(g)
        g[det < 0, :, 1] *= -1.0
        g = renormalize(g, d)
        return GroupElement.from_matrix(d, g, check=False)
    n = d.size
    columns = []
    for i in range(1, n + 1):
        x = xi.frame[:, :i]
        y = eta.frame[:, : n - i + 1]
        kernel = linalg.null_space(np.hstack([x, -y]))
        v = x @ kernel[:i, 0]
        columns.append(v / np.linalg.norm(v))
    g = np.column_stack(columns)
    if np.linalg.det(g) < 0:
        g[:, 0] *= -1.0
    g = renormalize(g, d)
    return GroupElement.from_matrix(d, g, check=False)


# ---------------------------------------------------------------------- Busemann


def busemann(xi: Flag, g: GroupElement, h: GroupElement) -> AVector:
    """
    beta_xi(g, h) = sigma(g^-1, xi) - sigma(h^-1, xi), projected by p_theta.

    The flag's frame is used as the full-flag lift; the projection does not
    depend on that choice.
    """
    d = xi.descriptor
    sg = iwasawa_cocycle(g.inverse, g.matrix, xi.frame, d)
    sh = iwasawa_cocycle(h.inverse, h.matrix, xi.frame, d)
    return AVector(d, d.project_theta(sg - sh, xi.theta))


def busemann_batch(
    frames: np.ndarray,
    matrices: np.ndarray,
    inverses: np.ndarray,
    descriptor: GroupDescriptor,
    theta: Sequence[int],
) -> np.ndarray:
    """
    beta_xi(e, g) = -sigma(g^-1, xi) for batches; frames and elements broadcast.
    """
    sigma = iwasawa_cocycle(inverses, matrices, frames, descriptor)
    return descriptor.project_theta(-sigma, theta)


# ---------------------------------------------------------------------- exterior powers


def exterior_power(matrix: np.ndarray, p: int) -> np.ndarray:
    """
    The p-th compound matrix (action on the exterior power, basis e_I in
    lexicographic order of p-subsets I).
    """
    n = matrix.shape[-1]
    subsets = list(itertools.combinations(range(n), p))
    rows = np.array(subsets)
    # minors[I, J] = det(matrix[I][:, J])
    blocks = matrix[rows[:, None, :, None], rows[None, :, None, :]]
    return np.linalg.det(blocks)
