"""
Scenario files for AnosovLab.

A scenario is a TOML document naming the ambient group, the generators,
the simple roots of interest, named linear forms, run settings and an
optional one-parameter deformation family. Documents are validated against
a JSON Schema first, then semantically (shapes, determinants, root indices).
Matrix entries may be numbers or expression strings such as "sqrt(2)/2";
family entries may also use the family parameter.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy
from jsonschema import Draft7Validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from config import (
    BALL_BUDGET,
    DEDUPE_EPS,
    DEFAULT_BALL_LENGTH,
    DEFAULT_SEED,
    DEFAULT_WORKERS,
    MAX_SAMPLE,
    SHADOW_RADIUS,
)
from lie_core import BASES, PRODUCT, SL, GroupDescriptor, LinearForm, builtin_forms
from utils import get_logger
from utils.errors import ConfigError, InvalidTheta, LabError
from utils.export import sha256_text

# Set up logger
logger = get_logger(__name__)

_ENTRY = {"type": ["number", "string"]}
_MATRIX = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "array", "minItems": 1, "items": {"anyOf": [_ENTRY, {"type": "array", "items": _ENTRY}]}},
}
_GENERATOR = {
    "type": "object",
    "required": ["matrix"],
    "properties": {"matrix": _MATRIX, "conjugator": _MATRIX},
    "additionalProperties": False,
}
_LABEL = "^[a-z]$"

SCENARIO_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["group", "generators", "theta"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "group": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["SL", "product"]},
                "n": {"type": "integer", "minimum": 2, "maximum": 8},
                "factors": {"type": "integer", "minimum": 1, "maximum": 8},
            },
            "additionalProperties": False,
        },
        "generators": {
            "type": "object",
            "minProperties": 1,
            "patternProperties": {_LABEL: _GENERATOR},
            "additionalProperties": False,
        },
        "theta": {
            "type": "object",
            "required": ["roots"],
            "properties": {"roots": {"type": "array", "items": {"type": "integer"}}},
            "additionalProperties": False,
        },
        "forms": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["basis", "coefficients"],
                "properties": {
                    "basis": {"enum": list(BASES)},
                    "coefficients": {"type": "array", "items": _ENTRY, "minItems": 1},
                },
                "additionalProperties": False,
            },
        },
        "run": {
            "type": "object",
            "properties": {
                "ball_length": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "workers": {"type": "integer", "minimum": 1},
                "budget": {"type": "integer", "minimum": 1},
                "shell_min": {"type": "integer", "minimum": 0},
                "dedupe_eps": {"type": "number", "exclusiveMinimum": 0},
                "max_sample": {"type": "integer", "minimum": 3},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "scales": {"type": "string"},
                "form": {"type": "string"},
                "pq": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                              "minItems": 2, "maxItems": 2},
                },
                "triples": {"type": "integer", "minimum": 1},
                "aperture": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "family": {
            "type": "object",
            "required": ["parameter", "grid", "generators"],
            "properties": {
                "parameter": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"},
                "grid": {
                    "anyOf": [
                        {"type": "array", "items": {"type": "number"}, "minItems": 1},
                        {
                            "type": "object",
                            "required": ["start", "stop", "num"],
                            "properties": {
                                "start": {"type": "number"},
                                "stop": {"type": "number"},
                                "num": {"type": "integer", "minimum": 1},
                            },
                            "additionalProperties": False,
                        },
                    ]
                },
                "generators": {
                    "type": "object",
                    "patternProperties": {_LABEL: {"type": "object", "required": ["matrix"],
                                                   "properties": {"matrix": _MATRIX},
                                                   "additionalProperties": False}},
                    "additionalProperties": False,
                },
                "p": {"type": "number", "exclusiveMinimum": 0},
                "q": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class RunSettings:
    """The [run] section after defaults and command-line overrides."""

    ball_length: int = DEFAULT_BALL_LENGTH
    seed: int = DEFAULT_SEED
    workers: int = DEFAULT_WORKERS
    budget: int = BALL_BUDGET
    shell_min: Optional[int] = None
    dedupe_eps: float = DEDUPE_EPS
    max_sample: int = MAX_SAMPLE
    radius: float = SHADOW_RADIUS
    scales: Optional[Tuple[float, float, int]] = None
    form: Optional[str] = None
    pq: Tuple[Tuple[float, float], ...] = ((1.0, 1.0),)
    triples: int = 10_000
    aperture: float = 0.15

    @property
    def effective_shell_min(self) -> int:
        if self.shell_min is not None:
            return self.shell_min
        return max(self.ball_length - 2, 1)


@dataclass
class Family:
    """A one-parameter family of generator matrices."""

    parameter: str
    grid: np.ndarray
    expressions: Dict[str, List]
    p: float = 1.0
    q: float = 1.0
    _compiled: Dict[str, Any] = field(default_factory=dict, repr=False)

    def generators_at(self, t: float) -> Dict[str, np.ndarray]:
        """Evaluate every family matrix at parameter value t."""
        symbol = sympy.Symbol(self.parameter)
        out = {}
        for label, rows in self.expressions.items():
            if label not in self._compiled:
                self._compiled[label] = sympy.lambdify(symbol, sympy.Matrix(rows), "numpy")
            out[label] = np.asarray(self._compiled[label](float(t)), dtype=float)
        return out


@dataclass
class Scenario:
    """A validated scenario."""

    name: str
    description: str
    descriptor: GroupDescriptor
    generators: Dict[str, np.ndarray]
    theta: Tuple[int, ...]
    forms: Dict[str, LinearForm]
    run: RunSettings
    family: Optional[Family] = None
    source_text: str = ""
    path: Optional[Path] = None

    @property
    def config_hash(self) -> str:
        return sha256_text(self.source_text)

    def with_overrides(self, **overrides: Any) -> "Scenario":
        """Copy with [run] keys replaced by the non-None overrides."""
        clean = {k: v for k, v in overrides.items() if v is not None}
        if "scales" in clean and isinstance(clean["scales"], str):
            clean["scales"] = parse_scales(clean["scales"])
        try:
            run = dataclasses.replace(self.run, **clean)
        except TypeError as e:
            raise ConfigError(f"Unknown run override: {e}", field="run") from e
        if run.form is not None:
            self.form(run.form)
        return dataclasses.replace(self, run=run)

    def form(self, name: Optional[str] = None) -> LinearForm:
        """
        Look up a form by name: scenario forms first, then the built-in
        roots, weights and rho. Without a name, the run's default form is
        used, falling back to rho.
        """
        name = name or self.run.form or "rho"
        if name in self.forms:
            return self.forms[name]
        builtins = builtin_forms(self.descriptor)
        if name in builtins:
            return builtins[name]
        raise ConfigError(f"Unknown form {name!r}", field="run.form",
                          details={"known": sorted(set(self.forms) | set(builtins))})

    def generators_at(self, t: float) -> Dict[str, np.ndarray]:
        """
        Generators with the family matrices substituted at parameter t.

        For products of SL(2, R) a family matrix replaces the last factor,
        so the first factors stay fixed while the last one is deformed.
        """
        if self.family is None:
            raise ConfigError("Scenario has no [family] section", field="family")
        generators = {label: np.array(m, copy=True) for label, m in self.generators.items()}
        for label, matrix in self.family.generators_at(t).items():
            if self.descriptor.kind == PRODUCT:
                generators[label][-1] = matrix
            else:
                generators[label] = matrix
        return generators

    def describe(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "group": self.descriptor.key,
            "generators": {k: np.asarray(v).tolist() for k, v in self.generators.items()},
            "theta": list(self.theta),
            "config_sha256": self.config_hash,
        }


# ---------------------------------------------------------------------- parsing helpers


def parse_scales(text: str) -> Tuple[float, float, int]:
    """Parse 'lo:hi:n' into a geometric scale grid."""
    try:
        lo_s, hi_s, n_s = text.split(":")
        lo, hi, n = float(lo_s), float(hi_s), int(n_s)
    except ValueError as e:
        raise ConfigError(f"Scales must look like lo:hi:n, got {text!r}", field="run.scales") from e
    if not (0 < lo < hi) or n < 2:
        raise ConfigError(f"Scales need 0 < lo < hi and n >= 2, got {text!r}", field="run.scales")
    return lo, hi, n


def scale_grid(scales: Tuple[float, float, int]) -> np.ndarray:
    lo, hi, n = scales
    return np.geomspace(lo, hi, n)


def _evaluate(entry: Union[float, str], field_name: str) -> float:
    if isinstance(entry, (int, float)):
        return float(entry)
    try:
        value = sympy.sympify(entry)
        if value.free_symbols:
            raise ConfigError(f"Expression {entry!r} has free symbols {value.free_symbols}", field=field_name)
        return float(value.evalf(30))
    except (sympy.SympifyError, TypeError, ValueError) as e:
        raise ConfigError(f"Cannot evaluate {entry!r}: {e}", field=field_name) from e


def _evaluate_matrix(raw: Sequence, field_name: str) -> np.ndarray:
    def walk(node):
        if isinstance(node, list):
            return [walk(x) for x in node]
        return _evaluate(node, field_name)

    try:
        return np.asarray(walk(raw), dtype=float)
    except ValueError as e:
        raise ConfigError(f"Ragged matrix: {e}", field=field_name) from e


def _check_shape(matrix: np.ndarray, descriptor: GroupDescriptor, field_name: str) -> None:
    if matrix.shape != descriptor.matrix_shape:
        raise ConfigError(
            f"Expected a matrix of shape {descriptor.matrix_shape}, got {matrix.shape}",
            field=field_name,
        )


def _apply_conjugator(matrix: np.ndarray, conjugator: np.ndarray) -> np.ndarray:
    return conjugator @ matrix @ np.linalg.inv(conjugator)


def _validate_schema(document: Dict[str, Any]) -> None:
    errors = sorted(Draft7Validator(SCENARIO_SCHEMA).iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        field_name = ".".join(str(p) for p in first.absolute_path) or "<root>"
        raise ConfigError(first.message, field=field_name, details={"error_count": len(errors)})


def _build_descriptor(group: Dict[str, Any]) -> GroupDescriptor:
    if group["kind"] == "SL":
        if "n" not in group:
            raise ConfigError("SL groups need n", field="group.n")
        return GroupDescriptor(SL, group["n"])
    if "factors" not in group:
        raise ConfigError("Product groups need factors", field="group.factors")
    return GroupDescriptor(PRODUCT, group["factors"])


def _build_family(raw: Dict[str, Any], descriptor: GroupDescriptor, labels: Sequence[str]) -> Family:
    grid_spec = raw["grid"]
    if isinstance(grid_spec, dict):
        grid = np.linspace(grid_spec["start"], grid_spec["stop"], grid_spec["num"])
    else:
        grid = np.asarray(grid_spec, dtype=float)
    symbol = sympy.Symbol(raw["parameter"])
    expressions: Dict[str, List] = {}
    for label, spec in raw["generators"].items():
        field_name = f"family.generators.{label}.matrix"
        if label not in labels:
            raise ConfigError(f"Family generator {label!r} is not a scenario generator", field=field_name)
        rows = []
        for row in spec["matrix"]:
            parsed = []
            for entry in row:
                try:
                    expr = sympy.sympify(entry)
                except sympy.SympifyError as e:
                    raise ConfigError(f"Cannot parse {entry!r}: {e}", field=field_name) from e
                if expr.free_symbols - {symbol}:
                    raise ConfigError(f"Unexpected symbols in {entry!r}", field=field_name)
                parsed.append(expr)
            rows.append(parsed)
        expressions[label] = rows
    family = Family(raw["parameter"], grid, expressions, raw.get("p", 1.0), raw.get("q", 1.0))

    # Family members must be valid elements of one SL(2) (or SL(n)) factor at every grid point
    for t in grid:
        for label, matrix in family.generators_at(t).items():
            field_name = f"family.generators.{label}.matrix"
            if matrix.shape != (descriptor.n, descriptor.n):
                raise ConfigError(f"Family matrix shape {matrix.shape} does not match the group", field=field_name)
            if abs(np.linalg.det(matrix) - 1.0) > 1e-9:
                raise ConfigError(f"Family matrix has determinant {np.linalg.det(matrix):.12g} at t={t}",
                                  field=field_name)
    return family


def load_scenario_text(text: str, path: Optional[Path] = None) -> Scenario:
    """
    Parse and validate a scenario document.

    Args:
        text: TOML source
        path: Where it came from (for messages and the manifest)

    Returns:
        The validated scenario

    Raises:
        ConfigError: naming the offending field
    """
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML: {e}", field="<document>") from e

    _validate_schema(document)
    descriptor = _build_descriptor(document["group"])

    generators: Dict[str, np.ndarray] = {}
    for label in sorted(document["generators"]):
        spec = document["generators"][label]
        field_name = f"generators.{label}.matrix"
        matrix = _evaluate_matrix(spec["matrix"], field_name)
        _check_shape(matrix, descriptor, field_name)
        if "conjugator" in spec:
            conj_field = f"generators.{label}.conjugator"
            conjugator = _evaluate_matrix(spec["conjugator"], conj_field)
            _check_shape(conjugator, descriptor, conj_field)
            if np.any(np.abs(np.linalg.det(conjugator)) < 1e-12):
                raise ConfigError("Conjugator is singular", field=conj_field)
            matrix = _apply_conjugator(matrix, conjugator)
        det = np.atleast_1d(np.linalg.det(matrix))
        if np.any(np.abs(det - 1.0) > 1e-9):
            raise ConfigError(f"Determinant {det.tolist()} is not 1 within 1e-9", field=field_name)
        generators[label] = matrix

    try:
        theta = descriptor.validate_theta(document["theta"]["roots"])
    except InvalidTheta as e:
        raise ConfigError(e.message, field="theta.roots", details=e.details) from e

    forms: Dict[str, LinearForm] = {}
    for name, spec in sorted(document.get("forms", {}).items()):
        field_name = f"forms.{name}"
        coefficients = [_evaluate(c, field_name) for c in spec["coefficients"]]
        try:
            forms[name] = LinearForm(descriptor, coefficients, spec["basis"], name)
        except LabError as e:
            raise ConfigError(e.message, field=field_name) from e

    raw_run = dict(document.get("run", {}))
    if "scales" in raw_run:
        raw_run["scales"] = parse_scales(raw_run["scales"])
    if "pq" in raw_run:
        raw_run["pq"] = tuple(tuple(float(x) for x in pair) for pair in raw_run["pq"])
    run = RunSettings(**raw_run)

    family = None
    if "family" in document:
        family = _build_family(document["family"], descriptor, list(generators))

    scenario = Scenario(
        name=document.get("name", path.stem if path else "scenario"),
        description=document.get("description", ""),
        descriptor=descriptor,
        generators=generators,
        theta=theta,
        forms=forms,
        run=run,
        family=family,
        source_text=text,
        path=path,
    )
    if run.form is not None:
        scenario.form(run.form)
    logger.debug(f"Loaded scenario {scenario.name} ({descriptor.key}, generators {list(generators)})")
    return scenario


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read scenario file: {e}", field="--config") from e
    return load_scenario_text(text, path)
