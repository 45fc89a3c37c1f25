"""Experiment configuration: a flat key = value text format.

Matrix values are row-major literals with a small expression language
(eye, zeros, ones, diag, kron, scalar arithmetic), chosen over nested
formats so experiment archives diff cleanly. The algorithm grid is a
semicolon-separated list of method entries, e.g.

    grid = opf gamma=auto; opf gamma=1.0; uniform alpha=0.99; kalman

Per-entry beta/lambda override the config defaults. gamma accepts the
token `auto`, resolved at run time to the closed-loop spectral radius
of the ground-truth model.
"""
from __future__ import annotations

import ast
import hashlib
import operator
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .sysmodel import SystemModel

_MATRIX_FUNCS = {
    "eye": np.eye,
    "zeros": np.zeros,
    "ones": np.ones,
    "diag": np.diag,
    "kron": np.kron,
}

_BIN_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
}


def _eval_node(node):
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float)):
            return float(node.value)
        raise ConfigError(f"unsupported literal {node.value!r}")
    if isinstance(node, ast.List):
        return [_eval_node(el) for el in node.elts]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _eval_node(node.operand)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp) and type(node.op) in _BIN_OPS:
        return _BIN_OPS[type(node.op)](_eval_node(node.left), _eval_node(node.right))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        fname = node.func.id
        if fname not in _MATRIX_FUNCS:
            raise ConfigError(
                f"unknown function {fname!r}; allowed: {sorted(_MATRIX_FUNCS)}"
            )
        if node.keywords:
            raise ConfigError(f"{fname}() takes no keyword arguments here")
        args = [_eval_node(a) for a in node.args]
        if fname in ("eye", "zeros", "ones"):
            args = [int(a) for a in args]
        return _MATRIX_FUNCS[fname](*args)
    raise ConfigError(f"unsupported expression element {ast.dump(node)}")


def parse_matrix(text: str) -> np.ndarray:
    """Evaluate a matrix expression into a 2-D float array."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse matrix expression: {exc.msg}") from exc
    value = _eval_node(tree.body)
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ConfigError(f"matrix expression has {arr.ndim} dimensions, need 2")
    return arr


@dataclass(frozen=True)
class GridEntry:
    """One algorithm in the benchmark grid."""

    method: str                         # opf | uniform | kalman
    gamma: float | str | None = None    # float or "auto" (opf only)
    alpha: float | None = None          # uniform only
    beta: float | None = None           # override of the config default
    lam: float | None = None

    def canonical(self) -> str:
        parts = [self.method]
        if self.gamma is not None:
            parts.append(f"gamma={self.gamma}")
        if self.alpha is not None:
            parts.append(f"alpha={self.alpha}")
        if self.beta is not None:
            parts.append(f"beta={self.beta}")
        if self.lam is not None:
            parts.append(f"lambda={self.lam}")
        return " ".join(parts)


_ENTRY_KEYS = {
    "opf": {"gamma", "beta", "lambda"},
    "uniform": {"alpha", "beta", "lambda"},
    "kalman": set(),
}


def parse_grid_entry(text: str) -> GridEntry:
    tokens = text.split()
    if not tokens:
        raise ConfigError("empty grid entry")
    method = tokens[0]
    if method not in _ENTRY_KEYS:
        raise ConfigError(
            f"unknown method {method!r}; allowed: {sorted(_ENTRY_KEYS)}"
        )
    fields: dict = {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise ConfigError(f"grid option {tok!r} is not key=value")
        key, _, val = tok.partition("=")
        if key not in _ENTRY_KEYS[method]:
            raise ConfigError(f"option {key!r} not valid for method {method!r}")
        if key == "gamma":
            if val == "auto":
                fields["gamma"] = "auto"
            else:
                fields["gamma"] = _parse_unit_interval(val, "gamma")
        elif key == "alpha":
            fields["alpha"] = _parse_unit_interval(val, "alpha")
        elif key == "beta":
            fields["beta"] = _parse_positive(val, "beta")
        elif key == "lambda":
            fields["lam"] = _parse_positive(val, "lambda")
    if method == "opf" and "gamma" not in fields:
        raise ConfigError("opf grid entry needs gamma=<value|auto>")
    if method == "uniform" and "alpha" not in fields:
        raise ConfigError("uniform grid entry needs alpha=<value>")
    return GridEntry(method=method, **fields)


def _parse_unit_interval(val: str, name: str) -> float:
    try:
        x = float(val)
    except ValueError as exc:
        raise ConfigError(f"{name} must be a number, got {val!r}") from exc
    if not 0.0 < x <= 1.0:
        raise ConfigError(f"{name} must be in (0, 1], got {x}")
    return x


def _parse_positive(val: str, name: str) -> float:
    try:
        x = float(val)
    except ValueError as exc:
        raise ConfigError(f"{name} must be a number, got {val!r}") from exc
    if x <= 0:
        raise ConfigError(f"{name} must be > 0, got {x}")
    return x


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    model: SystemModel
    T_init: int
    N_E: int
    beta: float
    lam: float
    grid: tuple[GridEntry, ...]
    seeds: int = 20
    base_seed: int = 1000
    decomposition: bool = False
    refactor_period: int = 512
    out: str | None = None

    def __post_init__(self):
        if not self.grid:
            raise ConfigError("grid must be non-empty")
        if self.seeds < 1:
            raise ConfigError(f"seeds must be >= 1, got {self.seeds}")

    @property
    def horizon(self) -> int:
        """Total simulated horizon 2^{N_E} T_init, shared by all grid
        entries (it depends only on T_init and N_E)."""
        return (2**self.N_E) * self.T_init

    def with_options(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def canonical_text(self) -> str:
        """Deterministic serialization used for the config hash; output
        location is excluded because it does not affect results."""
        lines = [
            f"name={self.name}",
            f"T_init={self.T_init}",
            f"N_E={self.N_E}",
            f"beta={self.beta!r}",
            f"lambda={self.lam!r}",
            f"seeds={self.seeds}",
            f"base_seed={self.base_seed}",
            f"decomposition={'on' if self.decomposition else 'off'}",
            f"refactor_period={self.refactor_period}",
        ]
        for mat_name in ("A", "C", "Q", "R"):
            arr = getattr(self.model, mat_name)
            lines.append(f"{mat_name}.shape={arr.shape}")
            lines.append(f"{mat_name}.bytes={arr.tobytes().hex()}")
        for entry in self.grid:
            lines.append(f"grid:{entry.canonical()}")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]


_SCALAR_KEYS = {
    "T_init": int,
    "N_E": int,
    "beta": float,
    "lambda": float,
    "seeds": int,
    "base_seed": int,
    "refactor_period": int,
}
_MATRIX_KEYS = ("A", "C", "Q", "R")
_ALL_KEYS = (
    set(_SCALAR_KEYS) | set(_MATRIX_KEYS) | {"name", "grid", "decomposition", "out"}
)


def parse_config_text(text: str, default_name: str = "experiment") -> ExperimentConfig:
    """Parse the flat key = value format with line-level error context."""
    raw: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = (lineno, value)

    def take(key, required=True):
        if key not in raw:
            if required:
                raise ConfigError(f"missing required key {key!r}")
            return None, None
        return raw[key]

    matrices = {}
    for key in _MATRIX_KEYS:
        lineno, value = take(key)
        try:
            matrices[key] = parse_matrix(value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: field {key}: {exc}") from exc
    try:
        model = SystemModel(**matrices)
    except Exception as exc:
        raise ConfigError(f"inconsistent system matrices: {exc}") from exc

    scalars = {}
    for key, conv in _SCALAR_KEYS.items():
        lineno, value = take(key, required=key in ("T_init", "N_E", "beta", "lambda"))
        if value is None:
            continue
        try:
            scalars[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(
                f"line {lineno}: field {key}: cannot parse {value!r}"
            ) from exc

    lineno, grid_text = take("grid")
    entries = []
    for part in grid_text.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            entries.append(parse_grid_entry(part))
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: grid entry {part!r}: {exc}") from exc
    if not entries:
        raise ConfigError(f"line {lineno}: grid has no entries")

    decomposition = False
    if "decomposition" in raw:
        lineno, value = raw["decomposition"]
        if value not in ("on", "off"):
            raise ConfigError(
                f"line {lineno}: decomposition must be 'on' or 'off', got {value!r}"
            )
        decomposition = value == "on"

    name = raw["name"][1] if "name" in raw else default_name
    out = raw["out"][1] if "out" in raw else None
    kwargs = dict(
        name=name,
        model=model,
        T_init=scalars["T_init"],
        N_E=scalars["N_E"],
        beta=scalars["beta"],
        lam=scalars["lambda"],
        grid=tuple(entries),
        decomposition=decomposition,
        out=out,
    )
    for opt in ("seeds", "base_seed", "refactor_period"):
        if opt in scalars:
            kwargs[opt] = scalars[opt]
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    from pathlib import Path

    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config_text(text, default_name=p.stem)
