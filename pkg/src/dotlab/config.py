"""INI-style run configuration for the ``dotlab`` command line.

Example::

    [run]
    command = clt
    divergence = entropic
    epsilon = 1.0
    cost = euclidean
    seed = 2024
    output = out/clt

    [mu]
    instance = B

    [nu]
    instance = B

    [experiment]
    mode = two_sample
    n = 1000
    m = 1000
    replicates = 1000
    centering = replicate_mean

Population sections accept exactly one of ``instance = A|B``,
``grid = d, k, lo, hi``, ``csv = path`` or ``atoms = x | y | ...`` together
with ``weights = w1, w2, ...`` (points separated by ``|``, coordinates by
commas).
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .divergence import divergence_from_name
from .errors import ParseError, ValidationError
from .measure import (
    DiscreteMeasure,
    read_cost_csv,
    read_measure_csv,
    resolve_cost_kind,
    uniform_grid_measure,
)
from .solver import SolveConfig

COMMANDS = ("solve", "rate", "clt", "check")
CENTERINGS = ("replicate_mean", "population_value")
MODES = ("one_sample_mu", "one_sample_nu", "two_sample")

SECTIONS = {
    "run": {"command", "divergence", "epsilon", "cost", "seed", "output", "plan", "potentials"},
    "mu": {"instance", "grid", "csv", "atoms", "weights"},
    "nu": {"instance", "grid", "csv", "atoms", "weights"},
    "experiment": {"n_grid", "n", "m", "replicates", "centering", "mode", "trials", "instances"},
    "solver": {"tol_marginal", "tol_newton", "max_sweeps", "newton_max_iter"},
}

INSTANCES = {
    # two-point symmetric instance
    ("A", "mu"): ([0.0, 1.0], [0.5, 0.5]),
    ("A", "nu"): ([0.0, 1.0], [0.5, 0.5]),
    # asymmetric instance with non-degenerate limit variances
    ("B", "mu"): ([0.0, 1.0], [0.3, 0.7]),
    ("B", "nu"): ([0.0, 0.5, 1.0], [1 / 3, 1 / 3, 1 / 3]),
}


@dataclass
class RunConfig:
    command: str
    mu: dict
    nu: dict
    divergence: str = "entropic"
    epsilon: float = 1.0
    cost: str = "euclidean"
    seed: int = 0
    output: str = "dotlab_out"
    plan: Optional[str] = None
    potentials: Optional[str] = None
    n_grid: tuple = ()
    n: Optional[int] = None
    m: Optional[int] = None
    replicates: int = 200
    trials: int = 500
    instances: int = 20
    centering: str = "replicate_mean"
    mode: str = "one_sample_mu"
    solver: SolveConfig = field(default_factory=SolveConfig)
    source: Optional[str] = None

    def echo(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "solver"}
        out["solver"] = dict(self.solver.__dict__)
        out["n_grid"] = list(self.n_grid)
        return out


# -- population specs ---------------------------------------------------------------

def _floats(text: str) -> list:
    return [float(t) for t in text.split(",") if t.strip()]


def load_population(spec: dict, side: str, base: Path = Path(".")) -> DiscreteMeasure:
    if "instance" in spec:
        atoms, weights = INSTANCES[(spec["instance"].upper(), side)]
        return DiscreteMeasure(atoms, weights)
    if "grid" in spec:
        d, k, lo, hi = _floats(spec["grid"])
        return uniform_grid_measure(int(d), int(k), (lo, hi))
    if "csv" in spec:
        return read_measure_csv(base / spec["csv"])
    points = [_floats(p) for p in spec["atoms"].split("|")]
    return DiscreteMeasure(np.array(points), _floats(spec["weights"]))


def load_cost(kind: str, mu: DiscreteMeasure, nu: DiscreteMeasure, base: Path = Path(".")):
    from .measure import build_cost

    if kind.endswith(".csv"):
        return build_cost(mu, nu, read_cost_csv(base / kind).values)
    return build_cost(mu, nu, kind)


# -- parsing ---------------------------------------------------------------------------

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([A-Za-z_][\w]*)\s*[=:]")


def _line_index(text: str) -> dict:
    where, section = {}, None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = lineno
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            where[(section, m.group(1))] = lineno
    return where


def parse_config(path) -> RunConfig:
    """Read and validate a run configuration.

    Raises :class:`ParseError` for malformed files and
    :class:`ValidationError` listing every violation found.
    """
    path = Path(path)
    text = path.read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key outside any section", line=exc.lineno) from exc
    except configparser.DuplicateOptionError as exc:
        raise ParseError(f"duplicate key in [{exc.section}]", line=exc.lineno, field=exc.option) from exc
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"duplicate section [{exc.section}]", line=exc.lineno) from exc
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed line", line=lineno) from exc

    lines = _line_index(text)
    base = path.parent
    errors: list[str] = []

    def loc(section, key=None):
        ln = lines.get((section, key))
        return f"[{section}] {key or ''}".rstrip() + (f" (line {ln})" if ln else "")

    for section in parser.sections():
        if section not in SECTIONS:
            errors.append(f"unknown section {loc(section)}")
            continue
        for key in parser[section]:
            if key not in SECTIONS[section]:
                errors.append(f"unknown key {loc(section, key)}")

    def get(section, key, conv=str, default=None):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key).strip()
        try:
            return conv(raw)
        except (TypeError, ValueError):
            errors.append(f"cannot read {loc(section, key)} = {raw!r} as {getattr(conv, '__name__', conv)}")
            return default

    def int_list(text):
        return tuple(int(t) for t in text.split(",") if t.strip())

    command = get("run", "command")
    if command not in COMMANDS:
        errors.append(f"command must be one of {', '.join(COMMANDS)}; got {command!r}")

    divergence = get("run", "divergence", default="entropic")
    try:
        divergence_from_name(divergence)
    except ValueError as exc:
        errors.append(str(exc))

    epsilon = get("run", "epsilon", float, 1.0)
    if epsilon is not None and not epsilon > 0:
        errors.append("epsilon must be positive")

    cost = get("run", "cost", default="euclidean")
    if cost.endswith(".csv"):
        if not (base / cost).exists():
            errors.append(f"cost file {cost!r} does not exist")
    else:
        try:
            resolve_cost_kind(cost)
        except ValueError as exc:
            errors.append(str(exc))

    pops = {}
    for side in ("mu", "nu"):
        spec = dict(parser[side]) if parser.has_section(side) else {}
        if command == "check" and not spec:
            pops[side] = {}
            continue
        kinds = [k for k in ("instance", "grid", "csv", "atoms") if k in spec]
        if len(kinds) != 1:
            errors.append(f"[{side}] needs exactly one of instance/grid/csv/atoms")
        elif kinds[0] == "instance" and (spec["instance"].upper(), side) not in INSTANCES:
            errors.append(f"unknown instance {loc(side, 'instance')}: {spec['instance']!r}; known: A, B")
        elif kinds[0] == "csv" and not (base / spec["csv"]).exists():
            errors.append(f"measure file {spec['csv']!r} for [{side}] does not exist")
        elif kinds[0] == "atoms" and "weights" not in spec:
            errors.append(f"[{side}] atoms given without weights")
        else:
            try:
                load_population(spec, side, base)
            except (ValueError, OSError) as exc:
                errors.append(f"[{side}] {exc}")
        pops[side] = spec

    solver_kwargs = {}
    for key, conv in (("tol_marginal", float), ("tol_newton", float), ("max_sweeps", int), ("newton_max_iter", int)):
        val = get("solver", key, conv)
        if val is not None:
            if not val > 0:
                errors.append(f"{key} must be positive")
            else:
                solver_kwargs[key] = val

    n_grid = get("experiment", "n_grid", int_list, ())
    n = get("experiment", "n", int)
    m = get("experiment", "m", int)
    replicates = get("experiment", "replicates", int, 200)
    trials = get("experiment", "trials", int, 500)
    instances = get("experiment", "instances", int, 20)
    centering = get("experiment", "centering", default="replicate_mean")
    mode = get("experiment", "mode", default="one_sample_mu")
    seed = get("run", "seed", int, 0)

    if centering not in CENTERINGS:
        errors.append(f"centering must be one of {', '.join(CENTERINGS)}")
    if mode not in MODES:
        errors.append(f"mode must be one of {', '.join(MODES)}")
    if command == "rate":
        if len(n_grid) < 4 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
            errors.append("rate needs n_grid with >= 4 strictly increasing sizes")
        if replicates is not None and replicates < 50:
            errors.append("rate needs replicates >= 50")
    if command == "clt":
        if mode != "one_sample_nu" and not n:
            errors.append(f"clt mode {mode} needs n")
        if mode != "one_sample_mu" and not (m or n):
            errors.append(f"clt mode {mode} needs m")
        if replicates is not None and replicates < 500:
            errors.append("clt needs replicates >= 500")

    if errors:
        raise ValidationError(errors)

    return RunConfig(
        command=command, mu=pops.get("mu", {}), nu=pops.get("nu", {}),
        divergence=divergence, epsilon=epsilon, cost=cost, seed=seed,
        output=get("run", "output", default="dotlab_out"),
        plan=get("run", "plan"), potentials=get("run", "potentials"),
        n_grid=n_grid, n=n, m=m, replicates=replicates, trials=trials,
        instances=instances, centering=centering, mode=mode,
        solver=SolveConfig(epsilon=epsilon, **solver_kwargs), source=str(path),
    )
