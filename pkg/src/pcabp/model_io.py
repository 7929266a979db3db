"""
Flat-file formats: YAML model files, CSV tables with a versioned schema
header, and run-length encoded trajectories.

A measure model::

    dimension: 1
    range: 1
    memoryless: true
    atoms:
      - weight: "1/2"
        minimal_sets: [[[-1, -1]], [[1, -1]]]

A bootstrap percolation model::

    dimension: 2
    update_family: [[[-1, -1], [1, -1]]]
"""

import csv
import hashlib
import itertools
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from . import config
from .bp_engine import UpdateFamily
from .errors import DomainError, ModelFileError, WorkbenchError
from .pca_engine import Trajectory
from .rates import LinearCurve, RatesMeasure, Weight, as_weight, make_measure
from .upset_algebra import Neighborhood, make_upfamily

logger = logging.getLogger(__name__)

SCHEMA_PREFIX = "pcabp"


@dataclass(frozen=True)
class Model:
    name: str
    measure: Optional[RatesMeasure] = None
    family: Optional[UpdateFamily] = None

    @property
    def kind(self) -> str:
        return "measure" if self.measure is not None else "update_family"

    def require_measure(self) -> RatesMeasure:
        if self.measure is None:
            raise ModelFileError(f"model {self.name!r} is an update family, a measure is needed")
        return self.measure

    def require_family(self) -> UpdateFamily:
        if self.family is None:
            raise ModelFileError(f"model {self.name!r} is a measure, an update family is needed")
        return self.family

    def curve(self) -> LinearCurve:
        """The death curve p * measure + (1 - p) * delta_empty."""
        return LinearCurve(self.require_measure())

    @property
    def digest(self) -> str:
        return model_hash(self)


# === Parsing ===

def _parse_vector(raw: Any, length: int, where: str) -> Tuple[int, ...]:
    if not isinstance(raw, (list, tuple)) or len(raw) != length:
        raise ModelFileError(f"{where}: expected a list of {length} integers, got {raw!r}")
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in raw):
        raise ModelFileError(f"{where}: coordinates must be integers, got {raw!r}")
    return tuple(raw)


def _parse_weight(raw: Any, where: str) -> Weight:
    if isinstance(raw, bool) or raw is None:
        raise ModelFileError(f"{where}: not a weight: {raw!r}")
    if isinstance(raw, float):
        # decimal literals are read exactly
        raw = repr(raw)
    try:
        return as_weight(raw)
    except WorkbenchError as e:
        raise ModelFileError(f"{where}: {e}") from None


def _parse_sets(raw: Any, length: int, where: str) -> List[List[Tuple[int, ...]]]:
    if not isinstance(raw, list):
        raise ModelFileError(f"{where}: expected a list of sets")
    sets = []
    for i, s in enumerate(raw):
        if not isinstance(s, list):
            raise ModelFileError(f"{where}[{i}]: expected a list of sites")
        sets.append([_parse_vector(v, length, f"{where}[{i}]") for v in s])
    return sets


def model_from_dict(data: Any, name: str = "model") -> Model:
    if not isinstance(data, dict):
        raise ModelFileError(f"{name}: top level must be a mapping")
    name = str(data.get("name", name))
    dimension = data.get("dimension")
    if not isinstance(dimension, int) or isinstance(dimension, bool) or dimension < 0:
        raise ModelFileError(f"{name}: 'dimension' must be a non-negative integer")
    has_atoms, has_family = "atoms" in data, "update_family" in data
    if has_atoms == has_family:
        raise ModelFileError(f"{name}: give exactly one of 'atoms' or 'update_family'")

    try:
        if has_family:
            sets = _parse_sets(data["update_family"], dimension, "update_family")
            return Model(name, family=UpdateFamily.of(dimension, sets))

        r = data.get("range", 1)
        if not isinstance(r, int) or isinstance(r, bool):
            raise ModelFileError(f"{name}: 'range' must be an integer")
        nbhd = Neighborhood(dimension, r, memoryless=bool(data.get("memoryless", True)))
        atoms = data["atoms"]
        if not isinstance(atoms, list) or not atoms:
            raise ModelFileError(f"{name}: 'atoms' must be a nonempty list")
        pairs = []
        for i, atom in enumerate(atoms):
            where = f"atoms[{i}]"
            if not isinstance(atom, dict) or "weight" not in atom or "minimal_sets" not in atom:
                raise ModelFileError(f"{where}: needs 'weight' and 'minimal_sets'")
            sets = _parse_sets(atom["minimal_sets"], dimension + 1, f"{where}.minimal_sets")
            pairs.append((make_upfamily(nbhd, sets), _parse_weight(atom["weight"], f"{where}.weight")))
        return Model(name, measure=make_measure(nbhd, pairs))
    except ModelFileError:
        raise
    except DomainError as e:
        raise ModelFileError(f"{name}: {e}") from None


def load_model(path: Union[str, Path]) -> Model:
    path = Path(path)
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError:
        raise ModelFileError(f"model file {path} not found") from None
    except yaml.YAMLError as e:
        raise ModelFileError(f"cannot parse {path}: {e}") from None
    model = model_from_dict(data, name=path.stem)
    logger.debug(f"loaded {model.kind} model {model.name!r} from {path}")
    return model


# === Writing ===

def _weight_text(w: Weight) -> str:
    return str(w) if isinstance(w, Fraction) else repr(float(w))


def model_to_dict(model: Model) -> Dict[str, Any]:
    if model.family is not None:
        return {"name": model.name, "dimension": model.family.dimension,
                "update_family": model.family.as_lists()}
    mu = model.measure
    nbhd = mu.neighborhood
    return {
        "name": model.name,
        "dimension": nbhd.d,
        "range": nbhd.r,
        "memoryless": nbhd.memoryless,
        "atoms": [{"weight": _weight_text(w), "minimal_sets": [[list(x) for x in s] for s in f.as_sites()]}
                  for f, w in mu.atoms],
    }


def save_model(model: Model, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(model_to_dict(model), f, sort_keys=False, default_flow_style=None)
    return path


def model_hash(model: Model) -> str:
    """sha256 of the canonical model text (the name is not part of it)."""
    data = model_to_dict(model)
    data.pop("name")
    text = yaml.safe_dump(data, sort_keys=True, default_flow_style=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# === CSV ===

def schema_line(schema: str) -> str:
    version = int(config.get_setting('csv_schema_version', 1))
    return f"# schema: {SCHEMA_PREFIX}.{schema} v{version}"


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return str(int(value))
    return str(value)


def write_csv(path: Union[str, Path], schema: str, columns: Sequence[str],
              rows: Sequence[Sequence[Any]], meta: Optional[Dict[str, Any]] = None) -> Path:
    """Schema line, ``# key=value`` provenance lines, then a plain CSV table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        f.write(schema_line(schema) + "\n")
        for key, value in (meta or {}).items():
            f.write(f"# {key}={value}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.debug(f"wrote {len(rows)} rows to {path}")
    return path


def read_csv(path: Union[str, Path]) -> Tuple[Dict[str, str], List[str], List[List[str]]]:
    """Inverse of ``write_csv``: (metadata incl. ``schema``, column names, rows)."""
    meta: Dict[str, str] = {}
    body = []
    with Path(path).open("r", newline="", encoding="utf-8") as f:
        for line in f:
            if line.startswith("# schema: "):
                meta["schema"] = line[len("# schema: "):].strip()
            elif line.startswith("# ") and "=" in line:
                key, value = line[2:].rstrip("\n").split("=", 1)
                meta[key] = value
            else:
                body.append(line)
    table = list(csv.reader(body))
    if not table:
        raise ModelFileError(f"{path}: no header row")
    return meta, table[0], table[1:]


# === Trajectories ===

def _rle_row(values: np.ndarray) -> str:
    out = []
    for bit, group in itertools.groupby(values.tolist()):
        count = len(list(group))
        out.append(f"{count if count > 1 else ''}{'o' if bit else 'b'}")
    return "".join(out)


def encode_state(state: np.ndarray) -> str:
    """Run-length text of one configuration: lines of the last axis joined by ``$``."""
    state = np.asarray(state, dtype=bool)
    if state.ndim == 0:
        return ("o" if state else "b") + "!"
    lines = state.reshape(-1, state.shape[-1])
    return "$".join(_rle_row(line) for line in lines) + "!"


def decode_state(text: str, shape: Sequence[int]) -> np.ndarray:
    if not text.endswith("!"):
        raise ModelFileError(f"run-length state must end with '!': {text[:20]!r}")
    values: List[bool] = []
    for line in text[:-1].split("$"):
        count = ""
        for ch in line:
            if ch.isdigit():
                count += ch
            elif ch in "ob":
                values.extend([ch == "o"] * int(count or 1))
                count = ""
            else:
                raise ModelFileError(f"unexpected character {ch!r} in run-length state")
    return np.array(values, dtype=bool).reshape(tuple(shape))


def write_trajectory(path: Union[str, Path], trajectory: Trajectory, model: Model) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    window = trajectory.initial.window
    with path.open("w", encoding="utf-8") as f:
        f.write(schema_line("trajectory") + "\n")
        f.write(f"# measure_sha256={model.digest}\n")
        f.write(f"# seed={trajectory.seed}\n")
        f.write(f"# window={list(window.lo)}..{list(window.hi)}\n")
        f.write(f"# boundary={trajectory.initial.boundary.value}\n")
        for t in range(trajectory.T + 1):
            f.write(f"{t} {encode_state(trajectory.states[t])}\n")
    return path


def read_trajectory(path: Union[str, Path], shape: Sequence[int]) -> Tuple[Dict[str, str], np.ndarray]:
    meta: Dict[str, str] = {}
    states = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("# schema: "):
                meta["schema"] = line[len("# schema: "):]
            elif line.startswith("# "):
                key, value = line[2:].split("=", 1)
                meta[key] = value
            elif line:
                _, text = line.split(" ", 1)
                states.append(decode_state(text, shape))
    return meta, np.stack(states)
