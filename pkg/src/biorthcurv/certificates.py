"""Certificate serialization and comparison.

Certificates are JSON documents with sorted keys and floats written by
``repr`` (shortest round-trip decimal), so identical runs give identical bytes.
Non-finite floats are stored as the strings "nan", "inf", "-inf".
"""

from __future__ import annotations

import dataclasses
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .config import TOL

SCHEMA_VERSION = 1

EXIT_PASS = 0
EXIT_NUMERIC = 2
EXIT_RESOLUTION = 3
EXIT_CONFIG = 4

STATUS_EXIT = {"pass": EXIT_PASS, "numeric-failure": EXIT_NUMERIC, "insufficient-resolution": EXIT_RESOLUTION}


class SchemaMismatch(ValueError):
    pass


def jsonable(obj):
    """Recursively convert numpy values, dataclasses and tuples into JSON-ready data."""
    if hasattr(obj, "as_dict"):
        return jsonable(obj.as_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def engine_versions():
    from . import __version__

    return {
        "biorthcurv": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def make_certificate(kind, config, results, status="pass", failures=None, wall_clock=None):
    if status not in STATUS_EXIT:
        raise ValueError(f"unknown status {status!r}")
    cert = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "status": status,
        "exit_code": STATUS_EXIT[status],
        "failures": list(failures or []),
        "config": config,
        "tolerances": TOL.as_dict(),
        "results": results,
        "versions": engine_versions(),
    }
    if wall_clock is not None:
        cert["wall_clock"] = wall_clock
    return jsonable(cert)


def dumps(cert) -> str:
    return json.dumps(jsonable(cert), sort_keys=True, indent=1) + "\n"


def write(cert, path):
    Path(path).write_text(dumps(cert))


def load(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# diff
# ---------------------------------------------------------------------------

# result subtrees that hold search witnesses rather than headline numbers
WITNESS_KEYS = {"argmin", "argmin_s0", "witness", "pair", "plane", "history", "worst_boxes", "argmin_point", "argmin_plane", "records", "zeros", "spheres", "invariants"}
TOLERANCE_CLASSES = {"headline": (1e-9, 1e-12), "witness": (1e-6, 1e-9)}
IGNORED = {"wall_clock"}


@dataclass
class DiffEntry:
    path: str
    klass: str  # config-drift, value-drift, environment
    a: object
    b: object

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class DiffReport:
    entries: list = field(default_factory=list)

    @property
    def config_drift(self):
        return [e for e in self.entries if e.klass == "config-drift"]

    @property
    def value_drift(self):
        return [e for e in self.entries if e.klass == "value-drift"]

    @property
    def exit_code(self):
        return EXIT_NUMERIC if self.value_drift else EXIT_PASS

    def lines(self):
        return [f"{e.klass}: {e.path}: {e.a!r} -> {e.b!r}" for e in self.entries]


def _section_class(path):
    head = path[0] if path else ""
    if head in ("config", "tolerances"):
        return "config-drift"
    if head == "versions":
        return "environment"
    return "value-drift"


def _tol_class(path):
    return "witness" if any(p in WITNESS_KEYS for p in path) else "headline"


def _close(a, b, klass):
    rtol, atol = TOLERANCE_CLASSES[klass]
    return abs(a - b) <= atol + rtol * max(abs(a), abs(b))


def _walk(a, b, path, out):
    if path and path[-1] in IGNORED:
        return
    if isinstance(a, dict) and isinstance(b, dict):
        for k in sorted(set(a) | set(b)):
            if k in IGNORED:
                continue
            if k not in a or k not in b:
                out.append(DiffEntry(".".join(path + [k]), _section_class(path + [k]), a.get(k), b.get(k)))
            else:
                _walk(a[k], b[k], path + [k], out)
        return
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            out.append(DiffEntry(".".join(path), _section_class(path), f"len {len(a)}", f"len {len(b)}"))
            return
        for i, (x, y) in enumerate(zip(a, b)):
            _walk(x, y, path + [str(i)], out)
        return
    num = (int, float)
    if isinstance(a, num) and isinstance(b, num) and not isinstance(a, bool) and not isinstance(b, bool):
        klass = _section_class(path)
        if klass == "value-drift":
            if not _close(float(a), float(b), _tol_class(path)):
                out.append(DiffEntry(".".join(path), klass, a, b))
        elif a != b:
            out.append(DiffEntry(".".join(path), klass, a, b))
        return
    if a != b:
        out.append(DiffEntry(".".join(path), _section_class(path), a, b))


def diff_certificates(a, b) -> DiffReport:
    """Field-by-field comparison; config/tolerance changes are config drift, result changes value drift."""
    va, vb = a.get("schema_version"), b.get("schema_version")
    if va != vb or va != SCHEMA_VERSION:
        raise SchemaMismatch(f"schema versions {va!r} and {vb!r} (expected {SCHEMA_VERSION})")
    out = []
    _walk(a, b, [], out)
    return DiffReport(out)
