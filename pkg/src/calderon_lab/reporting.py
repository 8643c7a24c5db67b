"""Shared report containers, canonical JSON, hashing, and thread-pool helpers."""

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

THREADS_ENV = "CALDERON_LAB_THREADS"


@dataclass
class Condition:
    """One audited condition: an exact identity or a fitted constant."""

    name: str
    kind: str  # "exact" or "fitted"
    value: float  # max violation for exact, C_fit for fitted
    tolerance: float | None = None
    passed: bool | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"name": self.name, "kind": self.kind, "value": self.value}
        if self.tolerance is not None:
            out["tolerance"] = self.tolerance
        if self.passed is not None:
            out["passed"] = self.passed
        if self.details:
            out["details"] = self.details
        return out


@dataclass
class EstimateReport:
    """Audit result: a named list of conditions plus the sample census."""

    subject: str
    conditions: list = field(default_factory=list)
    census: dict = field(default_factory=dict)

    def add(self, name, kind, value, tolerance=None, details=None):
        # each condition appears exactly once; exact ones get a verdict
        if any(c.name == name for c in self.conditions):
            raise ValueError(f"duplicate condition {name!r}")
        if kind == "exact":
            if tolerance is None:
                raise ValueError(f"exact condition {name!r} needs a tolerance")
            passed = bool(value <= tolerance)
        else:
            passed = None
        cond = Condition(name, kind, float(value), tolerance, passed, details or {})
        self.conditions.append(cond)
        return cond

    def get(self, name):
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def all_exact_pass(self):
        return all(c.passed for c in self.conditions if c.kind == "exact")

    def to_dict(self):
        return json_safe(
            {
                "subject": self.subject,
                "conditions": [c.to_dict() for c in self.conditions],
                "census": self.census,
            }
        )


def json_safe(obj):
    """Recursively coerce numpy values and non-finite floats for strict JSON."""
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if hasattr(obj, "tolist"):
        return json_safe(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def fmt17(x):
    """Render a float with 17 significant digits (binary64 round-trips exactly)."""
    return format(float(x), ".17g")


def canonical_json(obj):
    """Deterministic JSON rendering: sorted keys, no whitespace drift."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def thread_count(cli_value=None):
    """Thread count: CLI flag wins, then the environment variable, then 1."""
    if cli_value:
        return max(1, int(cli_value))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def parallel_map(fn, items, threads=1):
    """Map preserving input order; results are identical for any thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
