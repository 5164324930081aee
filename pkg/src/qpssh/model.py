"""Quasiperiodic non-Hermitian SSH chain.

Sites are ordered A1, B1, A2, B2, ... so that bond ``m`` (1-based) joins
sites ``m`` and ``m + 1``. Odd bonds are intracell (t1), even bonds are
intercell (t2 plus the quasiperiodic term).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

GOLDEN_BETA = (math.sqrt(5.0) - 1.0) / 2.0

PARAM_KEYS = ("t1", "t2", "w1", "w2", "gamma", "beta", "n_cells")
REQUIRED_KEYS = ("t1", "t2", "w1", "w2", "gamma", "n_cells")


class InvalidParameterError(ValueError):
    """Raised for model parameters outside their valid domain."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ModelParams:
    t1: float
    t2: float
    w1: float
    w2: float
    gamma: float
    n_cells: int
    beta: float = GOLDEN_BETA

    def __post_init__(self):
        for key in ("t1", "t2", "w1", "w2", "gamma", "beta"):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
                raise InvalidParameterError(key, f"expected a real number, got {value!r}")
            if not math.isfinite(value):
                raise InvalidParameterError(key, "must be finite")
            object.__setattr__(self, key, float(value))
        n = self.n_cells
        if isinstance(n, float) and n.is_integer():
            n = int(n)
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise InvalidParameterError("n_cells", f"expected an integer, got {self.n_cells!r}")
        if n < 2:
            raise InvalidParameterError("n_cells", "must be >= 2")
        object.__setattr__(self, "n_cells", int(n))
        if not 0.0 < self.beta < 1.0:
            raise InvalidParameterError("beta", "must lie in (0, 1)")

    @property
    def L(self) -> int:
        return 2 * self.n_cells

    def replace(self, **changes) -> "ModelParams":
        values = asdict(self)
        values.update(changes)
        return ModelParams(**values)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data) -> "ModelParams":
        """Build from a mapping, rejecting missing or unknown keys."""
        missing = [k for k in REQUIRED_KEYS if k not in data]
        if missing:
            raise InvalidParameterError(missing[0], "missing required key")
        unknown = [k for k in data if k not in PARAM_KEYS]
        if unknown:
            raise InvalidParameterError(unknown[0], "unknown key")
        values = {k: data[k] for k in PARAM_KEYS if k in data}
        for key, value in list(values.items()):
            if isinstance(value, str):
                try:
                    values[key] = int(value) if key == "n_cells" else float(value)
                except ValueError:
                    raise InvalidParameterError(key, f"cannot parse {value!r}") from None
        return cls(**values)


def parse_key_value(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = line.split("=", 1)
        elif ":" in line:
            key, value = line.split(":", 1)
        else:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path) -> dict:
    """Read a JSON or key-value text file into a dict."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    return parse_key_value(text)


def load_params(path) -> ModelParams:
    return ModelParams.from_mapping(read_config_file(path))


def _complex_cos(x: float, gamma: float) -> complex:
    return complex(math.cos(x) * math.cosh(gamma), -math.sin(x) * math.sinh(gamma))


def bond_amplitude(params: ModelParams, m: int) -> complex:
    """Hopping amplitude on chain bond ``m`` (1-based, 1 <= m <= 2N-1)."""
    N = params.n_cells
    if not 1 <= m <= 2 * N - 1:
        raise IndexError(f"bond index {m} outside 1..{2 * N - 1}")
    if m % 2 == 1:
        return complex(params.t1)
    n = m // 2
    if n % 2 == 1:
        k = (n + 1) // 2
        if k <= math.ceil(N / 2):
            return params.t2 + params.w1 * _complex_cos(2 * math.pi * params.beta * k, params.gamma)
        return complex(params.t2)
    k = n // 2
    if k <= math.ceil((N + 1) / 2) - 1:
        return params.t2 + params.w2 * _complex_cos(2 * math.pi * params.beta * k, params.gamma)
    return complex(params.t2)


def bond_amplitudes(params: ModelParams) -> np.ndarray:
    """All 2N-1 bond amplitudes, vectorised; agrees with :func:`bond_amplitude`."""
    N = params.n_cells
    bonds = np.empty(2 * N - 1, dtype=complex)
    bonds[0::2] = params.t1
    n = np.arange(1, N)
    odd = n % 2 == 1
    k = np.where(odd, (n + 1) // 2, n // 2)
    cap = np.where(odd, math.ceil(N / 2), math.ceil((N + 1) / 2) - 1)
    strength = np.where(odd, params.w1, params.w2)
    phase = 2 * np.pi * params.beta * k
    cosine = np.cos(phase) * np.cosh(params.gamma) - 1j * np.sin(phase) * np.sinh(params.gamma)
    bonds[1::2] = params.t2 + np.where(k <= cap, strength * cosine, 0.0)
    return bonds


@dataclass(frozen=True)
class Hamiltonian:
    """Open-chain Hamiltonian stored by its bond amplitudes.

    ``bonds[i]`` is ``H[i, i+1] == H[i+1, i]`` (0-based); the diagonal is zero.
    """

    params: ModelParams
    bonds: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.bonds.size + 1

    @property
    def site_labels(self) -> list[tuple[int, str]]:
        return [(i // 2 + 1, "AB"[i % 2]) for i in range(self.dim)]

    @property
    def matrix(self) -> np.ndarray:
        H = np.zeros((self.dim, self.dim), dtype=complex)
        idx = np.arange(self.dim - 1)
        H[idx, idx + 1] = self.bonds
        H[idx + 1, idx] = self.bonds
        return H

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """``H @ v`` in O(L) per column."""
        b = self.bonds if v.ndim == 1 else self.bonds[:, None]
        out = np.zeros_like(v, dtype=complex)
        out[:-1] += b * v[1:]
        out[1:] += b * v[:-1]
        return out

    def norm(self) -> float:
        """1-norm (equal to the inf-norm here); an upper bound on the 2-norm."""
        a = np.abs(self.bonds)
        col = np.zeros(self.dim)
        col[:-1] += a
        col[1:] += a
        return float(col.max())

    def to_csv(self, path) -> None:
        """Write nonzero entries as (row, col, re, im) triplets, 0-based."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "re", "im"])
            for i, b in enumerate(self.bonds):
                writer.writerow([i, i + 1, repr(float(b.real)), repr(float(b.imag))])
                writer.writerow([i + 1, i, repr(float(b.real)), repr(float(b.imag))])


def build_hamiltonian(params: ModelParams) -> Hamiltonian:
    bonds = bond_amplitudes(params)
    bonds.setflags(write=False)
    return Hamiltonian(params=params, bonds=bonds)


def chiral_signs(L: int) -> np.ndarray:
    if L <= 0 or L % 2:
        raise ValueError(f"chiral operator needs an even positive dimension, got {L}")
    return np.where(np.arange(L) % 2 == 0, 1.0, -1.0)


def chiral_operator(L: int) -> np.ndarray:
    """Sublattice operator diag(1, -1, 1, -1, ...)."""
    return np.diag(chiral_signs(L))
