"""Normal-incidence transfer-matrix optics for thin-film detector stacks.

Fields are propagated with 2x2 characteristic matrices (time dependence
exp(-i*omega*t), complex index N = n + i*k). Admittances are expressed in
units of the free-space admittance, so a medium's optical admittance is N.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np


class DispersionRangeError(ValueError):
    """Wavelength outside the tabulated range of a dispersion table."""


@dataclass(frozen=True)
class DispersionTable:
    """Tabulated optical constants, linearly interpolated in wavelength."""

    wavelength_nm: tuple[float, ...]
    n: tuple[float, ...]
    k: tuple[float, ...]
    name: str = "material"

    def __post_init__(self):
        wl = np.asarray(self.wavelength_nm, dtype=float)
        if len(wl) < 2:
            raise ValueError(f"{self.name}: dispersion table needs at least 2 samples")
        if not (len(wl) == len(self.n) == len(self.k)):
            raise ValueError(f"{self.name}: wavelength, n and k columns differ in length")
        if np.any(wl <= 0) or np.any(np.diff(wl) <= 0):
            raise ValueError(f"{self.name}: wavelengths must be positive and strictly increasing")
        if np.any(np.asarray(self.k, dtype=float) < 0):
            raise ValueError(f"{self.name}: k must be >= 0 (passive media only)")

    @classmethod
    def from_arrays(cls, wavelength_nm, n, k, name="material") -> "DispersionTable":
        return cls(
            tuple(float(x) for x in wavelength_nm),
            tuple(float(x) for x in n),
            tuple(float(x) for x in k),
            name,
        )

    @classmethod
    def constant(cls, n: float, k: float = 0.0, name: str = "constant",
                 bounds_nm: tuple[float, float] = (1.0, 1.0e6)) -> "DispersionTable":
        return cls((bounds_nm[0], bounds_nm[1]), (n, n), (k, k), name)

    @property
    def bounds_nm(self) -> tuple[float, float]:
        return self.wavelength_nm[0], self.wavelength_nm[-1]

    @property
    def lossless(self) -> bool:
        return all(v == 0.0 for v in self.k)

    def covers(self, wavelength_nm: float) -> bool:
        lo, hi = self.bounds_nm
        return lo <= wavelength_nm <= hi

    def index(self, wavelength_nm: float) -> complex:
        """Complex refractive index n + ik at one wavelength (no extrapolation)."""
        if not self.covers(wavelength_nm):
            lo, hi = self.bounds_nm
            raise DispersionRangeError(
                f"{wavelength_nm} nm is outside the '{self.name}' table range [{lo}, {hi}] nm"
            )
        n = np.interp(wavelength_nm, self.wavelength_nm, self.n)
        k = np.interp(wavelength_nm, self.wavelength_nm, self.k)
        return complex(float(n), float(k))

    def permittivity(self, wavelength_nm: float) -> complex:
        return self.index(wavelength_nm) ** 2


VACUUM = DispersionTable.constant(1.0, 0.0, name="vacuum")


def read_dispersion(path, name: str | None = None) -> DispersionTable:
    """Read a whitespace-separated ``wavelength_nm n k`` file; '#' lines are comments."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'wavelength_nm n k', got {line!r}")
            rows.append([float(p) for p in parts])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows)
    return DispersionTable.from_arrays(data[:, 0], data[:, 1], data[:, 2],
                                       name=name or Path(path).stem)


def write_dispersion(table: DispersionTable, path, comment: str = "") -> None:
    with open(path, "w") as fh:
        for line in comment.splitlines():
            fh.write(f"# {line}\n")
        fh.write("# columns: wavelength_nm n k\n")
        for w, n, k in zip(table.wavelength_nm, table.n, table.k):
            fh.write(f"{w!r} {n!r} {k!r}\n")


_BUNDLED = {"si": "si.txt", "sio2": "sio2.txt", "nbn": "nbn.txt"}


def load_material(name: str) -> DispersionTable:
    """Bundled table by name (``Si``, ``SiO2``, ``NbN``, ``vacuum``) or a file path."""
    key = name.lower()
    if key in ("vacuum", "air"):
        return VACUUM
    if key in _BUNDLED:
        ref = resources.files("sspdsim.data").joinpath(_BUNDLED[key])
        with resources.as_file(ref) as p:
            return read_dispersion(p, name=name)
    p = Path(name)
    if p.exists():
        return read_dispersion(p)
    raise ValueError(f"unknown material {name!r}; bundled: Si, SiO2, NbN, vacuum, or a dispersion file path")


@dataclass(frozen=True)
class Layer:
    thickness_nm: float
    dispersion: DispersionTable
    fill_factor: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.thickness_nm < 0:
            raise ValueError("layer thickness must be >= 0")
        if not 0.0 < self.fill_factor <= 1.0:
            raise ValueError("fill_factor must be in (0, 1]")

    @property
    def label(self) -> str:
        return self.name or self.dispersion.name

    def effective_index(self, wavelength_nm: float) -> complex:
        """Index of the layer homogenised with vacuum by permittivity averaging."""
        try:
            eps = self.dispersion.permittivity(wavelength_nm)
        except DispersionRangeError as err:
            raise DispersionRangeError(f"layer '{self.label}': {err}") from None
        if self.fill_factor == 1.0:
            return self.dispersion.index(wavelength_nm)
        eps_eff = self.fill_factor * eps + (1.0 - self.fill_factor)
        n = cmath.sqrt(eps_eff)
        # principal root already has Re >= 0; keep Im >= 0 for a passive medium
        return n if n.imag >= 0 else -n


@dataclass(frozen=True)
class LayerStack:
    ambient: DispersionTable
    layers: tuple[Layer, ...]
    substrate: DispersionTable

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.ambient.lossless:
            raise ValueError("ambient medium must be lossless for R and T to be defined")


def default_stack(fill_factor: float = 0.6, nbn_nm: float = 4.0, spacer_nm: float = 160.0) -> LayerStack:
    """NbN meander on a SiO2 spacer over a semi-infinite Si substrate, lit from vacuum."""
    return LayerStack(
        ambient=VACUUM,
        layers=(
            Layer(nbn_nm, load_material("NbN"), fill_factor, name="NbN"),
            Layer(spacer_nm, load_material("SiO2"), 1.0, name="SiO2"),
        ),
        substrate=load_material("Si"),
    )


@dataclass
class StackResponse:
    wavelength_nm: float
    R: float
    T: float
    absorption_per_layer: list[float] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.R + self.T + sum(self.absorption_per_layer)


def _matrix(N: complex, thickness_nm: float, wavelength_nm: float):
    if thickness_nm == 0.0:
        return (1.0 + 0j, 0j, 0j, 1.0 + 0j)
    delta = 2.0 * cmath.pi * N * thickness_nm / wavelength_nm
    c, s = cmath.cos(delta), cmath.sin(delta)
    return (c, -1j * s / N, -1j * N * s, c)


def characteristic_matrix(layer: Layer, wavelength_nm: float) -> np.ndarray:
    """2x2 characteristic matrix of one layer at normal incidence.

    Maps (E, H) at the layer's lower boundary to (E, H) at its upper boundary.
    A zero-thickness layer gives the identity.
    """
    N = layer.effective_index(wavelength_nm)
    return np.array(_matrix(N, layer.thickness_nm, wavelength_nm), dtype=complex).reshape(2, 2)


def stack_response(stack: LayerStack, wavelength_nm: float) -> StackResponse:
    """Reflectance, transmittance into the substrate, and per-layer absorption."""
    N0 = stack.ambient.index(wavelength_nm).real
    Ns = stack.substrate.index(wavelength_nm)

    # walk up from the substrate, recording (E, H) at every boundary
    E, H = 1.0 + 0j, Ns
    fields = [(E, H)]
    for layer in reversed(stack.layers):
        N = layer.effective_index(wavelength_nm)
        m00, m01, m10, m11 = _matrix(N, layer.thickness_nm, wavelength_nm)
        E, H = m00 * E + m01 * H, m10 * E + m11 * H
        fields.append((E, H))
    fields.reverse()

    B, C = fields[0]
    r = (N0 * B - C) / (N0 * B + C)
    incident = abs(N0 * B + C) ** 2 / (4.0 * N0)
    flux = [(e * h.conjugate()).real / incident for e, h in fields]
    absorption = [flux[i] - flux[i + 1] for i in range(len(stack.layers))]
    return StackResponse(float(wavelength_nm), abs(r) ** 2, flux[-1], absorption)


def absorption_spectrum(stack: LayerStack, wavelengths: Sequence[float]) -> list[StackResponse]:
    if len(wavelengths) == 0:
        raise ValueError("wavelength list is empty")
    out = []
    for i, wl in enumerate(wavelengths):
        try:
            out.append(stack_response(stack, float(wl)))
        except DispersionRangeError as err:
            raise DispersionRangeError(f"wavelength index {i}: {err}") from None
    return out


def fresnel_reflectance(n1: complex, n2: complex) -> float:
    """Single-interface normal-incidence reflectance."""
    return abs((n1 - n2) / (n1 + n2)) ** 2
