"""Equilibrium positions and normal modes of linear mixed-species ion crystals.

The trap is described by the single-ion frequencies of a reference species.
Other species scale as::

    wz(s)   = wz_ref * sqrt((q/q_ref) * (m_ref/m))
    wp(s)   = wp_ref * (q/q_ref) * (m_ref/m)          # rf pseudopotential
    wx,y(s) = sqrt(wp(s)**2 - wz(s)**2 / 2)           # static defocusing

Coordinates inside the solver are dimensionless: lengths in units of
``l = (e / (4 pi eps0 C))**(1/3)`` with ``C`` the static axial curvature
(V/m^2), energies in units of ``e C l**2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import CONSTANTS, IonSpecies, get_species
from .errors import ConfigError, NoConvergence, NonPositiveRadial, UnknownMode, UnstableMode

AXES = ("x", "y", "z")
MAX_IONS = 10
_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TrapConfig:
    reference_species: str
    axial_freq_ref: float  # MHz
    radial_pseudo_freq_x_ref: float  # MHz
    radial_pseudo_freq_y_ref: float  # MHz

    def __post_init__(self):
        for name in ("axial_freq_ref", "radial_pseudo_freq_x_ref", "radial_pseudo_freq_y_ref"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True)
class CrystalConfig:
    species_order: tuple[str, ...]
    registry: dict | None = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "species_order", tuple(self.species_order))
        if len(self.species_order) == 0:
            raise ConfigError("species_order must be non-empty")
        if len(self.species_order) > MAX_IONS:
            raise ConfigError(f"at most {MAX_IONS} ions supported")
        for label in self.species_order:
            get_species(label, self.registry)

    @property
    def species(self) -> list[IonSpecies]:
        return [get_species(s, self.registry) for s in self.species_order]

    def __len__(self):
        return len(self.species_order)


@dataclass
class Mode:
    frequency: float  # MHz
    axis: str
    participation: np.ndarray
    label: str


@dataclass
class ModeTable:
    modes: list[Mode]
    equilibrium_positions: np.ndarray  # um
    species: list[IonSpecies]

    _ALIASES = {"zs": "zo", "xr": "xo", "yr": "yo", "zo": "zs", "xo": "xr", "yo": "yr"}

    def __iter__(self):
        return iter(self.modes)

    def __len__(self):
        return len(self.modes)

    @property
    def labels(self) -> list[str]:
        return [m.label for m in self.modes]

    def get(self, label: str) -> Mode:
        """Return the mode with ``label``; ``zs``/``zo`` style aliases are accepted."""
        for m in self.modes:
            if m.label == label:
                return m
        alt = self._ALIASES.get(label)
        for m in self.modes:
            if m.label == alt:
                return m
        raise UnknownMode(f"no mode labelled {label!r}; have {self.labels}")

    def axis_modes(self, axis: str) -> list[Mode]:
        return [m for m in self.modes if m.axis == axis]

    def participation_matrix(self, axis: str) -> np.ndarray:
        """Columns are the participation vectors of the modes along ``axis``."""
        return np.column_stack([m.participation for m in self.axis_modes(axis)])


def _charge_mass_ratios(species: IonSpecies, ref: IonSpecies) -> tuple[float, float]:
    return species.charge / ref.charge, ref.mass / species.mass


def single_ion_frequencies(species: IonSpecies, trap: TrapConfig, registry=None):
    """Secular frequencies (wx, wy, wz) in MHz of one ion of ``species``.

    Raises
    ------
    NonPositiveRadial
        If the pseudopotential is too weak to overcome the static defocusing.
    """
    ref = get_species(trap.reference_species, registry)
    if species == ref:
        return _reference_radials(trap)
    q, m = _charge_mass_ratios(species, ref)
    wz = trap.axial_freq_ref * np.sqrt(q * m)
    radial = []
    for wp_ref in (trap.radial_pseudo_freq_x_ref, trap.radial_pseudo_freq_y_ref):
        w2 = (q * m * wp_ref) ** 2 - 0.5 * wz**2
        if w2 <= 0:
            raise NonPositiveRadial(f"radial frequency^2 <= 0 for {species.label}")
        radial.append(float(np.sqrt(w2)))
    return radial[0], radial[1], float(wz)


def _reference_radials(trap: TrapConfig):
    wz = trap.axial_freq_ref
    out = []
    for wp in (trap.radial_pseudo_freq_x_ref, trap.radial_pseudo_freq_y_ref):
        w2 = wp**2 - 0.5 * wz**2
        if w2 <= 0:
            raise NonPositiveRadial("radial frequency^2 <= 0 for the reference species")
        out.append(float(np.sqrt(w2)))
    return out[0], out[1], float(wz)


def _axial_curvature(trap: TrapConfig, ref: IonSpecies) -> float:
    """Static axial potential curvature C in V/m^2."""
    w = _TWO_PI * trap.axial_freq_ref * 1e6
    return ref.mass_kg * w**2 / ref.charge_c


def _length_scale(curvature: float) -> float:
    return (CONSTANTS.coulomb * CONSTANTS.elementary_charge / curvature) ** (1.0 / 3.0)


def _forces(u: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    coul = (q[:, None] * q[None, :]) * np.sign(d) / d**2
    return -q * u + coul.sum(axis=1)


def _axial_hessian(u: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, np.inf)
    k = 2.0 * q[:, None] * q[None, :] / d**3
    h = -k
    h[np.diag_indices_from(h)] = q + k.sum(axis=1)
    return h


def _radial_coulomb(u: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, np.inf)
    k = q[:, None] * q[None, :] / d**3
    h = k.copy()
    h[np.diag_indices_from(h)] = -k.sum(axis=1)
    return h


def _solve_dimensionless(q: np.ndarray, max_iter: int = 200, tol: float = 1e-12) -> np.ndarray:
    n = len(q)
    if n == 1:
        return np.zeros(1)
    spacing = 2.018 / n**0.559
    u = (np.arange(n) - 0.5 * (n - 1)) * spacing
    f = _forces(u, q)
    for _ in range(max_iter):
        if np.max(np.abs(f)) < tol:
            return u
        step = np.linalg.solve(_axial_hessian(u, q), f)
        lam, norm0 = 1.0, np.linalg.norm(f)
        while True:
            trial = u + lam * step
            if np.all(np.diff(trial) > 0):
                f_trial = _forces(trial, q)
                if np.linalg.norm(f_trial) < norm0 or lam < 1e-3:
                    break
            lam *= 0.5
            if lam < 1e-8:
                raise NoConvergence("damped Newton step failed to keep ions ordered")
        u, f = trial, f_trial
    if np.max(np.abs(f)) < tol:
        return u
    raise NoConvergence(f"equilibrium not found in {max_iter} Newton steps")


def equilibrium_positions(crystal: CrystalConfig, trap: TrapConfig) -> np.ndarray:
    """Axial equilibrium positions in um, ordered along z."""
    ref = get_species(trap.reference_species, crystal.registry)
    q = np.array([s.charge for s in crystal.species], dtype=float)
    u = _solve_dimensionless(q)
    return u * _length_scale(_axial_curvature(trap, ref)) * 1e6


def _fix_sign(v: np.ndarray) -> np.ndarray:
    for x in v:
        if abs(x) > 1e-9:
            return v if x > 0 else -v
    return v


def _eigen(hessian: np.ndarray, masses: np.ndarray):
    hm = hessian / np.sqrt(np.outer(masses, masses))
    hm = 0.5 * (hm + hm.T)
    w2, vecs = np.linalg.eigh(hm)
    if np.any(w2 <= 0):
        raise UnstableMode("mass-weighted Hessian has a non-positive eigenvalue")
    vecs = np.array([_fix_sign(vecs[:, k]) for k in range(vecs.shape[1])]).T
    # order by frequency, ties by participation
    keys = [(float(f"{w2[k]:.9e}"), tuple(np.round(vecs[:, k], 10))) for k in range(len(w2))]
    order = sorted(range(len(w2)), key=lambda k: keys[k])
    return w2[order], vecs[:, order]


def _labels(axis: str, vectors: np.ndarray, species: list[IonSpecies]) -> list[str]:
    n = vectors.shape[0]
    if n == 2:
        same = species[0] == species[1]
        out = []
        for k in range(2):
            in_phase = vectors[0, k] * vectors[1, k] > 0
            if in_phase:
                out.append(axis + ("c" if same else "i"))
            else:
                out.append(axis + ({"z": "s", "x": "r", "y": "r"}[axis] if same else "o"))
        return out
    if n == 3 and species[0] == species[2]:
        out = []
        for k in range(3):
            v = vectors[:, k]
            if abs(v[1]) < 1e-8:
                name = "st"
            elif np.all(v > 0):
                name = "ip"
            else:
                name = "al"
            out.append(name if axis == "z" else axis + name)
        if len(set(out)) == 3:
            return out
    return [f"{axis}{k + 1}" for k in range(n)]


def mode_table(crystal: CrystalConfig, trap: TrapConfig) -> ModeTable:
    """Normal modes of a linear crystal along all three principal axes.

    Each axis block is the eigen-decomposition of the mass-weighted Hessian at
    equilibrium. Participation vectors are normalized and signed so that the
    first non-zero entry is positive.
    """
    species = crystal.species
    ref = get_species(trap.reference_species, crystal.registry)
    masses = np.array([s.mass_kg for s in species])
    q = np.array([s.charge for s in species], dtype=float)

    single = [single_ion_frequencies(s, trap, crystal.registry) for s in species]
    for s, (wx, wy, wz) in zip(species, single):
        if min(wx, wy) <= wz:
            raise ConfigError(f"{s.label}: radial frequency must exceed axial frequency "
                              "for a linear crystal")

    u = _solve_dimensionless(q)
    curvature = _axial_curvature(trap, ref)
    spring = CONSTANTS.elementary_charge * curvature  # N/m per unit charge

    blocks = {"z": spring * _axial_hessian(u, q)}
    coul = spring * _radial_coulomb(u, q)
    for idx, axis in enumerate(("x", "y")):
        w = _TWO_PI * 1e6 * np.array([f[idx] for f in single])
        blocks[axis] = np.diag(masses * w**2) + coul

    modes = []
    for axis in AXES:
        w2, vecs = _eigen(blocks[axis], masses)
        labels = _labels(axis, vecs, species)
        for k in range(len(w2)):
            modes.append(Mode(float(np.sqrt(w2[k]) / _TWO_PI / 1e6), axis,
                              vecs[:, k].copy(), labels[k]))
    positions = u * _length_scale(curvature) * 1e6
    return ModeTable(modes, positions, species)


def crystal_from_labels(labels: Sequence[str], registry=None) -> CrystalConfig:
    return CrystalConfig(tuple(labels), registry)
