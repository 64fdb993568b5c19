"""Physical constants and ion species."""
from __future__ import annotations

from dataclasses import dataclass

import scipy.constants as sc

from .errors import ConfigError


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = sc.hbar
    elementary_charge: float = sc.e
    atomic_mass_unit: float = sc.physical_constants["atomic mass constant"][0]
    vacuum_permittivity: float = sc.epsilon_0

    @property
    def coulomb(self) -> float:
        """Coulomb constant 1/(4 pi eps0) in N m^2 / C^2."""
        return 1.0 / (4.0 * sc.pi * self.vacuum_permittivity)


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class IonSpecies:
    label: str
    mass: float  # u
    charge: int = 1  # units of e

    def __post_init__(self):
        if not self.mass > 0:
            raise ConfigError(f"species {self.label!r}: mass must be positive")
        if int(self.charge) != self.charge or self.charge < 1:
            raise ConfigError(f"species {self.label!r}: charge must be an integer >= 1")

    @property
    def mass_kg(self) -> float:
        return self.mass * CONSTANTS.atomic_mass_unit

    @property
    def charge_c(self) -> float:
        return self.charge * CONSTANTS.elementary_charge


# isotopic masses, electron mass not subtracted
BE9 = IonSpecies("Be9+", 9.0121831, 1)
MG25 = IonSpecies("Mg25+", 24.9858370, 1)

SPECIES = {s.label: s for s in (BE9, MG25)}
# short aliases accepted in configs
SPECIES_ALIASES = {"Be": BE9, "Be+": BE9, "9Be+": BE9, "Mg": MG25, "Mg+": MG25, "25Mg+": MG25}


def get_species(label: str, registry: dict | None = None) -> IonSpecies:
    """Look up a species by label or alias, optionally in a user registry."""
    if registry and label in registry:
        return registry[label]
    if label in SPECIES:
        return SPECIES[label]
    if label in SPECIES_ALIASES:
        return SPECIES_ALIASES[label]
    raise ConfigError(f"unknown ion species {label!r}")
