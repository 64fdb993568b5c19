"""Reference trap settings and measured fit rows for the three standard crystals.

The trap settings are calibrated so the computed modes land on the measured
frequencies. Fit rows hold reference fit values and their 68% half-widths.
"""
from __future__ import annotations

from dataclasses import dataclass

from .cooling import CsbcPulse, Delay, ModeRates, Schedule, Swap
from .crystal import CrystalConfig, TrapConfig
from .spectro import FreqScanParams, TimeScanParams

BE_BE_TRAP = TrapConfig("Be9+", 3.639616096971401, 8.71008019480877, 7.829762256927091)
BE_MG_TRAP = TrapConfig("Be9+", 3.1565341530306776, 13.503573123598562, 12.39435389275868)
# only the axial modes of this crystal are used; radial settings just keep it linear
BE_MG_BE_TRAP = TrapConfig("Be9+", 1.9479798082457953, 12.0, 11.0)

BE_BE = CrystalConfig(("Be9+", "Be9+"))
BE_MG = CrystalConfig(("Be9+", "Mg25+"))
BE_MG_BE = CrystalConfig(("Be9+", "Mg25+", "Be9+"))

CRYSTALS = {
    "Be-Be": (BE_BE, BE_BE_TRAP),
    "Be-Mg": (BE_MG, BE_MG_TRAP),
    "Be-Mg-Be": (BE_MG_BE, BE_MG_BE_TRAP),
}

# label -> (frequency MHz, participation of each ion); the Be-Mg radial
# frequencies follow the text (xo 4.48, yo 4.04 MHz)
MEASURED_MODES = {
    "Be-Be": {"zs": (6.304, (0.707, -0.707)), "xr": (7.483, (0.707, -0.707)),
              "yr": (6.437, (0.707, -0.707))},
    "Be-Mg": {"zo": (4.722, (0.930, -0.368)), "xo": (4.48, (0.022, -0.999)),
              "yo": (4.04, (0.022, -0.999))},
    "Be-Mg-Be": {"ip": (1.501, (0.396, 0.828, 0.396)), "st": (3.374, (-0.707, 0.0, 0.707)),
                 "al": (3.655, (0.586, -0.560, 0.586))},
}


@dataclass(frozen=True)
class FitRow:
    crystal: str
    pair: str
    measured: str
    values: dict
    widths: dict

    def freq_params(self) -> FreqScanParams:
        return FreqScanParams(**self.values)

    def time_params(self) -> TimeScanParams:
        return TimeScanParams(**self.values)


def _freq(crystal, pair, measured, A, r0, tau, dws, p0):
    names = ("A", "r0", "tau", "delta_ws", "P0")
    vals = dict(zip(names, (A[0], r0[0], tau[0], dws[0], p0[0])))
    wid = dict(zip(names, (A[1], r0[1], tau[1], dws[1], p0[1])))
    return FitRow(crystal, pair, measured, vals, wid)


def _time(crystal, pair, measured, A, r0, phi, decay_ms, y0):
    # the source column is a decay time; the model takes its inverse
    gamma = 1.0 / decay_ms[0]
    gamma_w = decay_ms[1] / decay_ms[0] ** 2
    names = ("A", "r0", "phi", "gamma", "y0")
    vals = dict(zip(names, (A[0], r0[0], phi[0], gamma, y0[0])))
    wid = dict(zip(names, (A[1], r0[1], phi[1], gamma_w, y0[1])))
    return FitRow(crystal, pair, measured, vals, wid)


FREQ_SCAN_ROWS = (
    _freq("Be-Be", "zs-yr", "zs", (1.2, 0.1), (7, 2), (67, 5), (0.1394, 0.0003), (0.07, 0.03)),
    _freq("Be-Be", "zs-yr", "yr", (-1.29, 0.07), (8, 1), (65, 3), (0.1393, 0.0002), (1.36, 0.02)),
    _freq("Be-Be", "zs-xr", "zs", (1.1, 0.2), (4, 1), (96, 5), (0.1386, 0.0001), (0.21, 0.01)),
    _freq("Be-Be", "zs-xr", "xr", (-1.1, 0.1), (3.6, 0.6), (84, 3), (0.1386, 0.0002), (1.34, 0.02)),
    _freq("Be-Mg", "zo-yo", "zo", (-0.79, 0.03), (5.2, 0.4), (101, 3), (0.7116, 0.0001),
          (0.944, 0.007)),
    _freq("Be-Mg", "zo-xo", "zo", (-0.97, 0.02), (5.4, 0.3), (98, 2), (0.2485, 0.0001),
          (0.976, 0.005)),
)

TIME_SCAN_ROWS = (
    _time("Be-Be", "zs-yr", "zs", (1.20, 0.06), (7.84, 0.06), (-1.38, 0.06), (1.5, 0.8), (0.67, 0.01)),
    _time("Be-Be", "zs-yr", "yr", (1.34, 0.04), (7.91, 0.04), (1.66, 0.04), (2.6, 1.6), (0.69, 0.01)),
    _time("Be-Be", "zs-xr", "zs", (1.12, 0.08), (4.70, 0.05), (-1.42, 0.08), (1.3, 0.5), (0.68, 0.01)),
    _time("Be-Be", "zs-xr", "xr", (1.10, 0.06), (4.77, 0.06), (1.64, 0.06), (3.7, 3.0), (0.78, 0.01)),
    _time("Be-Mg", "zo-yo", "zo", (0.78, 0.06), (10.1, 0.1), (1.58, 0.01), (1.4, 1.1), (0.514, 0.009)),
    _time("Be-Mg", "zo-xo", "zo", (0.88, 0.04), (10.5, 0.1), (1.42, 0.06), (16, 83), (0.502, 0.006)),
)

# anomalous heating of the Be-Mg out-of-phase modes, quanta/s
BE_MG_HEATING = {"xo": 5.0, "yo": 330.0, "zo": 20.0}
# steady-state occupations reached by the repeated Be-Mg sequence
BE_MG_STEADY_STATE = {"xo": 0.03, "yo": 0.23, "zo": 0.11}

# cross-Kerr couplings of zs to the rocking modes, Hz
CHI_ZS_XR = 75.86
CHI_ZS_YR = 95.4

# driven-motion amplitude per unit exchange rate, nm/kHz, before and after compensation
BETA_UNCOMPENSATED = 101.0
BETA_COMPENSATED = 12.6

# Be-Mg cycle: two cooling pulses on zo, swaps into xo then yo, a final zo pulse
# and 130 us for in-phase cooling and overhead (455 us in total)
BE_MG_ZO_CSBC_RATE = 11450.0  # 1/s, calibrated against the measured steady state
BE_MG_ZO_FLOOR = 0.0177


def be_mg_rates():
    return {"xo": ModeRates(BE_MG_HEATING["xo"]), "yo": ModeRates(BE_MG_HEATING["yo"]),
            "zo": ModeRates(BE_MG_HEATING["zo"], BE_MG_ZO_CSBC_RATE, BE_MG_ZO_FLOOR)}


def be_mg_cycle(swap_fidelity: float = 0.99):
    return Schedule((CsbcPulse("zo", 150.0), Swap(("zo", "xo"), 50.0, swap_fidelity),
                     Swap(("zo", "yo"), 50.0, swap_fidelity), CsbcPulse("zo", 75.0), Delay(130.0)))
