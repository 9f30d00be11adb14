"""Unit conversions. Everything internal is CGS (g, cm, s, dyn/cm^2)."""

MMHG = 1333.22  # dyn/cm^2 per mmHg


def mmhg_to_cgs(p):
    return p * MMHG


def cgs_to_mmhg(p):
    return p / MMHG
