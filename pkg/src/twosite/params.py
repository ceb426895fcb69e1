"""Physical parameters of the two-site CHP system and the parameter file loader.

Raw quantities follow the tabulated plant data: gas-turbine time constants and
ratings, swing-equation constants, network admittances, and the steam-loop
geometry.  A few scaling constants are not part of the plant data but fix the
nondimensionalisation of the heat subsystem and the electric per-unit system:

* ``Qr`` (MJ/s), ``hr`` (kJ/kg), ``rhor`` (kg/m^3): rated heat flow, enthalpy
  and density used to scale the pipe velocity w and the boiler pressures.
  They determine the boiler and pipe time constants
  Th_i = Qr e_i / (d^4 hr^2 rhor) and Th3 = d^2 L hr rhor / Qr and the
  velocity scale w_r = Qr / (d^2 hr rhor).
* ``Sbase`` (MW): base power of the electric per-unit system.  Mechanical
  ratings ``Ke_i`` are stored in MW and divided by ``Sbase`` before entering
  the swing equations.

Heat flows are carried in MJ/s throughout; electrical powers in per-unit;
angles in radians; the pipe velocity and boiler pressures in their scaled
units.  The infinite-bus voltage is taken as 1.0 p.u. and is absorbed into
the transfer admittances.
"""

import math
from dataclasses import dataclass, fields
from functools import cached_property
from importlib import resources

import numpy as np

from . import _jetcore as jc


class ParameterError(ValueError):
    """Raised when a parameter file is malformed or violates an invariant."""


@dataclass(frozen=True)
class SystemParams:
    """All constants of the two-site model, keyed like the parameter file."""

    # Gas turbines.
    Tv_1: float; Tv_2: float          # valve positioner time constants [s]
    Tf_1: float; Tf_2: float          # fuel system time constants [s]
    Tcd_1: float; Tcd_2: float        # compressor discharge time constants [s]
    Wo_1: float; Wo_2: float          # fuel valve lower limits [p.u.]
    Ke_1: float; Ke_2: float          # rated mechanical powers [MW]
    Kh_1: float; Kh_2: float          # rated heat outputs [MJ/s]
    beta_1: float; beta_2: float      # no-fuel heat coefficients [-]
    # Electric subsystem.
    omega_s: float                    # synchronous speed [rad/s]
    H_1: float; H_2: float            # inertia constants [s]
    D_1: float; D_2: float            # damping coefficients [p.u.]
    E_1: float; E_2: float            # generator voltages [p.u.]
    B_10: float; B_20: float          # transfer susceptances to infinite bus [p.u.]
    B_12: float                       # inter-site transfer susceptance [p.u.]
    G_10: float; G_20: float; G_12: float   # transfer conductances [p.u.]
    # Heat subsystem.
    p0: float                         # nominal boiler pressure [kPa]
    rho_s: float                      # saturated steam density [kg/m^3]
    h_s: float; h_w: float            # specific enthalpies of steam/water [kJ/kg]
    e_1: float; e_2: float            # pressure variation coefficients [J/Pa]
    d: float                          # pipe diameter [m]
    L: float                          # pipe length [m]
    lam: float                        # pipe friction coefficient [-]
    QL_1: float; QL_2: float          # heat loads [MJ/s]
    # Scaling constants (see module docstring).
    Qr: float                         # rated heat flow [MJ/s]
    hr: float                         # rated enthalpy [kJ/kg]
    rhor: float                       # rated density [kg/m^3]
    Sbase: float                      # electric per-unit base [MW]

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Check the physical invariants, reporting the offending key."""
        positive = ["Tv_1", "Tv_2", "Tf_1", "Tf_2", "Tcd_1", "Tcd_2",
                    "H_1", "H_2", "omega_s", "e_1", "e_2",
                    "d", "L", "rho_s", "lam",
                    "Qr", "hr", "rhor", "Sbase"]
        for key in positive:
            if not getattr(self, key) > 0.0:
                raise ParameterError(f"{key} = {getattr(self, key)!r}: must be > 0")
        for key in ("Wo_1", "Wo_2"):
            v = getattr(self, key)
            if not (0.0 <= v < 1.0):
                raise ParameterError(f"{key} = {v!r}: must satisfy 0 <= Wo < 1")
        if not self.h_s > self.h_w:
            raise ParameterError(
                f"h_s = {self.h_s!r}: must exceed h_w = {self.h_w!r}")
        for key in ("beta_1", "beta_2"):
            if getattr(self, key) <= -1.0:
                raise ParameterError(f"{key} = {getattr(self, key)!r}: must be > -1")

    # Derived scaling constants -------------------------------------------

    @cached_property
    def h_c(self):
        """Condensation enthalpy h_s - h_w [kJ/kg]."""
        return self.h_s - self.h_w

    @cached_property
    def w_r(self):
        """Velocity scale of the pipe flow [m/s]."""
        return self.Qr * 1e6 / (self.d ** 2 * self.hr * 1e3 * self.rhor)

    @cached_property
    def p_r(self):
        """Pressure scale of the boiler deviations [Pa]."""
        return self.rhor * self.w_r ** 2

    @cached_property
    def Th_1(self):
        """Boiler 1 time constant [s]."""
        return self.e_1 * self.p_r / (self.Qr * 1e6)

    @cached_property
    def Th_2(self):
        """Boiler 2 time constant [s]."""
        return self.e_2 * self.p_r / (self.Qr * 1e6)

    @cached_property
    def Th_3(self):
        """Pipe flow time constant [s]."""
        return self.L / self.w_r

    @cached_property
    def Te_1(self):
        """Rotor 1 time scale 1/sqrt(omega_s / 2 H_1) [s]."""
        return 1.0 / math.sqrt(self.omega_s / (2.0 * self.H_1))

    @cached_property
    def Te_2(self):
        return 1.0 / math.sqrt(self.omega_s / (2.0 * self.H_2))

    @cached_property
    def Ke1_pu(self):
        """Rated mechanical power of unit 1 in per-unit."""
        return self.Ke_1 / self.Sbase

    @cached_property
    def Ke2_pu(self):
        return self.Ke_2 / self.Sbase

    @cached_property
    def flow_coeff(self):
        """Pipe heat flow [MJ/s] per unit of scaled velocity."""
        return 0.25 * math.pi * (self.h_c / self.hr) * (self.rho_s / self.rhor) * self.Qr

    @cached_property
    def rho_ratio(self):
        """Scaled steam density rho_s / rhor appearing in the momentum balance."""
        return self.rho_s / self.rhor

    @cached_property
    def fric(self):
        """Friction factor lambda L / (2 d) of the pipe momentum balance."""
        return self.lam * self.L / (2.0 * self.d)

    @cached_property
    def pv(self):
        """Packed parameter vector consumed by the numba kernels."""
        v = np.zeros(jc.NPV)
        v[jc.PV_TV1] = self.Tv_1; v[jc.PV_TF1] = self.Tf_1; v[jc.PV_TCD1] = self.Tcd_1
        v[jc.PV_TV2] = self.Tv_2; v[jc.PV_TF2] = self.Tf_2; v[jc.PV_TCD2] = self.Tcd_2
        v[jc.PV_WO1] = self.Wo_1; v[jc.PV_WO2] = self.Wo_2
        v[jc.PV_KE1] = self.Ke1_pu; v[jc.PV_KE2] = self.Ke2_pu
        v[jc.PV_KH1] = self.Kh_1; v[jc.PV_KH2] = self.Kh_2
        v[jc.PV_BETA1] = self.beta_1; v[jc.PV_BETA2] = self.beta_2
        v[jc.PV_TE1] = self.Te_1; v[jc.PV_TE2] = self.Te_2
        v[jc.PV_D1] = self.D_1; v[jc.PV_D2] = self.D_2
        v[jc.PV_E1] = self.E_1; v[jc.PV_E2] = self.E_2
        v[jc.PV_B10] = self.B_10; v[jc.PV_B20] = self.B_20; v[jc.PV_B12] = self.B_12
        v[jc.PV_G10] = self.G_10; v[jc.PV_G20] = self.G_20; v[jc.PV_G12] = self.G_12
        v[jc.PV_QL1] = self.QL_1; v[jc.PV_QL2] = self.QL_2
        v[jc.PV_CH1] = 1.0 / (self.Th_1 * self.Qr)
        v[jc.PV_CH2] = 1.0 / (self.Th_2 * self.Qr)
        v[jc.PV_CH3] = 1.0 / ((self.Th_1 + self.Th_2) * self.Qr)
        v[jc.PV_ITH3] = 1.0 / self.Th_3
        v[jc.PV_IRHO] = 1.0 / self.rho_ratio
        v[jc.PV_FRIC] = self.fric
        v[jc.PV_FLOW] = self.flow_coeff
        v[jc.PV_GV1] = (1.0 - self.Wo_1) / self.Tv_1
        v[jc.PV_GV2] = (1.0 - self.Wo_2) / self.Tv_2
        v.flags.writeable = False
        return v

    def replace(self, **kw):
        """Copy with some raw fields replaced (derived values recomputed)."""
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(kw)
        return SystemParams(**data)

    @classmethod
    def table1(cls):
        """The canonical parameter set shipped with the package."""
        with resources.files("twosite.data").joinpath("params_table1.txt").open() as fh:
            return parse_params(fh.read(), source="params_table1.txt")


# Keys that may be omitted from a parameter file; values resolved at parse
# time ("h_c" means h_s - h_w from the same file).
_DEFAULTS = {"Qr": 6.0, "hr": "h_c", "rhor": "rho_s", "Sbase": 5.0}

# File keys mapped to dataclass fields ("lambda" is reserved in Python).
_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


def parse_params(text, source="<string>"):
    """Parse flat ``key = value`` parameter text into :class:`SystemParams`."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key in values:
            raise ParameterError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = float(val.strip())
        except ValueError:
            raise ParameterError(
                f"{source}:{lineno}: {key}: not a number: {val.strip()!r}") from None

    field_names = {f.name for f in fields(SystemParams)}
    kwargs = {}
    for key, val in values.items():
        name = _KEY_TO_FIELD.get(key, key)
        if name not in field_names:
            raise ParameterError(f"{source}: unknown key {key!r}")
        kwargs[name] = val
    for name, default in _DEFAULTS.items():
        if name not in kwargs:
            if default == "h_c":
                try:
                    kwargs[name] = kwargs["h_s"] - kwargs["h_w"]
                except KeyError as exc:
                    raise ParameterError(f"{source}: missing key {exc.args[0]!r}") from None
            elif default == "rho_s":
                try:
                    kwargs[name] = kwargs["rho_s"]
                except KeyError:
                    raise ParameterError(f"{source}: missing key 'rho_s'") from None
            else:
                kwargs[name] = default
    missing = sorted(field_names - set(kwargs))
    if missing:
        key = _FIELD_TO_KEY.get(missing[0], missing[0])
        raise ParameterError(f"{source}: missing key {key!r}")
    return SystemParams(**kwargs)


def load_params(path):
    """Load a parameter file, validating all invariants."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_params(fh.read(), source=str(path))
