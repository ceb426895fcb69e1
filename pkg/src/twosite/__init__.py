"""Two-site combined heat and power system: model, analysis, and control.

Two CHP plants (gas turbine + synchronous generator + heat recovery boiler)
are coupled to an infinite bus through a transmission network and to each
other through a steam pipe.  The package provides

* the 13-state nonlinear model (``model``, ``params``),
* Lie-derivative machinery based on Taylor jets (``jets``),
* normal-form coordinate maps and singularity diagnostics (``normal_form``),
* zero-dynamics simulation and stability matrices (``zero_dynamics``),
* equilibrium / reference-condition solvers and scans (``analysis``),
* the output-redefinition tracking controller (``controller``),
* an adaptive Runge-Kutta integration front end (``sim``),
* a batch command-line interface (``cli``).
"""

__version__ = "0.1.0"

from .params import SystemParams, load_params, ParameterError

__all__ = ["SystemParams", "load_params", "ParameterError", "__version__"]
