"""qnk: a desk-scale numerical laboratory for the quasineutral limit of the
1D Vlasov-Poisson equation.

Subpackages cover homogeneous velocity profiles and their stability
criteria, the linearized dispersion relation and unstable eigenmodes, a
semi-Lagrangian Vlasov-Poisson solver (electron, ion, and rescaled models),
conserved-quantity and modulated-energy diagnostics, BGK travelling waves,
and a command-line front end.  Public names are importable directly from
``qnk`` and resolve lazily to their home modules.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # profiles
    "ProfileSpec": "profiles",
    "PenroseReport": "profiles",
    "PenroseMinimum": "profiles",
    "DeltaReport": "profiles",
    "DeltaPrimeReport": "profiles",
    "SStableProfile": "profiles",
    "CasimirQ": "profiles",
    "eval_profile": "profiles",
    "check_penrose": "profiles",
    "check_alpha_penrose": "profiles",
    "check_delta_condition": "profiles",
    "check_delta_prime": "profiles",
    "build_s_stable": "profiles",
    "build_casimir": "profiles",
    # dispersion
    "DispersionRoot": "dispersion",
    "Eigenmode": "dispersion",
    "PLEMELJ_C": "dispersion",
    "eval_G": "dispersion",
    "eval_G_real": "dispersion",
    "eval_dispersion": "dispersion",
    "find_unstable_roots": "dispersion",
    "count_roots_winding": "dispersion",
    "build_eigenmode": "dispersion",
    "h2_xaverage_coefficient": "dispersion",
    # solver
    "PhaseGrid": "solver",
    "DistributionField": "solver",
    "FieldState": "solver",
    "ModelKind": "solver",
    "ScalingReport": "solver",
    "solve_poisson": "solver",
    "advect_x": "solver",
    "advect_v": "solver",
    "step": "solver",
    "make_perturbed_initial": "solver",
    "rescaling_maps": "solver",
    "write_snapshot": "solver",
    "read_snapshot": "solver",
    # diagnostics
    "DIAG_COLUMNS": "diagnostics",
    "DiagnosticsRecord": "diagnostics",
    "OscillationState": "diagnostics",
    "casimir_H": "diagnostics",
    "casimir_closed_form": "diagnostics",
    "diagnostics_record": "diagnostics",
    "append_diag_row": "diagnostics",
    "spectral_derivative": "diagnostics",
    "spectral_shift": "diagnostics",
    "ckp_check": "diagnostics",
    "modulated_energy": "diagnostics",
    "filtered_energy": "diagnostics",
    "q_moment": "diagnostics",
    "oscillation_filter": "diagnostics",
    "weak_norm_proxy": "diagnostics",
    "growth_fit": "diagnostics",
    # bgk
    "BoundaryData": "bgk",
    "PotentialWell": "bgk",
    "BGKWave": "bgk",
    "trapped_density": "bgk",
    "trapped_density_ion": "bgk",
    "ubar": "bgk",
    "assemble_wave": "bgk",
    "verify_neutrality": "bgk",
    "g_function": "bgk",
    "abel_invert_oracle": "bgk",
    "quad_identity_selftest": "bgk",
    # cli layer
    "Scenario": "config",
    "validate_config": "config",
    "ScenarioResult": "runner",
    "run_scenario": "runner",
    "run_all": "runner",
    "run_selftest": "runner",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    home = _EXPORTS.get(name)
    if home is None:
        raise AttributeError(f"module 'qnk' has no attribute {name!r}")
    module = importlib.import_module(f"qnk.{home}")
    value = getattr(module, name)
    globals()[name] = value
    return value


def __dir__():
    return __all__
