"""Time-of-flight force sensing with a levitated nanoparticle."""

from ._core import (
    ConvergenceError,
    DataError,
    Error,
    IoError,
    ParameterError,
    ProtocolConfig,
    SupportError,
    TruncationError,
    __version__,
    allan_deviation,
    fidelity,
    fisher_sensitivity,
    fit_gaussian,
    gaussian_density,
    prepared_quadratures,
    quadratures,
    reconstruct,
    run_protocol,
    sensitivity,
    simulate,
    squeezing_parameter,
    susceptibility,
    wigner,
    zero_point_bound,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
