"""Random walks in static and cooling random environments."""

__version__ = "0.1.0"

from .env import (  # noqa: E402
    AlphaDistribution,
    CoolingMap,
    Environment,
    rho_moments,
    sample_environment,
    solve_s,
    speed,
    validate_alpha,
)
from .walk import (  # noqa: E402
    Censored,
    LatticePmf,
    Trajectory,
    evolve_pmf,
    quenched_logmgf,
    rwcre_pmf,
    rwcre_sample,
    sample_hitting,
    sample_path,
)
from .ratefn import (  # noqa: E402
    GridFunction,
    empirical_block_rate,
    hitting_cf_step,
    hitting_logmgf_rate,
    istar_from_I,
    jstar_curve,
    jtilde,
    legendre,
    rate_chain,
    rate_I_from_J,
)
