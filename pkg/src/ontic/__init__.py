"""Discretized wavefunctionals and the counting of ontic states."""

__version__ = "0.1.0"

from .configspace import (  # noqa: E402
    ConfigLabel,
    ConfigSpace,
    MacroPartition,
    define_macropartition,
    macro_measure,
    new_config_space,
    uniform_space,
)
from .state import (  # noqa: E402
    FieldRep,
    GaugeState,
    StateVector,
    absorb_phases,
    born_probability,
    from_amplitudes,
    inner_product,
    polar_decompose,
    reconstruct,
    to_field_rep,
)
from .counting import (  # noqa: E402
    CountReport,
    RefinementPartition,
    build_refinement,
    count_estimate,
    eigen_component_count,
    naive_branch_count,
    orbit_overcount_demo,
)
