"""sandlab: Abelian sandpile model toolkit on finite boxes of Z^d.

Toppling engine with exact avalanche accounting, burning-algorithm
recurrence tests, exact determinant/Green-function identities, Wilson
spanning-tree samplers, the height/tree bijection, wave decomposition,
and a reproducible Monte Carlo experiment harness.
"""

__version__ = "0.1.0"

from .engine import (
    AvalancheReport,
    Configuration,
    add,
    add_inverse,
    config,
    markov_step,
    poisson_run,
    stabilize,
    topple,
)
from .lattice import (
    Volume,
    cube,
    green_function,
    green_function_exact,
    make_volume,
    recurrent_count_via_det,
    removal_ratio,
    toppling_matrix,
)
from .recurrence import BurnResult, burning_test, enumerate_recurrent, sample_recurrent
from .trees import (
    SINK,
    Forest,
    component_of,
    config_to_tree,
    loop_erase,
    tree_to_config,
    wilson_two_component,
    wilson_ust,
)
from .waves import WaveDecomposition, decompose_waves, wave_operator, wave_tree

__all__ = [
    "AvalancheReport",
    "BurnResult",
    "Configuration",
    "Forest",
    "SINK",
    "Volume",
    "WaveDecomposition",
    "add",
    "add_inverse",
    "burning_test",
    "component_of",
    "config",
    "config_to_tree",
    "cube",
    "decompose_waves",
    "enumerate_recurrent",
    "green_function",
    "green_function_exact",
    "loop_erase",
    "make_volume",
    "markov_step",
    "poisson_run",
    "recurrent_count_via_det",
    "removal_ratio",
    "sample_recurrent",
    "stabilize",
    "topple",
    "toppling_matrix",
    "tree_to_config",
    "wave_operator",
    "wave_tree",
    "wilson_two_component",
    "wilson_ust",
]
