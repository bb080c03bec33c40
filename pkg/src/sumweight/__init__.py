"""Sum-weight gossip averaging: simulation and spectral convergence analysis."""

from .engine import Mode, run, run_batch
from .graph import Graph, complete_graph, connected_rgg, from_edge_list, generate_rgg, is_connected
from .models import (
    UpdateMatrixSet,
    broadcast_gossip_set,
    bwgossip_failure_set,
    bwgossip_set,
    check_assumptions,
    pushsum_kempe_set,
    random_gossip_set,
)
from .spectral import kappa

__version__ = "0.1.0"
