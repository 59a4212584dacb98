"""Design-based inference for treatment effects under network interference."""

from .design import Design, draw_assignment, stream
from .estimators import ev_adjusted_indirect, ev_adjusted_total, ht_direct, ht_indirect, ht_total
from .graph import DirectedGraph, HiddenNetwork, density, from_edge_list, read_edge_list
from .model import Estimands, HateParameters, realize_outcomes, true_estimands
from .variance import EstimateReport, var_dir_hat, var_ev_hat, var_ind_hat, var_tot_hat, wald_ci

__version__ = "0.1.0"
