# %% [markdown]
# # How many eigenvectors?
#
# On a stochastic block model graph the leading eigenvectors of E E^T carry
# the community structure. Adding more of them to the regression lowers the
# spread of the adjusted estimators while their bias grows.

# %%
import numpy as np

from hatenet.adjustment import top_k_spectrum
from hatenet.design import stream
from hatenet.generators import GraphonSpec, graphon_graph, scenario_graphon
from hatenet.montecarlo import run_replications

spec = GraphonSpec(
    n=500,
    rho_star=0.2,
    proportions=(0.5, 0.3, 0.2),
    block_matrix=((0.9, 0.1, 0.05), (0.1, 0.6, 0.1), (0.05, 0.1, 0.4)),
)
g = graphon_graph(spec.n, spec.rho_star, spec, stream(1, 0)).graph
basis = top_k_spectrum(g, 10)
print("eigenvalue decay:", np.round(basis.eigenvalues, 1), "next:", round(basis.next_eigenvalue_bound, 1))

# %%
for k in (-1, 0, 1, 3, 5):
    s = run_replications(scenario_graphon(spec, k), R=1000, master_seed=3).summary("EV_TOT")
    label = "none" if k < 0 else f"K={k}"
    print(f"{label:5s} bias {s.bias:+.3f}  sd {s.sd:.3f}  cp {s.cp:.3f}")
