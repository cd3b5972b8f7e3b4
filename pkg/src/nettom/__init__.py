"""Graph transport metrics and a deterministic cyber-defence game toolkit.

Subpackages by concern:

* ``graph_core``: topologies, shortest paths, high-value-node placement.
* ``transport``: exact unit-bounded transport metric and feature weighting.
* ``sinkhorn``: entropic-regularized loss with analytic gradients.
* ``cyberenv``: the attacker/defender game and trajectory recording.
* ``agents``: rule-based policy zoo and Dirichlet species sampling.
* ``dataset``: observer-sample construction with leakage-free splits.
* ``evalkit``: tournaments, prediction scoring, hedging analysis.
* ``cli``: the ``nettom`` command-line entry point.
"""

from . import agents, cyberenv, dataset, evalkit, graph_core, sinkhorn, transport

__all__ = [
    "agents",
    "cyberenv",
    "dataset",
    "evalkit",
    "graph_core",
    "sinkhorn",
    "transport",
]

__version__ = "0.1.0"
