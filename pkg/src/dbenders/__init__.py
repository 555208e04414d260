"""Disjunctive Benders decomposition for mixed-integer linear programs.

The package is organized around a small LP engine (:mod:`dbenders.lp`), a
deterministic branch-and-bound driver (:mod:`dbenders.bnb`), classical Benders
machinery (:mod:`dbenders.benders`), the disjunctive cut-generating core
(:mod:`dbenders.dcglp`), mixed-binary enhancements (:mod:`dbenders.mbp`),
benchmark generators plus a brute-force reference solver
(:mod:`dbenders.problems`), and a CLI/reporting harness
(:mod:`dbenders.harness`).
"""

from dbenders.lp import LpModel, LpOutcome, solve_lp, add_rows_and_resolve

__all__ = [
    "LpModel",
    "LpOutcome",
    "solve_lp",
    "add_rows_and_resolve",
]
