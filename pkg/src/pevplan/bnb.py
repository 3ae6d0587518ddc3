"""Best-first branch and bound over binary variables of a conic program.

Relaxations are solved by :func:`pevplan.conic.solve_socp`.  Node order,
branching variable selection and tie-breaking are all deterministic, so
repeated runs on the same program return the same incumbent.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .conic import INF, ConicProgram, MixedConicProgram, SocpResult, solve_socp
from .errors import SolverError


@dataclass
class BnbResult:
    status: str                 # optimal | infeasible | unbounded | node_limit
    x: np.ndarray | None
    objective: float | None
    bound: float                # proven lower bound on the optimum
    gap: float                  # relative incumbent-bound gap at exit
    nodes: int
    relaxation: SocpResult | None = None


def _with_bounds(prog: ConicProgram, lo: dict[int, float], hi: dict[int, float]) -> ConicProgram:
    lb = prog.lb.copy()
    ub = prog.ub.copy()
    for i, v in lo.items():
        lb[i] = v
    for i, v in hi.items():
        ub[i] = v
    return ConicProgram(prog.num_vars, prog.objective, prog.A, prog.b,
                        nonneg=prog.nonneg, soc=prog.soc, lb=lb, ub=ub,
                        obj_const=prog.obj_const)


def _pick_branch(x: np.ndarray, binaries: list[int], tol: float) -> int | None:
    """Most fractional binary; ties broken by lowest variable index."""
    best, best_frac = None, tol
    for i in sorted(binaries):
        frac = min(x[i], 1.0 - x[i])
        if frac > best_frac + 1e-12:
            best, best_frac = i, frac
    return best


def branch_and_bound(mp: MixedConicProgram, rel_gap: float = 0.005,
                     tol: float = 1e-8, max_nodes: int = 50000,
                     integrality_tol: float = 1e-6) -> BnbResult:
    """Minimize a mixed-binary SOCP to the requested relative gap."""
    prog = mp.program
    binaries = sorted(set(mp.binary))
    if not binaries:
        res = solve_socp(prog, tol=tol)
        obj = res.objective if res.status == "optimal" else None
        return BnbResult(res.status if res.status != "failed" else "node_limit",
                         res.x, obj, obj if obj is not None else -INF,
                         0.0 if obj is not None else INF, 1, res)

    incumbent_x = None
    incumbent = INF
    incumbent_rel = None
    nodes_solved = 0
    next_id = 0
    # heap entries: (parent bound estimate, node id, lo overrides, hi overrides)
    heap: list[tuple[float, int, dict, dict]] = [(-INF, next_id, {}, {})]

    def current_gap(bound: float) -> float:
        if incumbent is INF:
            return INF
        return (incumbent - bound) / max(1.0, abs(incumbent))

    bound_at_exit = None
    while heap:
        est, _, lo, hi = heapq.heappop(heap)
        if current_gap(est) <= rel_gap:
            # every remaining node has relaxation bound >= est
            bound_at_exit = est
            break
        if nodes_solved >= max_nodes:
            return BnbResult("node_limit", incumbent_x,
                             incumbent if incumbent_x is not None else None,
                             est, current_gap(est), nodes_solved, incumbent_rel)
        res = solve_socp(_with_bounds(prog, lo, hi), tol=tol)
        nodes_solved += 1
        if res.status == "infeasible":
            continue
        if res.status == "unbounded":
            if not lo and not hi:
                return BnbResult("unbounded", None, None, -INF, INF,
                                 nodes_solved, res)
            raise SolverError("unbounded relaxation at an interior node")
        if res.status == "failed":
            raise SolverError(
                "relaxation solve failed (residuals "
                f"{res.primal_residual:.2e}/{res.dual_residual:.2e})")
        bound = res.objective
        if bound >= incumbent - 1e-9 * max(1.0, abs(incumbent)):
            continue
        j = _pick_branch(res.x, binaries, integrality_tol)
        if j is None:
            x = res.x.copy()
            for i in binaries:
                x[i] = round(x[i])
            if bound < incumbent:
                incumbent, incumbent_x, incumbent_rel = bound, x, res
            continue
        for fix in (0.0, 1.0):
            next_id += 1
            lo2, hi2 = dict(lo), dict(hi)
            if fix == 0.0:
                hi2[j] = 0.0
            else:
                lo2[j] = 1.0
            heapq.heappush(heap, (bound, next_id, lo2, hi2))

    if incumbent_x is None:
        return BnbResult("infeasible", None, None, INF, INF, nodes_solved, None)
    if bound_at_exit is not None:
        bound = min(bound_at_exit, incumbent)
    else:
        # the tree was exhausted: the incumbent is proven optimal
        bound = incumbent
    return BnbResult("optimal", incumbent_x, incumbent, bound,
                     current_gap(bound), nodes_solved, incumbent_rel)
