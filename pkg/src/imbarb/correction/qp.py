"""Differentiable Euclidean projection of probability batches onto constraints.

Forward: per state, min ||p - x||^2 subject to the probability simplex and
the state's linear inequalities, solved exactly by enumerating candidate
active sets (3 variables, a handful of constraints) and checking primal and
dual feasibility.  States tied together by cross-state constraints are
solved by block-coordinate passes to a 1e-10 fixed point.

Backward: implicit differentiation of the active-set KKT system.  With the
active rows stacked as M (simplex row included), the solution map is locally
affine with Jacobian I - M^T (M M^T)^+ M; with no active inequality the
projection is locally the identity and gradients pass through unchanged.
Degenerate active sets fall back to the least-norm pseudoinverse solution
and are tallied on the returned info object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from imbarb.correction.constraints import ConstraintSet, InfeasibleConstraintsError

_PRIMAL_TOL = 1e-10
_DUAL_TOL = 1e-10
_DEGENERATE_TOL = 1e-9
_BLOCK_TOL = 1e-10
_BLOCK_CAP = 10_000

_SIG_CACHE: dict = {}
_SIG_CACHE_MAX = 256


@dataclass
class _Candidate:
    """Affine solution map for one active subset of a constraint signature."""

    rows: tuple[int, ...]
    proj: np.ndarray  # (3, 3) Jacobian / projector
    offset: np.ndarray  # (3,)
    mult_map: np.ndarray  # multipliers = mult_offset + mult_map @ x
    mult_offset: np.ndarray
    singular: bool
    m_rows: np.ndarray  # stacked active rows incl. simplex
    rhs: np.ndarray


@dataclass
class _Signature:
    """All candidate active sets for one per-state constraint structure."""

    g: np.ndarray  # (k, 3) inequality rows
    h: np.ndarray  # (k,) bounds
    candidates: list[_Candidate]


@dataclass
class ProjectionInfo:
    """Forward-solve record needed by the backward pass."""

    n_states: int
    jacobians: list = field(default_factory=list)  # per state: None (identity) or (3, 3)
    group_jacobians: list = field(default_factory=list)  # (state_indices, (3m, 3m))
    degenerate_count: int = 0


def _inequality_rows(constraints) -> tuple[np.ndarray, np.ndarray]:
    """Per-state constraint rows (k, 3) and bounds (k,), deterministic order."""
    keyed = []
    for c in constraints:
        row = np.zeros(3)
        for _, action, coeff in c.terms:
            row[action] += coeff
        keyed.append((tuple(row), c.bound))
    keyed.sort()
    if not keyed:
        return np.zeros((0, 3)), np.zeros(0)
    g = np.array([k[0] for k in keyed])
    h = np.array([k[1] for k in keyed])
    return g, h


def _build_signature(g: np.ndarray, h: np.ndarray) -> _Signature:
    """Enumerate active subsets: property rows plus the three nonnegativity rows."""
    k = len(g)
    all_rows = np.vstack([g, np.eye(3)])
    all_rhs = np.concatenate([h, np.zeros(3)])
    n_ineq = k + 3
    candidates = []
    indices = list(range(n_ineq))
    subsets = [()]
    for size in range(1, n_ineq + 1):
        subsets.extend(combinations(indices, size))
    for rows in subsets:
        m = np.vstack([np.ones((1, 3)), all_rows[list(rows)]])
        rhs = np.concatenate([[1.0], all_rhs[list(rows)]])
        mmt = m @ m.T
        singular = False
        try:
            mmt_inv = np.linalg.inv(mmt)
            if not np.isfinite(mmt_inv).all() or np.linalg.cond(mmt) > 1e12:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            mmt_inv = np.linalg.pinv(mmt)
            singular = True
        proj = np.eye(3) - m.T @ mmt_inv @ m
        offset = m.T @ mmt_inv @ rhs
        mult_map = -mmt_inv @ m
        mult_offset = mmt_inv @ rhs
        candidates.append(
            _Candidate(
                rows=rows,
                proj=proj,
                offset=offset,
                mult_map=mult_map,
                mult_offset=mult_offset,
                singular=singular,
                m_rows=m,
                rhs=rhs,
            )
        )
    return _Signature(g=g, h=h, candidates=candidates)


def _signature_for(g: np.ndarray, h: np.ndarray) -> _Signature:
    """Cached :func:`_build_signature`; constraint structures repeat heavily."""
    key = (g.tobytes(), h.tobytes(), g.shape[0])
    sig = _SIG_CACHE.get(key)
    if sig is None:
        sig = _build_signature(g, h)
        if len(_SIG_CACHE) < _SIG_CACHE_MAX:
            _SIG_CACHE[key] = sig
    return sig


def _solve_signature(sig: _Signature, x: np.ndarray):
    """Solve every state sharing one signature; x is (m, 3).

    Returns (solutions (m, 3), jacobian per state or None, degenerate flags).
    """
    m_states = len(x)
    all_rows = np.vstack([sig.g, np.eye(3)])
    all_rhs = np.concatenate([sig.h, np.zeros(3)])
    solutions = np.full((m_states, 3), np.nan)
    jacobians: list = [None] * m_states
    degenerate = np.zeros(m_states, dtype=bool)
    unsolved = np.ones(m_states, dtype=bool)
    for cand in sig.candidates:
        if not unsolved.any():
            break
        p = x @ cand.proj.T + cand.offset
        lam = x @ cand.mult_map.T + cand.mult_offset
        feasible = ((all_rows @ p.T).T - all_rhs >= -_PRIMAL_TOL).all(axis=1)
        dual_ok = (lam[:, 1:] >= -_DUAL_TOL).all(axis=1) if lam.shape[1] > 1 else np.ones(m_states, bool)
        if cand.singular:
            residual = np.abs((cand.m_rows @ p.T).T - cand.rhs).max(axis=1)
            consistent = residual <= 1e-9
        else:
            consistent = np.ones(m_states, dtype=bool)
        accept = unsolved & feasible & dual_ok & consistent
        if not accept.any():
            continue
        solutions[accept] = p[accept]
        slack = (all_rows @ p[accept].T).T - all_rhs
        inactive = np.ones(len(all_rows), dtype=bool)
        inactive[list(cand.rows)] = False
        if inactive.any():
            near = (np.abs(slack[:, inactive]) < _DEGENERATE_TOL).any(axis=1)
        else:
            near = np.zeros(accept.sum(), dtype=bool)
        for local, i in enumerate(np.nonzero(accept)[0]):
            jacobians[i] = None if not cand.rows else cand.proj
            degenerate[i] = bool(near[local]) or cand.singular
        unsolved[accept] = False
    if unsolved.any():
        i = int(np.nonzero(unsolved)[0][0])
        raise InfeasibleConstraintsError(
            f"no feasible projection for a state with rows {sig.g.tolist()} >= {sig.h.tolist()}"
        )
    return solutions, jacobians, degenerate


def _fold_cross_rows(cross, state: int, current: np.ndarray):
    """Cross-state rows seen from one state, other blocks frozen at ``current``."""
    rows = []
    bounds = []
    for c in cross:
        if state not in c.states:
            continue
        row = np.zeros(3)
        shift = 0.0
        for s, a, coeff in c.terms:
            if s == state:
                row[a] += coeff
            else:
                shift += coeff * current[s, a]
        rows.append(row)
        bounds.append(c.bound - shift)
    return rows, bounds


def _solve_single(g: np.ndarray, h: np.ndarray, x: np.ndarray):
    sig = _build_signature(g, h)
    sols, jacs, degen = _solve_signature(sig, x[None, :])
    return sols[0], jacs[0], bool(degen[0])


def project_policy_with_info(probs: np.ndarray, cset: ConstraintSet):
    """Project a (batch, 3) array of probability vectors; returns (out, info).

    The output rows satisfy the simplex and every constraint to 1e-9.  The
    info object carries active-set Jacobians for
    :func:`project_policy_backward`.
    """
    x = np.asarray(probs, dtype=np.float64)
    if x.ndim == 1:
        raise ValueError("probs must be a (batch, 3) array")
    if x.shape != (cset.n_states, 3):
        raise ValueError(f"probs shape {x.shape} does not match {cset.n_states} states")
    per_state, cross = cset.split_by_coupling()
    info = ProjectionInfo(n_states=cset.n_states)
    info.jacobians = [None] * cset.n_states
    out = x.copy()

    # group states by identical per-state constraint structure, solve vectorised
    coupled_states = set()
    for c in cross:
        coupled_states.update(c.states)
    by_sig: dict[tuple, list[int]] = {}
    sig_rows: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    for i in range(cset.n_states):
        if i in coupled_states:
            continue
        g, h = _inequality_rows(per_state.get(i, []))
        key = (g.tobytes(), h.tobytes(), g.shape[0])
        by_sig.setdefault(key, []).append(i)
        sig_rows[key] = (g, h)
    for key, states in by_sig.items():
        g, h = sig_rows[key]
        if len(g) == 0:
            # already on the simplex; projection is the identity
            continue
        sig = _signature_for(g, h)
        sols, jacs, degen = _solve_signature(sig, x[states])
        out[states] = sols
        for local, i in enumerate(states):
            info.jacobians[i] = jacs[local]
        info.degenerate_count += int(degen.sum())

    if cross:
        out, group_jacs, degen_extra = _solve_coupled(x, out, per_state, cross, coupled_states)
        info.group_jacobians = group_jacs
        info.degenerate_count += degen_extra
    return out, info


def _solve_coupled(x, out, per_state, cross, coupled_states):
    """Block-coordinate passes over states tied by cross-state constraints."""
    # union-find over states sharing a constraint
    parent = {s: s for s in coupled_states}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for c in cross:
        states = sorted(c.states)
        for s in states[1:]:
            parent[find(s)] = find(states[0])
    groups: dict[int, list[int]] = {}
    for s in coupled_states:
        groups.setdefault(find(s), []).append(s)

    group_jacs = []
    degenerate = 0
    for members in groups.values():
        members = sorted(members)
        rows_fixed = {s: _inequality_rows(per_state.get(s, [])) for s in members}
        current = out.copy()
        for s in members:
            g, h = rows_fixed[s]
            cg, ch = _fold_cross_rows(cross, s, current)
            gg = np.vstack([g] + [np.asarray(cg)]) if cg else g
            hh = np.concatenate([h, np.asarray(ch)]) if ch else h
            current[s], _, _ = _solve_single(gg, hh, x[s])
        for _ in range(_BLOCK_CAP):
            delta = 0.0
            for s in members:
                g, h = rows_fixed[s]
                cg, ch = _fold_cross_rows(cross, s, current)
                gg = np.vstack([g] + [np.asarray(cg)]) if cg else g
                hh = np.concatenate([h, np.asarray(ch)]) if ch else h
                new, _, _ = _solve_single(gg, hh, x[s])
                delta = max(delta, float(np.abs(new - current[s]).max()))
                current[s] = new
            if delta < _BLOCK_TOL:
                break
        else:
            raise RuntimeError("block-coordinate projection did not converge")
        for s in members:
            out[s] = current[s]
        # group Jacobian from the jointly active rows
        m_rows, rhs = _group_active_rows(members, per_state, cross, current)
        mmt = m_rows @ m_rows.T
        mmt_inv = np.linalg.pinv(mmt)
        if np.linalg.matrix_rank(mmt, tol=1e-10) < len(m_rows):
            degenerate += 1
        jac = np.eye(3 * len(members)) - m_rows.T @ mmt_inv @ m_rows
        group_jacs.append((members, jac))
    return out, group_jacs, degenerate


def _group_active_rows(members, per_state, cross, solution):
    """Stack simplex rows and active inequality rows over a coupled group."""
    index = {s: i for i, s in enumerate(members)}
    width = 3 * len(members)
    rows = []
    rhs = []
    for s in members:
        row = np.zeros(width)
        row[3 * index[s] : 3 * index[s] + 3] = 1.0
        rows.append(row)
        rhs.append(1.0)
    for s in members:
        g, h = _inequality_rows(per_state.get(s, []))
        for r, b in zip(g, h):
            if abs(float(r @ solution[s]) - b) <= _DEGENERATE_TOL:
                row = np.zeros(width)
                row[3 * index[s] : 3 * index[s] + 3] = r
                rows.append(row)
                rhs.append(b)
        for a in range(3):
            if abs(solution[s, a]) <= _DEGENERATE_TOL:
                row = np.zeros(width)
                row[3 * index[s] + a] = 1.0
                rows.append(row)
                rhs.append(0.0)
    for c in cross:
        if not c.states <= set(members):
            continue
        value = sum(coeff * solution[s, a] for s, a, coeff in c.terms)
        if abs(value - c.bound) <= _DEGENERATE_TOL:
            row = np.zeros(width)
            for s, a, coeff in c.terms:
                row[3 * index[s] + a] += coeff
            rows.append(row)
            rhs.append(c.bound)
    return np.array(rows), np.array(rhs)


def project_policy(probs: np.ndarray, cset: ConstraintSet) -> np.ndarray:
    """Forward projection only; see :func:`project_policy_with_info`."""
    out, _ = project_policy_with_info(probs, cset)
    return out


def project_policy_backward(info: ProjectionInfo, upstream: np.ndarray) -> np.ndarray:
    """Pull an upstream gradient back through the projection.

    States with no active inequality pass the gradient through unchanged;
    active states multiply by the (symmetric) KKT-restricted projector.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (info.n_states, 3):
        raise ValueError(f"upstream shape {upstream.shape} does not match projection")
    grad = upstream.copy()
    for i, jac in enumerate(info.jacobians):
        if jac is not None:
            grad[i] = jac @ upstream[i]
    for members, jac in info.group_jacobians:
        flat = upstream[members].reshape(-1)
        grad[members] = (jac @ flat).reshape(len(members), 3)
    return grad
