"""KL-divergence-preserving meta-path subset selection.

The full path set induces a transition distribution between target nodes:
row softmax of the aggregated affinity, with self-transitions pinned to
zero. A weight vector w in [0, 1]^M induces the same construction on the
weighted affinity. Selection minimizes KL(P || Q(w)) plus an L1 penalty
that drives redundant weights to zero; an L1 strength search then hits a
requested subset size. A brute-force enumerator over exact-size subsets
serves as the verification oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError, ResourceLimitError
from .pathcount import AffinityStack, subset_indicator

__all__ = [
    "OptimizerConfig",
    "SelectionResult",
    "TransitionModel",
    "build_transition_model",
    "transition_from_affinity",
    "transitions_for_weights",
    "kl_objective",
    "regularized_objective",
    "gradient",
    "project_box",
    "minimize",
    "select_for_size",
    "brute_force_subset",
]


def transition_from_affinity(affinity: np.ndarray) -> np.ndarray:
    """Row-stochastic transition matrix from a dense affinity matrix.

    p_ij = exp(a_ij) / sum_{k != i} exp(a_ik) for j != i, p_ii = 0.
    Rows are shifted by their off-diagonal maximum before exponentiation.
    """
    A = np.asarray(affinity, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"affinity must be square, got shape {A.shape}")
    n = A.shape[0]
    if n < 2:
        raise ValueError("need at least 2 nodes for transition probabilities")
    B = A.copy()
    np.fill_diagonal(B, -np.inf)
    B -= B.max(axis=1, keepdims=True)
    E = np.exp(B)  # diagonal becomes exp(-inf) = 0
    return E / E.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class TransitionModel:
    """Transition distribution of the full path set."""

    P: np.ndarray


def build_transition_model(stack: AffinityStack) -> TransitionModel:
    return TransitionModel(P=transition_from_affinity(stack.aggregate.toarray()))


def transitions_for_weights(stack: AffinityStack, weights) -> np.ndarray:
    """Transition matrix under a per-path weight vector."""
    return transition_from_affinity(stack.weighted_sum(weights).toarray())


def kl_objective(P: np.ndarray, Q: np.ndarray) -> float:
    """sum_ij p_ij log(p_ij / q_ij), with 0 log 0 = 0."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {Q.shape}")
    mask = P > 0
    p = P[mask]
    with np.errstate(divide="ignore"):
        return float(np.sum(p * (np.log(p) - np.log(Q[mask]))))


def regularized_objective(stack: AffinityStack, weights, lam: float) -> float:
    """KL to the full-set transitions plus lam times the weight sum."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    P = build_transition_model(stack).P
    Q = transitions_for_weights(stack, weights)
    w = np.asarray(weights, dtype=np.float64)
    return kl_objective(P, Q) + lam * float(w.sum())


def gradient(stack: AffinityStack, weights, lam: float) -> np.ndarray:
    """Analytic gradient of the regularized objective.

    Component m is -sum_{i, j != i} (p_ij - q_ij) s_ij^(m) + lam.
    """
    P = build_transition_model(stack).P
    Q = transitions_for_weights(stack, weights)
    G = P - Q
    g = np.array([-(mat.multiply(G)).sum() for mat in stack.per_path])
    return g + lam


def project_box(weights) -> np.ndarray:
    """Componentwise clamp to [0, 1]."""
    return np.clip(np.asarray(weights, dtype=np.float64), 0.0, 1.0)


@dataclass(frozen=True)
class OptimizerConfig:
    lam: float = 0.0
    max_iters: int = 500
    grad_tol: float = 1e-6
    initial_step: float = 1.0
    backtrack_factor: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 40
    memory: int = 10
    selection_threshold: float = 0.9
    rng_seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0 < self.selection_threshold < 1:
            raise ValueError("selection_threshold must lie strictly inside (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie strictly inside (0, 1)")
        if self.initial_step <= 0 or self.sufficient_decrease <= 0:
            raise ValueError("step parameters must be positive")


@dataclass
class SelectionResult:
    weights: np.ndarray
    selected: list[int]
    objective_trace: list[float]
    kl: float
    lam: float
    fallback_used: bool = False
    converged: bool = False

    def to_report(self, metapath_names: list[str] | None = None) -> dict:
        return {
            "weights": [float(v) for v in self.weights],
            "selected": [int(i) for i in self.selected],
            "lambda": float(self.lam),
            "kl": float(self.kl),
            "trace": [float(v) for v in self.objective_trace],
            "fallback_used": bool(self.fallback_used),
            "metapaths": list(metapath_names) if metapath_names is not None else [],
        }


class _Objective:
    """Cached evaluation of the regularized objective for one stack."""

    def __init__(self, stack: AffinityStack, lam: float):
        self.stack = stack
        self.lam = lam
        self.P = build_transition_model(stack).P
        mask = self.P > 0
        self._mask = mask
        self._p = self.P[mask]
        self._plogp = float(np.sum(self._p * np.log(self._p)))

    def kl(self, weights: np.ndarray) -> float:
        Q = transitions_for_weights(self.stack, weights)
        return self._plogp - float(np.sum(self._p * np.log(Q[self._mask])))

    def value(self, weights: np.ndarray) -> float:
        return self.kl(weights) + self.lam * float(weights.sum())

    def value_and_grad(self, weights: np.ndarray) -> tuple[float, np.ndarray]:
        Q = transitions_for_weights(self.stack, weights)
        f = (
            self._plogp
            - float(np.sum(self._p * np.log(Q[self._mask])))
            + self.lam * float(weights.sum())
        )
        G = self.P - Q
        g = np.array([-(mat.multiply(G)).sum() for mat in self.stack.per_path])
        return f, g + self.lam


def _two_loop_direction(g: np.ndarray, pairs: list[tuple]) -> np.ndarray:
    """Limited-memory quasi-Newton direction from curvature pairs (s, y)."""
    if not pairs:
        return -g
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s_last, y_last, _ = pairs[-1]
    q *= float(s_last @ y_last) / float(y_last @ y_last)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def minimize(
    stack: AffinityStack,
    config: OptimizerConfig | None = None,
    w0: np.ndarray | None = None,
) -> SelectionResult:
    """Projected quasi-Newton descent on the regularized objective.

    Starts from all-ones weights (the full set, where the KL term is zero)
    unless w0 is given. Each iteration takes a limited-memory quasi-Newton
    direction, backtracks along the projected path until a sufficient
    decrease holds, and falls back to projected steepest descent when the
    quasi-Newton direction yields no acceptable step. Curvature pairs
    without positive curvature are discarded. Stops when the projected
    gradient residual ||project(w - g) - w||_inf falls below grad_tol or
    after max_iters accepted steps. Deterministic for fixed inputs.
    """
    if config is None:
        config = OptimizerConfig()
    if stack.n_paths < 1:
        raise ValueError("stack has no meta-paths")
    prob = _Objective(stack, config.lam)
    M = stack.n_paths
    w = np.ones(M) if w0 is None else project_box(w0)

    f, g = prob.value_and_grad(w)
    if not np.isfinite(f):
        raise NumericalError("non-finite objective at iteration 0")
    trace = [f]
    pairs: list[tuple] = []

    def residual(w_cur: np.ndarray, g_cur: np.ndarray) -> float:
        return float(np.max(np.abs(project_box(w_cur - g_cur) - w_cur)))

    def line_search(direction: np.ndarray, iteration: int):
        step = config.initial_step
        for _ in range(config.max_backtracks):
            w_new = project_box(w + step * direction)
            delta = w_new - w
            if not delta.any():
                return None  # projection absorbed the whole step
            dec = float(g @ delta)
            f_new = prob.value(w_new)
            if not np.isfinite(f_new):
                raise NumericalError(
                    f"non-finite objective at iteration {iteration}"
                )
            if dec < 0 and f_new <= f + config.sufficient_decrease * dec:
                return w_new, f_new
            step *= config.backtrack_factor
        return None

    converged = False
    for iteration in range(1, config.max_iters + 1):
        if residual(w, g) <= config.grad_tol:
            converged = True
            break
        accepted = line_search(_two_loop_direction(g, pairs), iteration)
        if accepted is None and pairs:
            accepted = line_search(-g, iteration)
        if accepted is None:
            break  # no descent step available at this accuracy
        w_new, f_new = accepted
        _, g_new = prob.value_and_grad(w_new)
        s_vec = w_new - w
        y_vec = g_new - g
        sy = float(s_vec @ y_vec)
        if sy > 1e-10 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            pairs.append((s_vec, y_vec, 1.0 / sy))
            if len(pairs) > config.memory:
                pairs.pop(0)
        w, f, g = w_new, f_new, g_new
        trace.append(f)
    else:
        converged = residual(w, g) <= config.grad_tol

    selected = sorted(int(i) for i in np.nonzero(w > config.selection_threshold)[0])
    return SelectionResult(
        weights=w,
        selected=selected,
        objective_trace=trace,
        kl=prob.kl(w),
        lam=config.lam,
        converged=converged,
    )


def select_for_size(
    stack: AffinityStack,
    size: int,
    config: OptimizerConfig | None = None,
    *,
    log10_lambda_range: tuple[float, float] = (-6.0, 3.0),
    max_bisect_steps: int = 40,
) -> SelectionResult:
    """Search the L1 strength until exactly `size` weights clear the threshold.

    Bisection runs over log10(lambda) with warm starts from the previous
    solution. If no lambda in the bracket yields the exact count, the run
    whose count is closest falls back to its top `size` weights (descending
    weight, then ascending index) and the result is flagged.
    """
    if config is None:
        config = OptimizerConfig()
    M = stack.n_paths
    if not 1 <= size <= M:
        raise ValueError(f"size must be in [1, {M}], got {size}")

    def run(lam: float, warm: np.ndarray | None) -> SelectionResult:
        return minimize(stack, replace(config, lam=lam), w0=warm)

    res = run(0.0, None)
    if len(res.selected) == size:
        return res

    # (|count - size|, -count, lambda) ranks fallback candidates
    def rank(r: SelectionResult) -> tuple:
        return (abs(len(r.selected) - size), -len(r.selected), r.lam)

    best = res
    lo, hi = log10_lambda_range
    res_lo = run(10.0**lo, res.weights)
    if len(res_lo.selected) == size:
        return res_lo
    best = min(best, res_lo, key=rank)
    res_hi = run(10.0**hi, res_lo.weights)
    if len(res_hi.selected) == size:
        return res_hi
    best = min(best, res_hi, key=rank)

    prev = res_hi
    if len(res_lo.selected) > size > len(res_hi.selected):
        for _ in range(max_bisect_steps):
            mid = 0.5 * (lo + hi)
            res_mid = run(10.0**mid, prev.weights)
            prev = res_mid
            count = len(res_mid.selected)
            if count == size:
                return res_mid
            best = min(best, res_mid, key=rank)
            if count > size:
                lo = mid
            else:
                hi = mid

    order = np.lexsort((np.arange(M), -best.weights))
    top = sorted(int(i) for i in order[:size])
    return SelectionResult(
        weights=best.weights,
        selected=top,
        objective_trace=best.objective_trace,
        kl=best.kl,
        lam=best.lam,
        fallback_used=True,
        converged=best.converged,
    )


def brute_force_subset(
    stack: AffinityStack, size: int, *, enumeration_budget: int = 10**6
) -> tuple[list[int], float]:
    """Exact KL minimizer over all subsets of the given size.

    Ties resolve to the lexicographically smallest index set. Guarded by an
    enumeration budget on the number of subsets.
    """
    M = stack.n_paths
    if not 1 <= size <= M:
        raise ValueError(f"size must be in [1, {M}], got {size}")
    n_subsets = math.comb(M, size)
    if n_subsets > enumeration_budget:
        raise ResourceLimitError(
            f"{n_subsets} subsets exceed enumeration budget {enumeration_budget}"
        )
    P = build_transition_model(stack).P
    best_combo: tuple[int, ...] | None = None
    best_kl = math.inf
    for combo in itertools.combinations(range(M), size):
        w = subset_indicator(M, combo)
        kl = kl_objective(P, transitions_for_weights(stack, w))
        if kl < best_kl:
            best_combo, best_kl = combo, kl
    assert best_combo is not None
    return list(best_combo), best_kl
