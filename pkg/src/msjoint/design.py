"""Model design: effects map, regression, per-edge hazard/link table,
transition intensities and Gauss-Legendre cumulative intensities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Edge, TransitionGraph
from .params import ModelParams

DEFAULT_QUAD_NODES = 32

_QUAD_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1], exact for polynomials of degree <= 2n-1.

    Cached per n; repeated requests return the same read-only arrays. The
    compute-then-setdefault idiom keeps concurrent first requests consistent.
    """
    if n < 1:
        raise ValueError("need at least one quadrature node")
    cached = _QUAD_CACHE.get(n)
    if cached is None:
        nodes, weights = np.polynomial.legendre.leggauss(n)
        nodes.flags.writeable = False
        weights.flags.writeable = False
        cached = _QUAD_CACHE.setdefault(n, (nodes, weights))
    return cached


def map_nodes(nodes: np.ndarray, weights: np.ndarray, a, b):
    """Affine map of reference nodes/weights to [a, b]; a, b broadcast."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    return half[..., None] * nodes + mid[..., None], half[..., None] * weights


@dataclass
class ModelDesign:
    """Effects map f, regression h, and per-edge (baseline hazard, link).

    The per-edge table keys are the graph edges; each custom family must pass
    the finite-difference derivative self-check, run at construction unless
    ``self_check=False``.
    """

    effects: object
    regression: object
    edge_specs: dict[Edge, tuple[object, object]]
    n_quad: int = DEFAULT_QUAD_NODES
    self_check: bool = True
    _extra_slices: dict[Edge, slice] = field(init=False, repr=False)

    def __post_init__(self):
        self.edge_specs = {tuple(e): (h, l) for e, (h, l) in self.edge_specs.items()}
        slices: dict[Edge, slice] = {}
        pos = 0
        for e in sorted(self.edge_specs):
            hazard, _ = self.edge_specs[e]
            if hazard.trainable:
                slices[e] = slice(pos, pos + hazard.n_params)
                pos += hazard.n_params
        self._extra_slices = slices
        if self.self_check:
            run_self_check(self)

    @property
    def edges(self) -> list[Edge]:
        return sorted(self.edge_specs)

    def hazard(self, edge: Edge):
        return self.edge_specs[edge][0]

    def link(self, edge: Edge):
        return self.edge_specs[edge][1]

    def link_dim(self, edge: Edge) -> int:
        return self.edge_specs[edge][1].dim

    @property
    def extra_size(self) -> int:
        return sum(s.stop - s.start for s in self._extra_slices.values())

    def initial_extra(self) -> np.ndarray:
        """Initial trainable hazard parameters, in edge-sorted layout."""
        out = np.zeros(self.extra_size)
        for e, sl in self._extra_slices.items():
            out[sl] = self.hazard(e).initial_params()
        return out

    def extra_slice(self, edge: Edge) -> slice | None:
        return self._extra_slices.get(edge)

    def hazard_values(self, edge: Edge, params: ModelParams) -> np.ndarray:
        """Current parameter vector of the edge's hazard (trainable ones read
        from params.extra, fixed ones from the construction values)."""
        sl = self._extra_slices.get(edge)
        if sl is None:
            return self.hazard(edge).initial_params()
        return params.extra[sl]

    def clock_time(self, edge: Edge, t, t_entry):
        hazard = self.hazard(edge)
        if hazard.clock == "reset":
            return np.asarray(t, dtype=float) - np.asarray(t_entry, dtype=float)
        return np.asarray(t, dtype=float)

    def validate_against(self, graph: TransitionGraph) -> None:
        if set(self.edge_specs) != set(graph.edges):
            raise ValueError(
                f"design edges {sorted(self.edge_specs)} do not match "
                f"graph edges {graph.sorted_edges()}"
            )

    def validate_params(self, params: ModelParams) -> None:
        for e in self.edges:
            a = params.alpha.get(e)
            if a is None or a.shape[0] != self.link_dim(e):
                raise ValueError(
                    f"alpha for edge {e} must have length {self.link_dim(e)}"
                )
        if params.extra.shape[0] != self.extra_size:
            raise ValueError(
                f"params.extra has length {params.extra.shape[0]}, design needs {self.extra_size}"
            )


# --------------------------------------------------------------------------
# Design-level operations


def individual_effects(effects, gamma, x, b) -> np.ndarray:
    """psi = f(gamma, x, b), batched like b."""
    return effects.psi(gamma, x, b)


def regression(family, t, psi) -> np.ndarray:
    """h(t, psi) with trailing biomarker dimension."""
    return family.value(t, psi)


def link(family, t, x, psi) -> np.ndarray:
    """g(t, x, psi) with trailing link dimension."""
    return family.value(t, x, psi)


def transition_log_intensity(
    design: ModelDesign, params: ModelParams, edge: Edge, t, t_entry, x, psi
):
    """log lambda = log lambda_0(clock) + alpha . g(t, x, psi) + beta . x."""
    edge = tuple(edge)
    hazard = design.hazard(edge)
    values = design.hazard_values(edge, params)
    u = design.clock_time(edge, t, t_entry)
    out = hazard.log_hazard(u, values)
    g = design.link(edge).value(t, x, psi)
    out = out + g @ params.alpha[edge]
    out = out + np.asarray(x, dtype=float) @ params.beta[edge]
    return out


def cumulative_intensity(
    design: ModelDesign,
    params: ModelParams,
    edge: Edge,
    t0,
    t1,
    x,
    psi,
    n_nodes: int | None = None,
    lower=None,
) -> np.ndarray:
    """Gauss-Legendre approximation of the integrated intensity on [t0, t1]
    (or [lower, t1] when conditioning past the entry time t0).

    Positive weights and a positive integrand keep the result >= 0.
    """
    edge = tuple(edge)
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    a = t0 if lower is None else np.asarray(lower, dtype=float)
    if np.any(t1 < a):
        raise ValueError("upper integration bound precedes the lower bound")
    nodes, weights = gauss_legendre(n_nodes or design.n_quad)
    w, ww = map_nodes(nodes, weights, a, t1)
    psi_q = np.asarray(psi)[..., None, :] if np.ndim(psi) else psi
    x_q = np.asarray(x, dtype=float)[..., None, :] if np.ndim(x) else x
    log_lam = transition_log_intensity(
        design, params, edge, w, t0[..., None], x_q, psi_q
    )
    return np.sum(np.exp(log_lam) * ww, axis=-1)


def transition_state_probs(
    design: ModelDesign,
    params: ModelParams,
    graph: TransitionGraph,
    state: int,
    t,
    t_entry,
    x,
    psi,
) -> dict[int, float]:
    """Conditional next-state probabilities at transition time t, normalized
    over successors by log-sum-exp (sums to 1 exactly)."""
    succ = graph.successors(state)
    if not succ:
        return {}
    logs = np.array(
        [transition_log_intensity(design, params, (state, s), t, t_entry, x, psi) for s in succ]
    )
    m = logs.max()
    w = np.exp(logs - m)
    w /= w.sum()
    return {s: float(p) for s, p in zip(succ, w)}


# --------------------------------------------------------------------------
# Finite-difference self-check of family derivative callbacks


def _fd(fun, z, h=1e-6):
    z = np.asarray(z, dtype=float)
    cols = []
    for i in range(z.shape[-1]):
        zp, zm = z.copy(), z.copy()
        zp[..., i] += h
        zm[..., i] -= h
        cols.append((fun(zp) - fun(zm)) / (2 * h))
    return np.stack(cols, axis=-1)


def check_regression_family(family, rng=None, atol=1e-5) -> None:
    """Validate jac_psi (and the time-derivative pair if present) against
    central finite differences on random inputs."""
    rng = rng or np.random.default_rng(1234)
    s = getattr(family, "n_psi", None) or 3
    psi = rng.normal(0.3, 0.7, size=(4, s))
    if s > 1:
        psi[..., 1] = 0.8 + np.abs(psi[..., 1])  # keep scale-like components positive
    t = rng.uniform(0.1, 7.9, size=(4,))
    jac = family.jac_psi(t, psi)
    fd = _fd(lambda z: family.value(t, z), psi)
    if not np.allclose(jac, fd, atol=atol, rtol=atol):
        raise ValueError(f"{family.name}: jac_psi disagrees with finite differences")
    try:
        dt = family.time_derivative(t, psi)
    except NotImplementedError:
        return
    fd_t = (family.value(t + 1e-6, psi) - family.value(t - 1e-6, psi)) / 2e-6
    if not np.allclose(dt, fd_t, atol=max(atol, 1e-4), rtol=1e-4):
        raise ValueError(f"{family.name}: time derivative disagrees with finite differences")
    jac_t = family.time_derivative_jac_psi(t, psi)
    fd_jt = _fd(lambda z: family.time_derivative(t, z), psi)
    if not np.allclose(jac_t, fd_jt, atol=atol, rtol=atol):
        raise ValueError(
            f"{family.name}: time-derivative Jacobian disagrees with finite differences"
        )


def check_link_family(family, rng=None, atol=1e-5, n_covariates=1) -> None:
    rng = rng or np.random.default_rng(1235)
    reg = getattr(family, "regression", None)
    s = (getattr(reg, "n_psi", None) if reg is not None else None) or 3
    psi = rng.normal(0.3, 0.7, size=(4, s))
    if s > 1:
        psi[..., 1] = 0.8 + np.abs(psi[..., 1])
    t = rng.uniform(0.1, 7.9, size=(4,))
    x = rng.normal(size=(4, n_covariates))
    jac = family.jac_psi(t, x, psi)
    fd = _fd(lambda z: family.value(t, x, z), psi)
    if not np.allclose(jac, fd, atol=atol, rtol=atol):
        raise ValueError(f"{family.name}: link jac_psi disagrees with finite differences")


def check_effects_family(family, rng=None, atol=1e-5, q=3, n_covariates=1) -> None:
    rng = rng or np.random.default_rng(1236)
    n_gamma = family.n_gamma(q, n_covariates)
    gamma = rng.normal(size=n_gamma)
    x = rng.normal(size=(4, n_covariates))
    b = rng.normal(size=(4, q))
    jac = family.jac_gamma(gamma, x, b)
    if n_gamma == 0:
        if jac.shape[-1] != 0:
            raise ValueError(f"{family.name}: expected empty gamma Jacobian")
        return
    fd = np.stack(
        [
            (family.psi(_bump(gamma, i, 1e-6), x, b) - family.psi(_bump(gamma, i, -1e-6), x, b))
            / 2e-6
            for i in range(n_gamma)
        ],
        axis=-1,
    )
    if not np.allclose(jac, fd, atol=atol, rtol=atol):
        raise ValueError(f"{family.name}: jac_gamma disagrees with finite differences")


def check_hazard_family(hazard, rng=None, atol=1e-5) -> None:
    rng = rng or np.random.default_rng(1237)
    values = hazard.initial_params()
    u = rng.uniform(0.05, 9.5, size=(6,))
    jac = hazard.dlog_dparams(u, values)
    fd = np.stack(
        [
            (hazard.log_hazard(u, _bump(values, i, 1e-6)) - hazard.log_hazard(u, _bump(values, i, -1e-6)))
            / 2e-6
            for i in range(values.shape[0])
        ],
        axis=-1,
    )
    if not np.allclose(jac, fd, atol=atol, rtol=atol):
        raise ValueError(f"{hazard.name}: dlog_dparams disagrees with finite differences")


def _bump(v, i, h):
    out = np.asarray(v, dtype=float).copy()
    out[i] += h
    return out


def run_self_check(design: ModelDesign) -> None:
    """Finite-difference validation of every family in the design; raises on
    the first failing derivative contract."""
    check_regression_family(design.regression)
    seen: set[int] = set()
    for e in design.edges:
        hazard, lnk = design.edge_specs[e]
        if id(lnk) not in seen:
            check_link_family(lnk)
            seen.add(id(lnk))
        if id(hazard) not in seen:
            check_hazard_family(hazard)
            seen.add(id(hazard))
    check_effects_family(design.effects)
