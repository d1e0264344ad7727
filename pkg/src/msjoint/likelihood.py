"""Complete-data log-likelihood: prior, longitudinal and semi-Markov terms,
their sum, and the gradient in the flattened free parameters.

Everything is computed in log space; intensities are exponentiated only
inside quadrature integrands. The vectorized :class:`LikelihoodEngine`
batches over (chain, individual) and is the workhorse of the sampler and the
fitting loop; the module-level functions are the per-individual reference
forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Cohort, IndividualRecord, validate_cohort
from .design import ModelDesign, cumulative_intensity, gauss_legendre, map_nodes, transition_log_intensity
from .graph import Edge, TransitionGraph, build_buckets
from .params import ModelParams, ParamLayout, PrecisionRepr

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LogLikTerms:
    """The three complete-data log-likelihood components (scalars or arrays
    batched over chains and individuals)."""

    prior: np.ndarray | float
    longitudinal: np.ndarray | float
    semi_markov: np.ndarray | float

    @property
    def total(self):
        return self.prior + self.longitudinal + self.semi_markov


# --------------------------------------------------------------------------
# Per-individual reference operations


def prior_loglik(b: np.ndarray, q_repr: PrecisionRepr) -> float | np.ndarray:
    """log N(b; 0, Q) through the precision representation."""
    q = q_repr.dim
    return -0.5 * q * LOG_2PI + 0.5 * q_repr.log_det_precision() - 0.5 * q_repr.quad_form(b)


def longitudinal_loglik(
    record: IndividualRecord, psi: np.ndarray, r_repr: PrecisionRepr, design: ModelDesign
) -> float:
    """Sum of Gaussian log-densities over the observed measurement rows."""
    obs = record.observed_rows
    if not obs.any():
        return 0.0
    t = record.measurement_times[obs]
    y = record.measurements[obs]
    h = design.regression.value(t, np.asarray(psi)[None, :])
    r = y - h
    d = y.shape[1]
    const = -0.5 * d * LOG_2PI + 0.5 * r_repr.log_det_precision()
    return float(obs.sum() * const - 0.5 * r_repr.quad_form(r).sum())


def semi_markov_loglik(
    record: IndividualRecord,
    psi: np.ndarray,
    params: ModelParams,
    design: ModelDesign,
    graph: TransitionGraph,
) -> float:
    """Observed-transition log-densities plus the censored-sojourn survival
    term (zero when the last state is absorbing)."""
    pairs = record.trajectory.pairs
    x = record.covariates
    total = 0.0
    for (t0, s0), (t1, s1) in zip(pairs, pairs[1:]):
        if (s0, s1) not in graph.edges:
            raise ValueError(f"transition ({s0}, {s1}) is not a graph edge")
        total += float(
            transition_log_intensity(design, params, (s0, s1), t1, t0, x, psi)
        )
        for s in graph.successors(s0):
            total -= float(cumulative_intensity(design, params, (s0, s), t0, t1, x, psi))
    t_last, s_last = pairs[-1]
    succ = graph.successors(s_last)
    if succ and record.censoring_time > t_last:
        if not np.isfinite(record.censoring_time):
            raise ValueError(
                "infinite censoring with a non-absorbing last state has no finite survival term"
            )
        for s in succ:
            total -= float(
                cumulative_intensity(design, params, (s_last, s), t_last, record.censoring_time, x, psi)
            )
    return total


def complete_loglik(
    cohort: Cohort,
    b_all: np.ndarray,
    params: ModelParams,
    design: ModelDesign,
    graph: TransitionGraph,
    subset: np.ndarray | None = None,
) -> float:
    """Sum of the three terms over the subset of individuals (all if None)."""
    engine = LikelihoodEngine(cohort, design, graph)
    return engine.complete_loglik(params, b_all, subset=subset)


def grad_complete_loglik(
    cohort: Cohort,
    b_all: np.ndarray,
    params: ModelParams,
    design: ModelDesign,
    graph: TransitionGraph,
    subset: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of :func:`complete_loglik` in the flattened free parameters;
    tied slots accumulate their members' contributions."""
    engine = LikelihoodEngine(cohort, design, graph)
    return engine.grad_theta(params, b_all, subset=subset)


def locate_nonfinite(terms: LogLikTerms) -> str | None:
    """Identify the first (individual, term) pair that is non-finite."""
    for name in ("prior", "longitudinal", "semi_markov"):
        arr = np.atleast_2d(np.asarray(getattr(terms, name)))
        bad = ~np.isfinite(arr)
        if bad.any():
            _, i = np.argwhere(bad)[0]
            return f"{name} term of individual {int(i)}"
    return None


# --------------------------------------------------------------------------
# Vectorized engine


class _EdgeBlock:
    """Precomputed event and risk layouts for one edge."""

    __slots__ = (
        "edge", "ev_idx", "ev_t", "ev_u", "ev_x", "risk_idx", "nd_t", "nd_w",
        "nd_u", "risk_x", "haz_ev", "haz_nd",
    )

    def __init__(self, edge, ev_idx, ev_t, ev_u, ev_x, risk_idx, nd_t, nd_w, nd_u, risk_x):
        self.edge = edge
        self.ev_idx = ev_idx
        self.ev_t = ev_t
        self.ev_u = ev_u
        self.ev_x = ev_x
        self.risk_idx = risk_idx
        self.nd_t = nd_t
        self.nd_w = nd_w
        self.nd_u = nd_u
        self.risk_x = risk_x
        self.haz_ev = None
        self.haz_nd = None


def _segment_add(out: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    # out (C, n), vals (C, m): accumulate vals into columns idx.
    n = out.shape[1]
    for c in range(out.shape[0]):
        out[c] += np.bincount(idx, weights=vals[c], minlength=n)


def _absolute_extra_slice(layout: ParamLayout, local: slice | None) -> slice | None:
    # hazard trainables are indexed within params.extra; shift into the
    # flattened free-parameter vector
    if local is None:
        return None
    start = layout.slices()["extra"].start
    return slice(start + local.start, start + local.stop)


class LikelihoodEngine:
    """Batched complete-data log-likelihood and gradient for a fixed cohort,
    design and graph.

    Random effects ``b`` are accepted with shape (n, q) or (chains, n, q);
    per-individual outputs follow the leading chain axis.
    """

    def __init__(self, cohort: Cohort, design: ModelDesign, graph: TransitionGraph, validate: bool = True):
        design.validate_against(graph)
        if validate:
            violations = validate_cohort(cohort, graph)
            if violations:
                raise ValueError("invalid cohort: " + "; ".join(violations[:5]))
        self.cohort = cohort
        self.design = design
        self.graph = graph
        self.n = len(cohort)
        self.d = cohort.n_biomarkers
        self.k = cohort.n_covariates

        self.x = np.array([rec.covariates for rec in cohort]).reshape(self.n, self.k)

        j_max = max((rec.n_measurements for rec in cohort), default=0) if self.n else 0
        self.t_obs = np.zeros((self.n, j_max))
        self.y_obs = np.zeros((self.n, j_max, self.d))
        self.obs_mask = np.zeros((self.n, j_max), dtype=bool)
        for i, rec in enumerate(cohort):
            m = rec.n_measurements
            if m == 0 or self.d == 0:
                continue
            self.t_obs[i, :m] = rec.measurement_times
            obs = rec.observed_rows
            self.obs_mask[i, :m] = obs
            rows = rec.measurements.copy()
            rows[~obs] = 0.0
            self.y_obs[i, :m] = rows

        self._build_edge_blocks()

    def _build_edge_blocks(self) -> None:
        nodes, weights = gauss_legendre(self.design.n_quad)
        buckets = build_buckets(self.graph, self.cohort.trajectories(), self.cohort.censoring_times())
        # Sojourn intervals at risk: every stay in a state exposes all of its
        # outgoing edges from the entry time to the exit or censoring time.
        risk: dict[Edge, list[tuple[int, float, float]]] = {e: [] for e in self.graph.sorted_edges()}
        for i, rec in enumerate(self.cohort):
            pairs = rec.trajectory.pairs
            for (t0, s0), (t1, _) in zip(pairs, pairs[1:]):
                for s in self.graph.successors(s0):
                    risk[(s0, s)].append((i, t0, t1))
            t_last, s_last = pairs[-1]
            succ = self.graph.successors(s_last)
            if succ and rec.censoring_time > t_last:
                if not np.isfinite(rec.censoring_time):
                    raise ValueError(
                        f"individual {i}: infinite censoring with non-absorbing last state"
                    )
                for s in succ:
                    risk[(s_last, s)].append((i, t_last, rec.censoring_time))

        self.edge_blocks: list[_EdgeBlock] = []
        for edge in self.graph.sorted_edges():
            entries = buckets.by_edge[edge]
            ev_idx = np.array([e.individual for e in entries], dtype=int)
            ev_entry = np.array([e.entry_time for e in entries])
            ev_t = np.array([e.exit_time for e in entries])
            intervals = risk[edge]
            r_idx = np.array([i for i, _, _ in intervals], dtype=int)
            r_t0 = np.array([a for _, a, _ in intervals])
            r_t1 = np.array([b for _, _, b in intervals])
            nd_t, nd_w = map_nodes(nodes, weights, r_t0, r_t1)
            hazard = self.design.hazard(edge)
            ev_u = ev_t - ev_entry if hazard.clock == "reset" else ev_t
            nd_u = nd_t - r_t0[:, None] if hazard.clock == "reset" else nd_t
            block = _EdgeBlock(
                edge,
                ev_idx,
                ev_t,
                ev_u,
                self.x[ev_idx],
                r_idx,
                nd_t,
                nd_w,
                nd_u,
                self.x[r_idx],
            )
            if not hazard.trainable:
                vals = hazard.initial_params()
                block.haz_ev = hazard.log_hazard(ev_u, vals)
                block.haz_nd = hazard.log_hazard(nd_u, vals)
            self.edge_blocks.append(block)

    # -- evaluation ---------------------------------------------------------

    @staticmethod
    def _as_chains(b: np.ndarray) -> tuple[np.ndarray, bool]:
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            return b[None], True
        if b.ndim == 3:
            return b, False
        raise ValueError("b must have shape (n, q) or (chains, n, q)")

    def psi(self, params: ModelParams, b: np.ndarray) -> np.ndarray:
        return self.design.effects.psi(params.gamma, self.x, b)

    def loglik_terms(self, params: ModelParams, b: np.ndarray) -> LogLikTerms:
        """Per-(chain, individual) prior, longitudinal and semi-Markov terms."""
        b, squeeze = self._as_chains(b)
        psi = self.psi(params, b)
        prior = (
            -0.5 * params.q_repr.dim * LOG_2PI
            + 0.5 * params.q_repr.log_det_precision()
            - 0.5 * params.q_repr.quad_form(b)
        )
        longit = self._longitudinal(params, psi)
        sm = self._semi_markov(params, psi)
        if squeeze:
            return LogLikTerms(prior[0], longit[0], sm[0])
        return LogLikTerms(prior, longit, sm)

    def _longitudinal(self, params: ModelParams, psi: np.ndarray) -> np.ndarray:
        C = psi.shape[0]
        if self.d == 0 or self.t_obs.shape[1] == 0 or not self.obs_mask.any():
            return np.zeros((C, self.n))
        h = self.design.regression.value(self.t_obs, psi[:, :, None, :])
        r = (self.y_obs - h) * self.obs_mask[..., None]
        quad = params.r_repr.quad_form(r)
        const = -0.5 * self.d * LOG_2PI + 0.5 * params.r_repr.log_det_precision()
        return self.obs_mask.sum(axis=1) * const - 0.5 * (quad * self.obs_mask).sum(axis=-1)

    def _semi_markov(self, params: ModelParams, psi: np.ndarray) -> np.ndarray:
        C = psi.shape[0]
        out = np.zeros((C, self.n))
        for blk in self.edge_blocks:
            edge = blk.edge
            alpha = params.alpha[edge]
            beta = params.beta[edge]
            lnk = self.design.link(edge)
            hazard = self.design.hazard(edge)
            vals = None if blk.haz_ev is not None else self.design.hazard_values(edge, params)
            if blk.ev_idx.size:
                g = lnk.value(blk.ev_t, blk.ev_x, psi[:, blk.ev_idx, :])
                log_lam = g @ alpha + blk.ev_x @ beta
                log_lam += blk.haz_ev if blk.haz_ev is not None else hazard.log_hazard(blk.ev_u, vals)
                _segment_add(out, blk.ev_idx, log_lam)
            if blk.risk_idx.size:
                g = lnk.value(blk.nd_t, blk.risk_x[:, None, :], psi[:, blk.risk_idx, None, :])
                log_lam = g @ alpha + (blk.risk_x @ beta)[:, None]
                log_lam += blk.haz_nd if blk.haz_nd is not None else hazard.log_hazard(blk.nd_u, vals)
                lam = np.exp(log_lam)
                _segment_add(out, blk.risk_idx, -np.sum(lam * blk.nd_w, axis=-1))
        return out

    def posterior_logdensity(self, params: ModelParams, b: np.ndarray) -> np.ndarray:
        """Unnormalized per-individual posterior log-density of b given the
        data (theta fixed): the sum of the three complete-data terms."""
        terms = self.loglik_terms(params, b)
        return terms.total

    def complete_loglik(self, params: ModelParams, b: np.ndarray, subset=None) -> float | np.ndarray:
        """Complete-data log-likelihood summed over the subset; returns a
        scalar for (n, q) input, a per-chain vector for (chains, n, q)."""
        b_arr, squeeze = self._as_chains(b)
        terms = self.loglik_terms(params, b_arr)
        total = np.asarray(terms.total)
        if subset is not None:
            subset = np.asarray(subset, dtype=int)
            total = total[:, subset] if subset.size else np.zeros((total.shape[0], 0))
        value = total.sum(axis=-1)
        return float(value[0]) if squeeze else value

    # -- gradient -----------------------------------------------------------

    def grad_theta(
        self,
        params: ModelParams,
        b: np.ndarray,
        subset=None,
        average_chains: bool = True,
    ) -> np.ndarray:
        """Gradient of the summed complete-data log-likelihood with respect to
        the flattened free parameters (tied slots accumulate). For chained
        input the per-chain gradients are averaged when ``average_chains``."""
        self.design.validate_params(params)
        b, squeeze = self._as_chains(b)
        C = b.shape[0]
        layout = params.layout()
        sl = layout.slices()
        grad = np.zeros(layout.size)
        scale = 1.0 / C if (average_chains and not squeeze) else 1.0

        mask = None
        if subset is not None:
            subset = np.asarray(subset, dtype=int)
            mask = np.zeros(self.n, dtype=bool)
            mask[subset] = True

        psi = self.psi(params, b)
        n_sel = self.n if mask is None else int(mask.sum())

        # prior -> Q representation
        b_sel = b if mask is None else b[:, mask, :]
        if params.q_repr.dim:
            s_b = np.einsum("cnq,cnr->qr", b_sel, b_sel) / C
            grad[sl["q"]] += scale * C * params.q_repr.grad_values(s_b, float(n_sel))

        # longitudinal -> R representation and psi
        v_psi = np.zeros(psi.shape)
        if self.d and self.t_obs.shape[1] and self.obs_mask.any():
            obs = self.obs_mask if mask is None else (self.obs_mask & mask[:, None])
            h = self.design.regression.value(self.t_obs, psi[:, :, None, :])
            r = (self.y_obs - h) * obs[..., None]
            if params.r_repr.n_free:
                s_r = np.einsum("cnjd,cnje->de", r, r) / C
                grad[sl["r"]] += scale * C * params.r_repr.grad_values(s_r, float(obs.sum()))
            # d/dpsi of -(1/2) r^T P r with r = y - h: (P r)^T dh/dpsi
            pr = r @ params.r_repr.precision()
            jh = self.design.regression.jac_psi(self.t_obs, psi[:, :, None, :])
            v_psi += np.einsum("cnjd,cnjds->cns", pr, jh)

        # semi-Markov -> alpha, beta, extra and psi
        for blk in self.edge_blocks:
            self._edge_grad(params, psi, blk, grad, v_psi, layout, mask, scale)

        # psi -> gamma through the effects map
        if layout.n_gamma:
            if mask is not None:
                v_psi = v_psi * mask[:, None]
            jpg = self.design.effects.jac_gamma(params.gamma, self.x, b)
            grad[sl["gamma"]] += scale * np.einsum("cns,cnsg->g", v_psi, jpg)
        return grad

    def _edge_grad(self, params, psi, blk, grad, v_psi, layout, mask, scale):
        edge = blk.edge
        alpha = params.alpha[edge]
        beta = params.beta[edge]
        lnk = self.design.link(edge)
        hazard = self.design.hazard(edge)
        a_sl = layout.edge_slice("alpha", edge)
        b_sl = layout.edge_slice("beta", edge)
        e_sl = _absolute_extra_slice(layout, self.design.extra_slice(edge))
        vals = None if blk.haz_ev is not None else self.design.hazard_values(edge, params)
        C = psi.shape[0]

        if blk.ev_idx.size:
            keep = slice(None) if mask is None else mask[blk.ev_idx]
            idx = blk.ev_idx[keep]
            if idx.size:
                ev_t, ev_x, ev_u = blk.ev_t[keep], blk.ev_x[keep], blk.ev_u[keep]
                psi_e = psi[:, idx, :]
                g = lnk.value(ev_t, ev_x, psi_e)
                grad[a_sl] += scale * np.einsum("cea->a", g)
                grad[b_sl] += scale * C * ev_x.sum(axis=0)
                if e_sl is not None:
                    dh = hazard.dlog_dparams(ev_u, vals)
                    grad[e_sl] += scale * C * dh.sum(axis=0)
                jg = lnk.jac_psi(ev_t, ev_x, psi_e)
                contrib = np.einsum("ceas,a->ces", jg, alpha)
                for s in range(psi.shape[-1]):
                    _segment_add(v_psi[..., s], idx, contrib[..., s])

        if blk.risk_idx.size:
            keep = slice(None) if mask is None else mask[blk.risk_idx]
            idx = blk.risk_idx[keep]
            if idx.size:
                nd_t, nd_w, nd_u = blk.nd_t[keep], blk.nd_w[keep], blk.nd_u[keep]
                risk_x = blk.risk_x[keep]
                haz_nd = blk.haz_nd[keep] if blk.haz_nd is not None else hazard.log_hazard(nd_u, vals)
                psi_r = psi[:, idx, None, :]
                g = lnk.value(nd_t, risk_x[:, None, :], psi_r)
                log_lam = g @ alpha + (risk_x @ beta)[:, None] + haz_nd
                wlam = np.exp(log_lam) * nd_w  # (C, M, nq)
                grad[a_sl] -= scale * np.einsum("cmj,cmja->a", wlam, g)
                grad[b_sl] -= scale * np.einsum("cmj,mk->k", wlam, risk_x)
                if e_sl is not None:
                    dh = hazard.dlog_dparams(nd_u, vals)
                    grad[e_sl] -= scale * np.einsum("cmj,mjp->p", wlam, dh)
                jg = lnk.jac_psi(nd_t, risk_x[:, None, :], psi_r)
                dpsi = np.einsum("cmjas,a->cmjs", jg, alpha)
                contrib = -np.einsum("cmj,cmjs->cms", wlam, dpsi)
                for s in range(psi.shape[-1]):
                    _segment_add(v_psi[..., s], idx, contrib[..., s])

    # -- per-individual scores (Fisher information) ---------------------------

    def individual_scores(
        self, params: ModelParams, b: np.ndarray
    ) -> np.ndarray:
        """Per-individual complete-data scores, shape (chains, n, n_free)."""
        self.design.validate_params(params)
        b, _ = self._as_chains(b)
        C = b.shape[0]
        layout = params.layout()
        sl = layout.slices()
        scores = np.zeros((C, self.n, layout.size))
        psi = self.psi(params, b)

        if params.q_repr.dim:
            outer = np.einsum("cnq,cnr->cnqr", b, b)
            scores[..., sl["q"]] = params.q_repr.grad_values(outer, 1.0)

        v_psi = np.zeros(psi.shape)
        if self.d and self.t_obs.shape[1] and self.obs_mask.any():
            h = self.design.regression.value(self.t_obs, psi[:, :, None, :])
            r = (self.y_obs - h) * self.obs_mask[..., None]
            if params.r_repr.n_free:
                outer = np.einsum("cnjd,cnje->cnde", r, r)
                counts = self.obs_mask.sum(axis=1).astype(float)
                scores[..., sl["r"]] = params.r_repr.grad_values(outer, counts)
            pr = r @ params.r_repr.precision()
            jh = self.design.regression.jac_psi(self.t_obs, psi[:, :, None, :])
            v_psi += np.einsum("cnjd,cnjds->cns", pr, jh)

        for blk in self.edge_blocks:
            self._edge_scores(params, psi, blk, scores, v_psi, layout)

        if layout.n_gamma:
            jpg = self.design.effects.jac_gamma(params.gamma, self.x, b)
            scores[..., sl["gamma"]] += np.einsum("cns,cnsg->cng", v_psi, jpg)
        return scores

    def _edge_scores(self, params, psi, blk, scores, v_psi, layout):
        edge = blk.edge
        alpha = params.alpha[edge]
        beta = params.beta[edge]
        lnk = self.design.link(edge)
        hazard = self.design.hazard(edge)
        a_sl = layout.edge_slice("alpha", edge)
        b_sl = layout.edge_slice("beta", edge)
        e_sl = _absolute_extra_slice(layout, self.design.extra_slice(edge))
        vals = None if blk.haz_ev is not None else self.design.hazard_values(edge, params)
        C = psi.shape[0]

        if blk.ev_idx.size:
            idx = blk.ev_idx
            psi_e = psi[:, idx, :]
            g = lnk.value(blk.ev_t, blk.ev_x, psi_e)
            for col in range(g.shape[-1]):
                _segment_add(scores[..., a_sl.start + col], idx, g[..., col])
            xb = np.broadcast_to(blk.ev_x, (C,) + blk.ev_x.shape)
            for col in range(blk.ev_x.shape[1]):
                _segment_add(scores[..., b_sl.start + col], idx, xb[..., col])
            if e_sl is not None:
                dh = hazard.dlog_dparams(blk.ev_u, vals)
                dhb = np.broadcast_to(dh, (C,) + dh.shape)
                for col in range(dh.shape[-1]):
                    _segment_add(scores[..., e_sl.start + col], idx, dhb[..., col])
            jg = lnk.jac_psi(blk.ev_t, blk.ev_x, psi_e)
            contrib = np.einsum("ceas,a->ces", jg, alpha)
            for s in range(psi.shape[-1]):
                _segment_add(v_psi[..., s], idx, contrib[..., s])

        if blk.risk_idx.size:
            idx = blk.risk_idx
            psi_r = psi[:, idx, None, :]
            haz_nd = blk.haz_nd if blk.haz_nd is not None else hazard.log_hazard(blk.nd_u, vals)
            g = lnk.value(blk.nd_t, blk.risk_x[:, None, :], psi_r)
            log_lam = g @ alpha + (blk.risk_x @ beta)[:, None] + haz_nd
            wlam = np.exp(log_lam) * blk.nd_w
            ga = np.einsum("cmj,cmja->cma", wlam, g)
            for col in range(g.shape[-1]):
                _segment_add(scores[..., a_sl.start + col], idx, -ga[..., col])
            if blk.risk_x.shape[1]:
                xb = np.einsum("cmj,mk->cmk", wlam, blk.risk_x)
                for col in range(blk.risk_x.shape[1]):
                    _segment_add(scores[..., b_sl.start + col], idx, -xb[..., col])
            if e_sl is not None:
                dh = hazard.dlog_dparams(blk.nd_u, vals)
                dhw = np.einsum("cmj,mjp->cmp", wlam, dh)
                for col in range(dh.shape[-1]):
                    _segment_add(scores[..., e_sl.start + col], idx, -dhw[..., col])
            jg = lnk.jac_psi(blk.nd_t, blk.risk_x[:, None, :], psi_r)
            dpsi = np.einsum("cmjas,a->cmjs", jg, alpha)
            contrib = -np.einsum("cmj,cmjs->cms", wlam, dpsi)
            for s in range(psi.shape[-1]):
                _segment_add(v_psi[..., s], idx, contrib[..., s])
