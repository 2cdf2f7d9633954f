"""Sliding-window MAP smoother over vehicle states.

Each window holds one 8-dof node per epoch (position, velocity, clock
bias, clock drift) tied together by constant-velocity motion factors and
a clock random-walk factor, with one scalar pseudorange factor per
observation. The window is solved by Levenberg-Marquardt; robust noise
models enter through an IRLS outer loop that refreshes per-factor
weights (and, for the multi-hypothesis model, the active hypothesis)
between inner solves.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import geo, kernels, vb_gmm
from .measurement import ReceiverHypothesis, SatelliteState, predict_pseudorange
from .simkit import EpochData, EpochDataset

STATE_DIM = 8  # px py pz vx vy vz clock_bias clock_drift
_COND_LIMIT = 1e10


class SingularGeometryError(RuntimeError):
    """Normal equations are rank deficient for this window."""


class DivergenceError(RuntimeError):
    """Solver produced a non-finite cost."""


# ---------------------------------------------------------------------------
# noise models


@dataclass(frozen=True)
class FactorTerms:
    """Whitening recipe for one pseudorange factor at the current iterate."""

    mean: float  # subtracted from the raw residual, m
    sigma: float  # whitening scale, m
    kernel: kernels.KernelConfig | None  # IRLS reweighting, None = unit weight
    d: int = -1  # hypothesis index for multi-hypothesis models


class GaussianNoise:
    static_terms = True  # terms do not depend on the iterate

    def __init__(self, sigma: float):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.sigma = sigma

    def terms(self, sat_id, epsilon, predicted_range, epoch) -> FactorTerms:
        return FactorTerms(0.0, self.sigma, None)


class MEstimatorNoise:
    static_terms = True  # terms do not depend on the iterate

    def __init__(self, kernel: kernels.KernelConfig, sigma: float):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.kernel = kernel
        self.sigma = sigma

    def terms(self, sat_id, epsilon, predicted_range, epoch) -> FactorTerms:
        return FactorTerms(0.0, self.sigma, self.kernel)


class GmmDominantNoise:
    """Whitens every residual by the satellite's dominant fitted mode."""

    def __init__(self, models: dict[str, vb_gmm.GmmNoiseModel], fallback_sigma: float):
        self.models = models
        self.stale: set[str] = set()
        self.fallback_sigma = fallback_sigma

    def terms(self, sat_id, epsilon, predicted_range, epoch) -> FactorTerms:
        model = self.models.get(sat_id)
        if model is None:
            return FactorTerms(0.0, self.fallback_sigma, None)
        dom = vb_gmm.dominant_component(model)
        return FactorTerms(dom.mean, 1.0 / np.sqrt(dom.precision), None)


class MhGmmNoise:
    """Two-hypothesis model: robust Cauchy (d=0) vs dominant mode (d=1).

    Satellites without a usable (or with a stale) mixture fall back to the
    Cauchy hypothesis. When the mean shift is enabled, the dominant mean
    is shifted toward the residual within a bound set by the range change
    since the mode's most recent supporting sample.
    """

    def __init__(self, cauchy_sigma: float,
                 models: dict[str, vb_gmm.GmmNoiseModel] | None = None,
                 shift_enabled: bool = False, efficiency: float = 0.90,
                 shift_bias_threshold_m: float = 5.0,
                 max_shift_range_m: float = 3.0):
        if not cauchy_sigma > 0:
            raise ValueError("cauchy_sigma must be positive")
        self.cauchy_sigma = cauchy_sigma
        self.models = models if models is not None else {}
        self.stale: set[str] = set()
        self.shift_enabled = shift_enabled
        # a zero-mean mode is direct-path error; only a reflected-path
        # (biased) mode can change with receiver motion, so only those
        # modes get the motion-bounded mean adaptation
        self.shift_bias_threshold_m = shift_bias_threshold_m
        # the raw range change conflates reflected-path drift with plain
        # receiver motion, so an uncapped shift prior would let the mode
        # chase any residual; the cap bounds the 3-sigma shift allowance
        self.max_shift_range_m = max_shift_range_m
        self.kernel = kernels.KernelConfig.from_efficiency(kernels.KernelFamily.CAUCHY, efficiency)

    def terms(self, sat_id, epsilon, predicted_range, epoch) -> FactorTerms:
        model = self.models.get(sat_id)
        if model is None or sat_id in self.stale:
            return FactorTerms(0.0, self.cauchy_sigma, self.kernel, 0)
        dec = vb_gmm.select_hypothesis(epsilon, model, False, 0.0)
        if dec.d == 1:
            dom = vb_gmm.dominant_component(model)
            return FactorTerms(dom.mean, float(np.sqrt(1.0 / dom.precision)), None, 1)
        if self.shift_enabled:
            # Rescue pass: a residual the static mode rejects may belong to a
            # mode whose mean drifted with receiver motion. Retry selection
            # with the motion-bounded mean shift; a rescued factor carries the
            # shifted mean and the shift-prior-inflated sigma, so it re-enters
            # as weak evidence instead of the uninformative Cauchy fallback.
            dom = vb_gmm.dominant_component(model)
            if abs(dom.mean) > self.shift_bias_threshold_m:
                delta_r = min(abs(predicted_range - dom.anchor_range),
                              self.max_shift_range_m)
                dec = vb_gmm.select_hypothesis(epsilon, model, True, delta_r)
                if dec.d == 1:
                    var = 1.0 / dom.precision + vb_gmm.shift_prior_variance(delta_r)
                    return FactorTerms(dec.mu_star, float(np.sqrt(var)), None, 1)
        return FactorTerms(0.0, self.cauchy_sigma, self.kernel, 0)


# ---------------------------------------------------------------------------
# window graph


@dataclass
class SolverConfig:
    max_iterations: int = 50
    cost_tolerance: float = 1e-10  # relative
    lm_initial_damping: float = 1e-6
    irls_max_outer: int = 10
    irls_weight_tolerance: float = 1e-3
    # optional extra convergence requirement on the robust-cost gradient
    # infinity norm; None keeps the cheap weight-stability criterion only
    gradient_tolerance: float | None = None
    window_length: int = 10  # epochs
    accel_sigma: float = 0.5  # m/s^2
    clock_drift_sigma: float = 0.01  # m/s per sqrt(s)
    prior_sigma: np.ndarray = field(default_factory=lambda: np.array(
        [1e4, 1e4, 1e4, 1e3, 1e3, 1e3, 1e4, 1e3]))
    anchor_sigma: np.ndarray = field(default_factory=lambda: np.array(
        [2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 5.0, 0.5]))

    def __post_init__(self):
        if min(self.cost_tolerance, self.lm_initial_damping,
               self.accel_sigma, self.clock_drift_sigma) <= 0:
            raise ValueError("tolerances and process sigmas must be positive")
        if self.window_length < 2:
            raise ValueError("window_length must be >= 2")


@dataclass
class WindowGraph:
    epochs: list[int]
    times: list[float]
    pseudorange_factors: list  # (node_idx, obs, sat)
    motion_factors: list  # (i, i+1, dt)
    clock_factors: list  # (i, i+1, dt)
    prior: tuple | None  # (node_idx, mean(8,), sigma(8,))
    noise_model: object
    config: SolverConfig
    initial_states: np.ndarray  # (n_nodes * 8,)

    @property
    def n_nodes(self) -> int:
        return len(self.epochs)


def build_window(slice_: list[EpochData], config: SolverConfig, noise_model,
                 initial_states: np.ndarray,
                 prior: tuple | None = "weak") -> WindowGraph:
    """Assemble the factor graph for one window of epochs.

    ``prior`` is ``"weak"`` for a broad prior on the first node at its
    initial value, an explicit (node_idx, mean, sigma) tuple, or ``None``
    to omit the anchor entirely.
    """
    if len(slice_) < 2:
        raise ValueError("window needs at least 2 epochs")
    n = len(slice_)
    initial_states = np.asarray(initial_states, dtype=float).reshape(n * STATE_DIM)
    pr_factors = [(i, obs, sat) for i, ep in enumerate(slice_) for obs, sat in ep.records]
    motion = [(i, i + 1, slice_[i + 1].t - slice_[i].t) for i in range(n - 1)]
    if prior == "weak":
        prior = (0, initial_states[:STATE_DIM].copy(), config.prior_sigma.copy())
    return WindowGraph(
        epochs=[ep.index for ep in slice_], times=[ep.t for ep in slice_],
        pseudorange_factors=pr_factors, motion_factors=motion,
        clock_factors=[(i, j, dt) for i, j, dt in motion],
        prior=prior, noise_model=noise_model, config=config,
        initial_states=initial_states)


class _GraphCache:
    """Precomputed arrays for fast repeated linearization of one window.

    Motion, clock, and prior rows are linear in the state, so their
    whitened Jacobian block is constant and their residuals are an
    affine map of the state vector. Only the pseudorange rows change
    between iterates.
    """

    def __init__(self, graph: "WindowGraph"):
        cfg = graph.config
        n_state = graph.n_nodes * STATE_DIM
        pr = graph.pseudorange_factors
        self.n_pr = len(pr)
        self.node_idx = np.array([node for node, _, _ in pr], dtype=int)
        self.sat_pos = np.array([sat.position for _, _, sat in pr]).reshape(self.n_pr, 3)
        self.clock_off = np.array([-sat.clock_bias + sat.corrections for _, _, sat in pr])
        self.rho = np.array([obs.rho for _, obs, _ in pr])

        n_static = 6 * len(graph.motion_factors) + 2 * len(graph.clock_factors)
        n_static += STATE_DIM if graph.prior is not None else 0
        A = np.zeros((n_static, n_state))
        b = np.zeros(n_static)
        row = 0
        for i, j, dt in graph.motion_factors:
            sp = max(cfg.accel_sigma * dt * dt / 2.0, 1e-9)
            sv = max(cfg.accel_sigma * dt, 1e-9)
            bi, bj = i * STATE_DIM, j * STATE_DIM
            for a in range(3):
                A[row, bj + a] = 1.0 / sp
                A[row, bi + a] = -1.0 / sp
                A[row, bi + 3 + a] = -dt / sp
                row += 1
            for a in range(3):
                A[row, bj + 3 + a] = 1.0 / sv
                A[row, bi + 3 + a] = -1.0 / sv
                row += 1
        for i, j, dt in graph.clock_factors:
            scb = max(cfg.clock_drift_sigma * dt ** 1.5, 1e-9)
            scd = max(cfg.clock_drift_sigma * np.sqrt(dt), 1e-9)
            bi, bj = i * STATE_DIM, j * STATE_DIM
            A[row, bj + 6] = 1.0 / scb
            A[row, bi + 6] = -1.0 / scb
            A[row, bi + 7] = -dt / scb
            row += 1
            A[row, bj + 7] = 1.0 / scd
            A[row, bi + 7] = -1.0 / scd
            row += 1
        if graph.prior is not None:
            node, mean, sigma = graph.prior
            base = node * STATE_DIM
            for a in range(STATE_DIM):
                A[row, base + a] = 1.0 / sigma[a]
                b[row] = -mean[a] / sigma[a]
                row += 1
        self.J_static = A
        self.c_static = b
        self.n_state = n_state

    def epsilons(self, states: np.ndarray):
        """Raw residuals and predicted ranges for all pseudorange factors."""
        s = states.reshape(-1, STATE_DIM)
        d = s[self.node_idx, 0:3] - self.sat_pos
        rng = np.linalg.norm(d, axis=1)
        if np.any(rng < 1e-6):
            raise SingularGeometryError("degenerate receiver-satellite geometry in window")
        eps = self.rho - (rng + s[self.node_idx, 6] + self.clock_off)
        return eps, rng, d / rng[:, None]


def _graph_cache(graph: "WindowGraph") -> _GraphCache:
    cache = getattr(graph, "_cache", None)
    if cache is None:
        cache = _GraphCache(graph)
        graph._cache = cache
    return cache


def _pseudorange_terms(graph: "WindowGraph", states: np.ndarray):
    """Noise-model whitening terms per pseudorange factor at ``states``."""
    if getattr(graph.noise_model, "static_terms", False):
        cached = getattr(graph, "_static_terms", None)
        if cached is not None:
            return cached
    cache = _graph_cache(graph)
    eps, rng, _ = cache.epsilons(states)
    out = []
    for k, (node, obs, _) in enumerate(graph.pseudorange_factors):
        out.append(graph.noise_model.terms(obs.sat_id, float(eps[k]), float(rng[k]),
                                           graph.epochs[node]))
    if getattr(graph.noise_model, "static_terms", False):
        graph._static_terms = out
    return out


def _linearize(graph: "WindowGraph", states: np.ndarray, terms):
    """Stacked whitened Jacobian and residual vector for fixed terms."""
    cache = _graph_cache(graph)
    n_pr = cache.n_pr
    eps, _, u = cache.epsilons(states)
    mean = np.array([tm.mean for tm in terms]) if n_pr else np.zeros(0)
    sigma = np.array([tm.sigma for tm in terms]) if n_pr else np.ones(0)
    inv = 1.0 / sigma
    r_pr = (eps - mean) * inv
    J_pr = np.zeros((n_pr, cache.n_state))
    rows = np.arange(n_pr)
    cols = STATE_DIM * cache.node_idx
    for a in range(3):
        J_pr[rows, cols + a] = -u[:, a] * inv
    J_pr[rows, cols + 6] = -inv
    r_static = cache.J_static @ states + cache.c_static
    return np.vstack([J_pr, cache.J_static]), np.concatenate([r_pr, r_static])


def linearize(graph: WindowGraph, states: np.ndarray):
    """Whitened Jacobian/residual stack at ``states`` (terms from the noise model)."""
    states = np.asarray(states, dtype=float)
    if not np.all(np.isfinite(states)):
        raise ValueError("states must be finite")
    terms = _pseudorange_terms(graph, states)
    return _linearize(graph, states, terms)


def _kernel_groups(terms):
    """Indices of pseudorange rows grouped by their (hashable) kernel config."""
    groups: dict = {}
    for k, tm in enumerate(terms):
        groups.setdefault(tm.kernel, []).append(k)
    return {kern: np.array(idx) for kern, idx in groups.items()}


def _robust_cost(graph: WindowGraph, r: np.ndarray, terms, groups=None) -> float:
    """Total cost: kernel loss on robust pseudorange rows, quadratic elsewhere."""
    n_pr = len(graph.pseudorange_factors)
    cost = 0.5 * float(np.sum(r[n_pr:] ** 2))
    for kern, idx in (groups or _kernel_groups(terms)).items():
        if kern is None:
            cost += 0.5 * float(np.sum(r[idx] ** 2))
        else:
            cost += float(np.sum(kernels.loss(kern, r[idx])))
    return cost


def _row_weights(n_rows: int, r: np.ndarray, groups) -> np.ndarray:
    """IRLS weights: kernel weight on robust rows, unity elsewhere."""
    w = np.ones(n_rows)
    for kern, idx in groups.items():
        if kern is not None:
            w[idx] = kernels.weight(kern, r[idx])
    return w


@dataclass
class SolveResult:
    states: np.ndarray  # (n_nodes, 8)
    cost_trace: list[float]
    factor_weights: np.ndarray  # per pseudorange factor, at convergence
    hypotheses: list[int]  # per pseudorange factor (-1 for non-MH models)
    iterations: int
    converged: bool


def solve(graph: WindowGraph, config: SolverConfig | None = None) -> SolveResult:
    """Levenberg-Marquardt with an IRLS outer loop over robust weights.

    The cost trace records the robust objective at every accepted step;
    with the hypothesis set frozen per outer round it is non-increasing
    over accepted steps (IRLS majorizes each kernel loss).
    """
    cfg = config or graph.config
    x = graph.initial_states.copy()
    trace: list[float] = []
    total_iters = 0
    converged = False
    terms = _pseudorange_terms(graph, x)
    n_pr = len(graph.pseudorange_factors)
    w_rows = np.ones(0)

    n_outer = max(1, cfg.irls_max_outer)
    for outer in range(n_outer):
        terms = _pseudorange_terms(graph, x)
        groups = _kernel_groups(terms)
        J, r = _linearize(graph, x, terms)
        w_rows = _row_weights(len(r), r, groups)
        cost = _robust_cost(graph, r, terms, groups)
        if not np.isfinite(cost):
            raise DivergenceError(f"non-finite cost in window starting at epoch {graph.epochs[0]}")
        if not trace:
            trace.append(cost)

        lam = cfg.lm_initial_damping
        inner_done = False
        for it in range(cfg.max_iterations):
            total_iters += 1
            sw = np.sqrt(w_rows)
            Jw = J * sw[:, None]
            rw = r * sw
            H = Jw.T @ Jw
            g = Jw.T @ rw
            if outer == 0 and it == 0:
                diag = np.sqrt(np.clip(np.diag(H), 1e-300, None))
                Hs = H / diag[:, None] / diag[None, :]
                try:
                    pivots = np.diag(np.linalg.cholesky(Hs + 1e-14 * np.eye(len(Hs))))
                    if (pivots.min() / pivots.max()) ** 2 < 1.0 / _COND_LIMIT:
                        raise np.linalg.LinAlgError
                except np.linalg.LinAlgError:
                    raise SingularGeometryError(
                        f"rank-deficient window over epochs {graph.epochs[0]}..{graph.epochs[-1]}") from None
            accepted = False
            for _ in range(12):
                try:
                    delta = np.linalg.solve(H + lam * np.diag(np.diag(H)) + 1e-15 * np.eye(len(H)), -g)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                x_new = x + delta
                J_new, r_new = _linearize(graph, x_new, terms)
                cost_new = _robust_cost(graph, r_new, terms, groups)
                if not np.isfinite(cost_new):
                    lam *= 10.0
                    continue
                if cost_new <= cost:
                    accepted = True
                    break
                lam *= 10.0
            if not accepted:
                inner_done = True
                break
            rel = abs(cost - cost_new) / max(1.0, cost)
            x, J, r, cost = x_new, J_new, r_new, cost_new
            w_rows = _row_weights(len(r), r, groups)
            trace.append(cost)
            lam = max(lam * 0.25, 1e-12)
            if rel < cfg.cost_tolerance:
                inner_done = True
                break

        # refresh robust weights / hypotheses; stop when they are stable
        new_terms = _pseudorange_terms(graph, x)
        _, r_chk = _linearize(graph, x, new_terms)
        new_w = _row_weights(len(r_chk), r_chk, _kernel_groups(new_terms))
        changed = any(new_terms[k].d != terms[k].d for k in range(n_pr))
        if (not changed and inner_done
                and np.max(np.abs(new_w[:n_pr] - w_rows[:n_pr]),
                           initial=0.0) < cfg.irls_weight_tolerance):
            converged = True
            terms = new_terms
            w_rows = new_w
            break
        terms = new_terms

    if cfg.gradient_tolerance is not None:
        # Fixed-point polish: once cost changes fall below float resolution
        # the LM accept test stalls, but plain IRLS steps (which never
        # increase the robust cost in exact arithmetic) still contract the
        # gradient. Iterate until the robust normal equations hold.
        converged = False
        for _ in range(200):
            terms = _pseudorange_terms(graph, x)
            groups = _kernel_groups(terms)
            J, r = _linearize(graph, x, terms)
            w_rows = _row_weights(len(r), r, groups)
            grad = J.T @ (w_rows * r)
            if np.max(np.abs(grad)) <= cfg.gradient_tolerance:
                converged = True
                break
            Jw = J * np.sqrt(w_rows)[:, None]
            try:
                delta = np.linalg.solve(Jw.T @ Jw + 1e-12 * np.eye(len(x)), -grad)
            except np.linalg.LinAlgError:
                break
            x = x + delta
            total_iters += 1

    final_w = np.array([w_rows[k] for k in range(n_pr)])
    return SolveResult(states=x.reshape(graph.n_nodes, STATE_DIM),
                       cost_trace=trace, factor_weights=final_w,
                       hypotheses=[tm.d for tm in terms[:n_pr]],
                       iterations=total_iters, converged=converged)


# ---------------------------------------------------------------------------
# single-epoch fix and sequence runner


def single_epoch_fix(records, x0=None, max_iter=20):
    """Gauss-Newton position+clock fix from one epoch of observations.

    Returns (state4, residuals per observation). Needs >= 4 observations.
    """
    if len(records) < 4:
        raise SingularGeometryError("single-epoch fix needs at least 4 observations")
    x = np.zeros(4) if x0 is None else np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        J = np.zeros((len(records), 4))
        r = np.zeros(len(records))
        for i, (obs, sat) in enumerate(records):
            d = x[0:3] - sat.position
            rng = np.linalg.norm(d)
            if rng < 1.0:
                rng = 1.0
                d = np.array([1.0, 0.0, 0.0])
            u = d / rng
            r[i] = obs.rho - (rng + x[3] - sat.clock_bias + sat.corrections)
            J[i, 0:3] = -u
            J[i, 3] = -1.0
        H = J.T @ J
        if np.linalg.cond(H) > _COND_LIMIT:
            raise SingularGeometryError("degenerate single-epoch geometry")
        delta = np.linalg.solve(H, -J.T @ r)
        x = x + delta
        if np.linalg.norm(delta) < 1e-9:
            break
    return x, r


def _propagate(state: np.ndarray, dt: float) -> np.ndarray:
    out = state.copy()
    out[0:3] += state[3:6] * dt
    out[6] += state[7] * dt
    return out


def run_sequence(ds: EpochDataset, config: SolverConfig, noise_model,
                 model_bank: "vb_gmm.NoiseModelBank | None" = None,
                 epoch_indices: list[int] | None = None) -> list[dict]:
    """Slide the window across the dataset, one epoch at a time.

    Returns per-epoch diagnostics dicts. Failed windows are recorded and
    the state is propagated by the motion model so estimation continues.
    When ``model_bank`` is given, the bank is refit from trailing
    residuals before each epoch and its snapshots feed the noise model
    (sequential deterministic mode).
    """
    epochs = ds.epochs if epoch_indices is None else [ds.epochs[i] for i in epoch_indices]
    if not epochs:
        raise ValueError("empty dataset")
    estimates: dict[int, np.ndarray] = {}
    diagnostics: list[dict] = []
    window: list[EpochData] = []

    def init_state(ep: EpochData, prev: np.ndarray | None, dt: float) -> np.ndarray:
        if prev is not None:
            return _propagate(prev, dt)
        s = np.zeros(STATE_DIM)
        if len(ep.records) >= 4:
            try:
                fix, _ = single_epoch_fix(ep.records)
                s[0:3], s[6] = fix[0:3], fix[3]
                return s
            except SingularGeometryError:
                pass
        s[0:3] = ds.reference_position()
        return s

    for idx, ep in enumerate(epochs):
        window.append(ep)
        if len(window) > config.window_length:
            window.pop(0)
        if len(window) < 2:
            continue

        if model_bank is not None:
            model_bank.nested_update(ep.index)
            noise_model.models = model_bank.models
            noise_model.stale = model_bank.stale

        dt = window[-1].t - window[-2].t if len(window) >= 2 else 1.0
        init = []
        for w_ep in window:
            if w_ep.index in estimates:
                init.append(estimates[w_ep.index])
            else:
                prev = estimates.get(w_ep.index - 1)
                step = dt if prev is not None else 0.0
                init.append(init_state(w_ep, prev, step))
        init = np.concatenate(init)

        oldest = window[0].index
        if oldest in estimates and len(window) == config.window_length:
            prior = (0, estimates[oldest].copy(), config.anchor_sigma.copy())
        else:
            prior = "weak"

        t0 = time.perf_counter()
        failed = None
        try:
            graph = build_window(window, config, noise_model, init, prior)
            result = solve(graph, config)
            for i, w_ep in enumerate(window):
                estimates[w_ep.index] = result.states[i]
        except (SingularGeometryError, DivergenceError) as exc:
            failed = str(exc)
            prev = estimates.get(ep.index - 1)
            estimates[ep.index] = _propagate(prev, dt) if prev is not None else init[-STATE_DIM:]
        solve_ms = (time.perf_counter() - t0) * 1e3

        state = estimates[ep.index]
        residuals = {}
        rx = ReceiverHypothesis(state[0:3], state[6])
        for obs, sat in ep.records:
            residuals[obs.sat_id] = obs.rho - predict_pseudorange(rx, sat)
        if model_bank is not None:
            model_bank.add_samples([
                vb_gmm.ResidualSample(obs.sat_id, ep.index, residuals[obs.sat_id],
                                      float(np.linalg.norm(state[0:3] - sat.position)))
                for obs, sat in ep.records])

        diag = {
            "epoch": ep.index, "t": ep.t,
            "est_x": state[0], "est_y": state[1], "est_z": state[2],
            "clock_bias": state[6], "n_sats": len(ep.records),
            "solve_ms": solve_ms, "failed": failed,
            "residuals": residuals,
        }
        if ep.truth is not None:
            diag["truth_x"], diag["truth_y"], diag["truth_z"] = ep.truth.position
            diag["horizontal_error_m"] = geo.horizontal_error(state[0:3], ep.truth.position)
        diagnostics.append(diag)
    return diagnostics
