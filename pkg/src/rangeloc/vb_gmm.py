"""Online residual-noise approximation.

Per-satellite Gaussian mixtures are fitted over trailing windows of
pseudorange residuals by variational Bayes (Dirichlet + Normal-Wishart
conjugate priors, scalar case). The dominant mode drives a two-hypothesis
noise model per factor: either a robust Cauchy whitening (outlier
hypothesis, d=0) or the dominant-mode Gaussian whitening (learned
hypothesis, d=1). A closed-form posterior mean shift compensates the
motion-induced staleness of the fitted mode before the hypothesis test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from . import kernels

PRECISION_CAP = 1e8  # 1/m^2, guards zero-variance sample windows


class EmptyModelError(ValueError):
    """A mixture with no components cannot be queried."""


@dataclass(frozen=True)
class ResidualSample:
    sat_id: str
    epoch: int
    value: float  # pseudorange residual, m
    predicted_range: float  # geometric range when the residual was formed, m


@dataclass(frozen=True)
class GmmComponent:
    weight: float
    mean: float  # m
    precision: float  # 1/m^2
    anchor_epoch: int = -1  # most recent sample assigned to this component
    anchor_range: float = 0.0  # predicted range at that sample, m


@dataclass
class GmmNoiseModel:
    sat_id: str
    components: list[GmmComponent]
    fitted_at: int
    sample_count: int
    low_confidence: bool = False
    elbo_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.components:
            total = sum(c.weight for c in self.components)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"component weights sum to {total}, not 1")

    def to_dict(self) -> dict:
        return {
            "sat_id": self.sat_id,
            "fitted_at": self.fitted_at,
            "sample_count": self.sample_count,
            "low_confidence": self.low_confidence,
            "components": [
                {
                    "weight": c.weight,
                    "mean": c.mean,
                    "precision": c.precision,
                    "anchor_epoch": c.anchor_epoch,
                    "anchor_range": c.anchor_range,
                }
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmNoiseModel":
        return cls(
            sat_id=d["sat_id"],
            components=[GmmComponent(**c) for c in d["components"]],
            fitted_at=d["fitted_at"],
            sample_count=d["sample_count"],
            low_confidence=d.get("low_confidence", False),
        )


@dataclass(frozen=True)
class NwHyperparams:
    """Conjugate-prior settings for the variational mixture fit."""

    k_max: int = 5
    alpha0: float = 1.0  # Dirichlet concentration
    m0: float = 0.0  # mean prior, m
    beta0: float = 1e-3  # mean-precision scale
    nu0: float = 3.0  # Wishart degrees of freedom
    w0: float = 1.0  # Wishart scale, 1/m^2
    elbo_tolerance: float = 1e-6
    max_vb_iterations: int = 200
    prune_weight_threshold: float = 0.01
    elbo_check_interval: int = 1  # evaluate the bound every n-th sweep
    merge_distance_factor: float = 1.7  # merge modes closer than this many joint sigmas; 0 disables

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.elbo_check_interval < 1:
            raise ValueError("elbo_check_interval must be >= 1")
        if self.nu0 < 1:
            raise ValueError("nu0 must be >= 1 for the scalar case")
        if min(self.alpha0, self.beta0, self.w0) <= 0:
            raise ValueError("prior scales must be positive")


def _merge_close_components(comps: list[GmmComponent], factor: float) -> list[GmmComponent]:
    """Moment-match merge components whose means overlap within their scales.

    The variational update splits heavily-overlapping modes and leaves the
    duplicates with substantial weight, so weight pruning alone cannot
    remove them. Two components merge when their mean gap is below
    ``factor`` times the sum of their standard deviations.
    """
    comps = list(comps)
    while len(comps) > 1:
        best = None
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                a, b = comps[i], comps[j]
                scale = 1.0 / math.sqrt(a.precision) + 1.0 / math.sqrt(b.precision)
                ratio = abs(a.mean - b.mean) / scale
                if ratio < factor and (best is None or ratio < best[0]):
                    best = (ratio, i, j)
        if best is None:
            break
        _, i, j = best
        a, b = comps[i], comps[j]
        w = a.weight + b.weight
        mean = (a.weight * a.mean + b.weight * b.mean) / w
        second = (a.weight * (1.0 / a.precision + a.mean**2)
                  + b.weight * (1.0 / b.precision + b.mean**2)) / w
        var = max(second - mean**2, 1.0 / PRECISION_CAP)
        newest = a if a.anchor_epoch >= b.anchor_epoch else b
        merged = GmmComponent(w, mean, min(1.0 / var, PRECISION_CAP),
                              newest.anchor_epoch, newest.anchor_range)
        comps = [c for k, c in enumerate(comps) if k not in (i, j)] + [merged]
    return comps


def _sorted_components(comps: list[GmmComponent]) -> list[GmmComponent]:
    # descending weight; ties by larger precision, then smaller |mean|
    return sorted(comps, key=lambda c: (-c.weight, -c.precision, abs(c.mean)))


def _seed_means(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seeding for deterministic VB initialization."""
    means = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.asarray(means)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            means.append(x[rng.integers(len(x))])
            continue
        means.append(x[rng.integers(len(x))] if total == 0 else x[np.searchsorted(np.cumsum(d2 / total), rng.random())])
    return np.asarray(means)


def _elbo(x, r, alpha, beta, m, nu, w, hyper: NwHyperparams) -> float:
    n = len(x)
    k = len(alpha)
    nk = r.sum(axis=0) + 1e-300
    xbar = (r * x[:, None]).sum(axis=0) / nk
    sk = (r * (x[:, None] - xbar[None, :]) ** 2).sum(axis=0) / nk

    e_ln_pi = digamma(alpha) - digamma(alpha.sum())
    e_ln_lam = digamma(nu / 2.0) + math.log(2.0) + np.log(w)
    e_lam = nu * w

    def ln_b(w_, nu_):
        return -(nu_ / 2.0) * np.log(w_) - (nu_ / 2.0) * math.log(2.0) - gammaln(nu_ / 2.0)

    # likelihood
    lik = 0.5 * np.sum(nk * (e_ln_lam - math.log(2 * math.pi) - 1.0 / beta
                             - e_lam * sk - e_lam * (xbar - m) ** 2))
    # assignments
    pz = float((r * e_ln_pi[None, :]).sum())
    qz = float((r * np.log(np.clip(r, 1e-300, None))).sum())
    # mixing weights
    ppi = gammaln(k * hyper.alpha0) - k * gammaln(hyper.alpha0) + (hyper.alpha0 - 1.0) * e_ln_pi.sum()
    qpi = (gammaln(alpha.sum()) - gammaln(alpha).sum() + ((alpha - 1.0) * e_ln_pi).sum())
    # means and precisions
    pmu = 0.5 * np.sum(np.log(hyper.beta0 / (2 * math.pi)) + e_ln_lam
                       - hyper.beta0 / beta - hyper.beta0 * e_lam * (m - hyper.m0) ** 2)
    plam = (k * ln_b(hyper.w0, hyper.nu0) + ((hyper.nu0 - 2.0) / 2.0) * e_ln_lam.sum()
            - 0.5 * np.sum(e_lam / hyper.w0))
    qmulam = np.sum(0.5 * e_ln_lam + 0.5 * np.log(beta / (2 * math.pi)) - 0.5
                    - (-ln_b(w, nu) - ((nu - 2.0) / 2.0) * e_ln_lam + nu / 2.0))
    return float(lik + pz + ppi + pmu + plam - qz - qpi - qmulam)


def fit_vb_gmm(samples: list[ResidualSample], hyper: NwHyperparams | None = None,
               fitted_at: int | None = None, seed: int = 0) -> GmmNoiseModel:
    """Fit a scalar variational-Bayes mixture over a residual window.

    With fewer than ``k_max`` samples a single moment-matched Gaussian is
    returned and flagged low-confidence. Components with expected weight
    below the prune threshold are removed and the rest renormalized.
    """
    hyper = hyper or NwHyperparams()
    if not samples:
        raise ValueError("no samples")
    sat_id = samples[0].sat_id
    at = fitted_at if fitted_at is not None else max(s.epoch for s in samples)
    x = np.array([s.value for s in samples], dtype=float)
    n = len(x)

    if n < hyper.k_max:
        var = float(np.var(x))
        prec = min(1.0 / var, PRECISION_CAP) if var > 0 else PRECISION_CAP
        last = max(samples, key=lambda s: s.epoch)
        comp = GmmComponent(1.0, float(np.mean(x)), prec, last.epoch, last.predicted_range)
        return GmmNoiseModel(sat_id, [comp], at, n, low_confidence=True)

    k = hyper.k_max
    rng = np.random.default_rng(seed)
    means = _seed_means(x, k, rng)
    # hard-assignment responsibilities from the seeds start the loop
    r = np.zeros((n, k))
    r[np.arange(n), np.argmin((x[:, None] - means[None, :]) ** 2, axis=1)] = 1.0

    alpha = beta = m = nu = w = None
    trace: list[float] = []
    for it in range(hyper.max_vb_iterations):
        nk = r.sum(axis=0) + 1e-12
        xbar = (r * x[:, None]).sum(axis=0) / nk
        sk = (r * (x[:, None] - xbar[None, :]) ** 2).sum(axis=0) / nk

        alpha = hyper.alpha0 + nk
        beta = hyper.beta0 + nk
        m = (hyper.beta0 * hyper.m0 + nk * xbar) / beta
        nu = hyper.nu0 + nk
        w_inv = 1.0 / hyper.w0 + nk * sk + (hyper.beta0 * nk / beta) * (xbar - hyper.m0) ** 2
        w = 1.0 / np.clip(w_inv, 1e-300, None)

        e_ln_pi = digamma(alpha) - digamma(alpha.sum())
        e_ln_lam = digamma(nu / 2.0) + math.log(2.0) + np.log(w)
        quad = 1.0 / beta + nu * w * (x[:, None] - m[None, :]) ** 2
        ln_rho = e_ln_pi[None, :] + 0.5 * e_ln_lam[None, :] - 0.5 * math.log(2 * math.pi) - 0.5 * quad
        ln_rho -= ln_rho.max(axis=1, keepdims=True)
        r = np.exp(ln_rho)
        r /= r.sum(axis=1, keepdims=True)

        if it % hyper.elbo_check_interval == 0:
            trace.append(_elbo(x, r, alpha, beta, m, nu, w, hyper))
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) < hyper.elbo_tolerance * max(1.0, abs(trace[-2])):
                break

    weights = alpha / alpha.sum()
    keep = weights >= hyper.prune_weight_threshold
    weights = weights[keep] / weights[keep].sum()
    means_out = m[keep]
    precisions = np.clip(nu[keep] * w[keep], None, PRECISION_CAP)

    # per-component anchor: the most recent sample it best explains
    assign_all = np.argmax(r, axis=1)
    kept_idx = np.flatnonzero(keep)
    epochs = np.array([s.epoch for s in samples])
    ranges = np.array([s.predicted_range for s in samples])
    comps = []
    for j, ki in enumerate(kept_idx):
        mask = assign_all == ki
        if mask.any():
            i = np.flatnonzero(mask)[np.argmax(epochs[mask])]
            anchor_epoch, anchor_range = int(epochs[i]), float(ranges[i])
        else:
            anchor_epoch, anchor_range = int(epochs.max()), float(ranges[np.argmax(epochs)])
        comps.append(GmmComponent(float(weights[j]), float(means_out[j]),
                                  float(precisions[j]), anchor_epoch, anchor_range))

    if hyper.merge_distance_factor > 0:
        comps = _merge_close_components(comps, hyper.merge_distance_factor)
    model = GmmNoiseModel(sat_id, _sorted_components(comps), at, n)
    model.elbo_trace = trace
    return model


def dominant_component(gmm: GmmNoiseModel) -> GmmComponent:
    if not gmm.components:
        raise EmptyModelError(f"mixture for {gmm.sat_id} has no components")
    return gmm.components[0]


def shift_prior_variance(delta_r: float) -> float:
    """Prior variance of the mean shift given a range change Delta r.

    Sized so a 3-sigma (99%) bound on the shift equals Delta r; zero
    range change forbids any shift.
    """
    if delta_r < 0:
        raise ValueError("delta_r must be non-negative")
    return delta_r * delta_r / 9.0


@dataclass(frozen=True)
class MeanShiftResult:
    delta_mu: float  # m
    sigma_tilde: float  # m^2
    shifted_mean: float  # m


def posterior_mean_shift(epsilon: float, mu_k: float, lambda_k: float,
                         sigma_tilde: float) -> MeanShiftResult:
    """Closed-form MAP shift of the dominant mode toward the residual.

    Minimizes (eps - mu - dmu)^2 * lambda + dmu^2 / sigma_tilde, giving
    dmu = lambda * sigma_tilde * (eps - mu) / (1 + lambda * sigma_tilde).
    """
    if not lambda_k > 0:
        raise ValueError("lambda_k must be positive")
    if sigma_tilde < 0:
        raise ValueError("sigma_tilde must be non-negative")
    g = lambda_k * sigma_tilde
    delta_mu = g * (epsilon - mu_k) / (1.0 + g)
    return MeanShiftResult(delta_mu, sigma_tilde, mu_k + delta_mu)


def pseudo_prob_outlier(epsilon: float, mu_star: float, lambda_k: float) -> float:
    """Pseudo-probability of the robust (d=0) hypothesis.

    (2 pi)^{-1/2} * sqrt(lambda) * (1 - exp(-lambda (eps - mu*)^2 / 2)):
    zero at the shifted mean, saturating for far residuals.
    """
    if not lambda_k > 0:
        raise ValueError("lambda_k must be positive")
    u = lambda_k * (epsilon - mu_star) ** 2
    return math.sqrt(lambda_k / (2 * math.pi)) * (1.0 - math.exp(-0.5 * u))


def pseudo_prob_inlier(epsilon: float, mu_star: float, lambda_k: float) -> float:
    """Dominant-mode Gaussian density: the d=1 hypothesis score.

    Complements the d=0 score so the two sum to sqrt(lambda/2pi); the
    crossover sits at squared Mahalanobis distance 2 ln 2.
    """
    if not lambda_k > 0:
        raise ValueError("lambda_k must be positive")
    u = lambda_k * (epsilon - mu_star) ** 2
    return math.sqrt(lambda_k / (2 * math.pi)) * math.exp(-0.5 * u)


@dataclass(frozen=True)
class MhDecision:
    d: int  # 0 = robust Cauchy hypothesis, 1 = learned Gaussian mode
    pseudo_prob_d0: float
    pseudo_prob_d1: float
    mu_star: float = 0.0


def select_hypothesis(epsilon: float, gmm: GmmNoiseModel, shift_enabled: bool,
                      delta_r: float = 0.0) -> MhDecision:
    """Pick the active noise hypothesis for one residual.

    Ties resolve to d=1 (prefer the learned model at the boundary).
    """
    dom = dominant_component(gmm)
    lam = dom.precision
    if shift_enabled:
        sigma_tilde = shift_prior_variance(delta_r)
        mu_star = posterior_mean_shift(epsilon, dom.mean, dom.precision,
                                       sigma_tilde).shifted_mean
        # marginalizing the shift prior widens the mode by sigma_tilde
        lam = dom.precision / (1.0 + dom.precision * sigma_tilde)
    else:
        mu_star = dom.mean
    p0 = pseudo_prob_outlier(epsilon, mu_star, lam)
    p1 = pseudo_prob_inlier(epsilon, mu_star, lam)
    return MhDecision(1 if p1 >= p0 else 0, p0, p1, mu_star)


def mh_whiten(epsilon: float, decision: MhDecision, cauchy_sigma: float,
              gmm: GmmNoiseModel, cauchy_c: float | None = None) -> float:
    """Whitened scalar residual under the selected hypothesis.

    d=0: Cauchy-reweighted whitening sqrt(w(x)) * x with x = eps/sigma;
    d=1: sqrt(precision) * (eps - mu*).
    """
    if decision.d == 1:
        dom = dominant_component(gmm)
        return math.sqrt(dom.precision) * (epsilon - decision.mu_star)
    if not cauchy_sigma > 0:
        raise ValueError("cauchy_sigma must be positive")
    c = cauchy_c if cauchy_c is not None else kernels.tuning_constant(kernels.KernelFamily.CAUCHY, 0.90)
    x = epsilon / cauchy_sigma
    wgt = kernels.weight(kernels.KernelConfig(kernels.KernelFamily.CAUCHY, c), x)
    return math.sqrt(wgt) * x


class NoiseModelBank:
    """Trailing residual windows and their fitted mixture snapshots.

    The estimator pushes residual samples after each epoch; before the
    next epoch ``nested_update`` refits every satellite with enough
    trailing samples and publishes immutable snapshots. Satellites
    without enough samples keep their previous snapshot but are flagged
    stale so factors fall back to the robust hypothesis.
    """

    def __init__(self, hyper: NwHyperparams | None = None, window_epochs: int = 60,
                 min_samples: int = 20, refit_interval: int = 1, seed: int = 0):
        self.hyper = hyper or NwHyperparams()
        self.window_epochs = window_epochs
        self.min_samples = min_samples
        self.refit_interval = max(1, refit_interval)
        self.seed = seed
        self.buffers: dict[str, list[ResidualSample]] = {}
        self.models: dict[str, GmmNoiseModel] = {}
        self.stale: set[str] = set()
        self._last_fit: dict[str, int] = {}

    def add_samples(self, samples: list[ResidualSample]) -> None:
        for s in samples:
            buf = self.buffers.setdefault(s.sat_id, [])
            buf.append(s)

    def nested_update(self, current_epoch: int) -> None:
        """Refit per-satellite mixtures over [t-1-window, t-1]."""
        lo = current_epoch - 1 - self.window_epochs
        for sat_id, buf in self.buffers.items():
            buf[:] = [s for s in buf if s.epoch > lo and s.epoch <= current_epoch - 1]
            if len(buf) < self.min_samples:
                if sat_id in self.models:
                    self.stale.add(sat_id)
                continue
            due = current_epoch - self._last_fit.get(sat_id, -10**9) >= self.refit_interval
            if not due:
                continue
            # epoch-independent seed: successive refits share their random
            # initialization, so snapshots evolve only through the data
            seed = _snapshot_seed(self.seed, sat_id)
            self.models[sat_id] = fit_vb_gmm(list(buf), self.hyper,
                                             fitted_at=current_epoch - 1, seed=seed)
            self.stale.discard(sat_id)
            self._last_fit[sat_id] = current_epoch


def _snapshot_seed(base_seed: int, sat_id: str) -> int:
    import hashlib
    h = hashlib.blake2b(f"{base_seed}|{sat_id}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "big")
