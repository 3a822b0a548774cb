"""scikit-learn style wrapper around the sampler."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .diagnostics import point_estimates, residual_analysis, summarize, waic
from .filtering import kalman_filter, rts_smoother
from .model import build_local_linear_trend, build_random_walk_plus_noise
from .sampling import McmcConfig, PriorSpec, run_chains_parallel
from .validation import check_fraction, check_positive_int, check_series

__all__ = ["GarchStateSpace"]


class GarchStateSpace(BaseEstimator):
    """Bayesian state-space model with CCC-GARCH observation errors.

    ``fit`` runs the sampler; the other methods plug in posterior medians of
    the parameters. ``heteroskedastic=False`` fits the homoskedastic benchmark
    (constant ``V`` with an inverse-Wishart prior).

    Parameters
    ----------
    model_kind : {"rwpn", "trend"}
        Random walk plus noise, or a local linear trend per series.
    p, q : int
        ARCH and GARCH orders.
    n_chains, burn_in, thin, n_keep : int
        Run length; ``n_keep`` is the total retained across chains.
    random_state : int
        Root seed. Output does not depend on ``n_jobs``.

    Attributes
    ----------
    draws_ : PosteriorDraws
    waic_ : WaicReport
    garch_, R_, W_ : posterior-median point estimates
    states_mean_ : posterior mean of ``theta_{0:T}`` (when states are stored)
    """

    def __init__(self, heteroskedastic=True, model_kind="rwpn", p=1, q=1, m0=None, c0=None,
                 n_chains=2, burn_in=5000, thin=10, n_keep=1000, proposal_sd=None, adapt=True,
                 target_accept=0.3, store_states=True, marginal_W=True, n_jobs=1, random_state=0,
                 iw_df=10.0, iw_scale=None, obs_iw_df=10.0, obs_iw_scale=None, cauchy_scale_alpha0=1.0,
                 cauchy_scale_ab=1.0, cauchy_scale_udiag=1.0, normal_sd_uoffdiag=1.0, rho_uniform=True):
        self.heteroskedastic = heteroskedastic
        self.model_kind = model_kind
        self.p = p
        self.q = q
        self.m0 = m0
        self.c0 = c0
        self.n_chains = n_chains
        self.burn_in = burn_in
        self.thin = thin
        self.n_keep = n_keep
        self.proposal_sd = proposal_sd
        self.adapt = adapt
        self.target_accept = target_accept
        self.store_states = store_states
        self.marginal_W = marginal_W
        self.n_jobs = n_jobs
        self.random_state = random_state
        self.iw_df = iw_df
        self.iw_scale = iw_scale
        self.obs_iw_df = obs_iw_df
        self.obs_iw_scale = obs_iw_scale
        self.cauchy_scale_alpha0 = cauchy_scale_alpha0
        self.cauchy_scale_ab = cauchy_scale_ab
        self.cauchy_scale_udiag = cauchy_scale_udiag
        self.normal_sd_uoffdiag = normal_sd_uoffdiag
        self.rho_uniform = rho_uniform

    def _spec(self, n):
        if self.model_kind == "rwpn":
            return build_random_walk_plus_noise(n, m0=self.m0, c0=self.c0)
        if self.model_kind == "trend":
            return build_local_linear_trend(n, m0=self.m0, c0=self.c0)
        raise ValueError(f"model_kind must be 'rwpn' or 'trend', got {self.model_kind!r}")

    def _configs(self):
        check_positive_int(self.n_chains, "n_chains")
        check_positive_int(self.thin, "thin")
        check_positive_int(self.burn_in, "burn_in", minimum=0)
        check_positive_int(self.n_keep, "n_keep", minimum=2)
        check_positive_int(self.n_jobs, "n_jobs")
        check_fraction(self.target_accept, "target_accept")
        if self.heteroskedastic:
            check_positive_int(self.p, "p", minimum=0)
            check_positive_int(self.q, "q", minimum=0)
            if self.p + self.q == 0:
                raise ValueError("p + q must be positive for a heteroskedastic fit")
        priors = PriorSpec(
            cauchy_scale_alpha0=self.cauchy_scale_alpha0, cauchy_scale_ab=self.cauchy_scale_ab,
            cauchy_scale_udiag=self.cauchy_scale_udiag, normal_sd_uoffdiag=self.normal_sd_uoffdiag,
            iw_df=self.iw_df, iw_scale=self.iw_scale, rho_uniform=self.rho_uniform,
            obs_iw_df=self.obs_iw_df, obs_iw_scale=self.obs_iw_scale,
        )
        proposal = {"garch": 0.05, "corr": 0.05, **(self.proposal_sd or {})}
        mcmc = McmcConfig(
            n_chains=self.n_chains, burn_in=self.burn_in, thin=self.thin, n_keep=self.n_keep,
            proposal_sd=proposal, adapt=self.adapt, target_accept=self.target_accept,
            seed=self.random_state, store_states=self.store_states, marginal_W=self.marginal_W,
            n_jobs=self.n_jobs,
        )
        return priors, mcmc

    def fit(self, X, y=None):
        """Sample the posterior given series ``X`` (T x n, NaN = missing). ``y`` is ignored."""
        data = check_series(X)
        priors, mcmc = self._configs()
        spec = self._spec(data.n)
        model = "garch" if self.heteroskedastic else "dlm"
        orders = (self.p, self.q) if self.heteroskedastic else (0, 0)
        self.draws_ = run_chains_parallel(data, spec, priors, mcmc, model=model, orders=orders)
        self.spec_ = spec
        self.n_features_in_ = data.n
        self.garch_, self.R_, self.W_ = point_estimates(self.draws_)
        self.waic_ = waic(self.draws_.pointwise_lp)
        self.states_mean_ = None if self.draws_.states is None else self.draws_.states.mean(axis=0)
        self.acceptance_rates_ = dict(self.draws_.acceptance_rates)
        self._train = data
        return self

    def summary(self):
        """Posterior summaries keyed by parameter name."""
        check_is_fitted(self, "draws_")
        return summarize(self.draws_)

    def _filter(self, X):
        check_is_fitted(self, "draws_")
        data = self._train if X is None else check_series(X, n_features=self.n_features_in_)
        return data, kalman_filter(data, self.spec_, self.garch_, self.R_, self.W_)

    def predict(self, X=None):
        """One-step-ahead forecast means ``E[y_t | y_{1:t-1}]`` (T x n) at the point estimates."""
        return self._filter(X)[1].f.copy()

    def predict_variance(self, X=None):
        """One-step-ahead forecast covariances (T x n x n) at the point estimates."""
        return self._filter(X)[1].Q.copy()

    def transform(self, X=None):
        """Heteroskedasticity-adjusted residuals (T x n, NaN where missing).

        For the training data (``X=None``) the state estimate is the posterior
        mean path; for new data it is the smoothed mean at the point estimates.
        """
        data, out = self._filter(X)
        if X is None and self.states_mean_ is not None:
            states = self.states_mean_
        else:
            states = rts_smoother(out, self.spec_)[0]
        return residual_analysis(data, self.spec_, self.garch_, self.R_, self.W_, states).standardized

    def score(self, X=None, y=None):
        """Log predictive density of ``X`` at the point estimates (higher is better)."""
        return self._filter(X)[1].loglik
