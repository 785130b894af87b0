"""Latent-space MCMC over a GAN surrogate prior for Bayesian inverse problems.

The package is organized around the two stages of the method:

* offline: simulate training pairs of PDE state and parameters, then fit a
  Wasserstein GAN (gradient-penalty variant) whose generator maps a
  low-dimensional Gaussian latent space onto the joint state-parameter prior
  (:mod:`mcgan.forward`, :mod:`mcgan.gan`);
* online: condition on observations by running gradient-based MCMC in the
  latent space, with the generator standing in for the forward model
  (:mod:`mcgan.bayes`, :mod:`mcgan.samplers`).

Supporting pieces: a small reverse-mode autodiff engine with the
forward-over-reverse second-order sweep needed by the gradient penalty
(:mod:`mcgan.autodiff`), Matern random-field priors (:mod:`mcgan.priors`),
ensemble-Kalman and polynomial-chaos baselines (:mod:`mcgan.baselines`),
and scoring / theory-validation utilities (:mod:`mcgan.metrics`).
"""

__version__ = "0.1.0"
