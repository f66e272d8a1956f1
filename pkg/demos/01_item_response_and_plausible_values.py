# coding: utf-8

# # Item response calibration and plausible values
#
# The chance of a correct answer rises with ability along a logistic curve;
# each item has its own slope (`a`), location (`b`) and guessing floor (`c`).
# Here we simulate a test, recover the item parameters by marginal maximum
# likelihood and then draw plausible values for each student.

# In[1]:

import numpy as np

from irtsae.irt import EMConfig, ItemBank, ItemParams, ResponseMatrix, calibrate_em, draw_plausible_values, irf

rng = np.random.default_rng(0)


# At the difficulty the curve passes through the midpoint between the guessing floor and 1:

# In[2]:

item = ItemParams(a=1.2, b=-0.5, c=0.2)
print(irf(-0.5, item), irf([-3.0, 0.0, 3.0], item))


# # Simulating responses with planned missingness
#
# 1,500 students, 30 items, students also carry two background covariates that
# shift their ability. A fifth of the cells are hidden completely at random.

# In[3]:

true_bank = ItemBank(rng.uniform(0.5, 2.0, 30), rng.uniform(-2.0, 2.0, 30))
z = rng.standard_normal((1500, 2))
theta = 0.4 * z[:, 0] - 0.3 * z[:, 1] + rng.normal(0, 0.85, 1500)
theta = (theta - theta.mean()) / theta.std()

y = (rng.random((1500, 30)) < true_bank.prob(theta)).astype(float)
y[rng.random(y.shape) < 0.2] = np.nan
responses = ResponseMatrix(y)
print(responses.values.shape, np.isnan(responses.values).mean().round(3))


# In[4]:

fit = calibrate_em(responses, z, EMConfig(tol=1e-6))
print("converged:", fit.converged, "after", fit.n_iter, "iterations")
print("RMSE a:", np.sqrt(np.mean((fit.bank.a - true_bank.a) ** 2)).round(3))
print("RMSE b:", np.sqrt(np.mean((fit.bank.b - true_bank.b) ** 2)).round(3))
print("latent regression:", fit.regression.gamma.round(3), "residual variance", round(fit.regression.sigma2, 3))


# The log-likelihood never decreases across EM iterations:

# In[5]:

print(np.diff(fit.loglik).min() >= -1e-10, fit.loglik[0], fit.loglik[-1])


# # Plausible values
#
# Each student gets five draws from the posterior of ability given their
# observed answers and covariates. Draws, not point estimates, are what the
# domain estimators average.

# In[6]:

pvs = draw_plausible_values(responses, fit.bank, fit.regression, L=5, seed=1, covariates=z)
print(pvs.draws[:3].round(2))
print("corr(mean PV, theta):", np.corrcoef(pvs.draws.mean(axis=1), theta)[0, 1].round(3))
print("PV variance:", pvs.draws.var().round(3), " (the draws keep the population spread)")
