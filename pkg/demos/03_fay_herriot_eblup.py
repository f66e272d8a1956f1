# coding: utf-8

# # Area-level model for PISA 2015 mathematics
#
# The bundled fixture holds 55 countries: their direct means, sampling
# variances and the regression prediction from country-level indicators.
# The area model blends each direct mean with its regression prediction,
# trusting the direct mean more when its sampling variance is small relative to
# the between-country variance.

# In[1]:

import numpy as np

from irtsae.fayherriot import fit_fay_herriot, fit_quality
from irtsae.io import PISA_SIGMA2_U, pisa_area_design, replay_pisa_fixture

design = pisa_area_design()
print(design.D, "countries, covariates:", design.p)


# # Replaying the published country table
#
# Given the published between-country variance, everything else in the table
# follows from the fixture's own columns.

# In[2]:

rows = replay_pisa_fixture()
for r in rows[:5]:
    print(f"{r['country']:<22} B {r['B_d']:.4f} (printed {r['B_d_printed']:.2f})  "
          f"pred {r['gamma_P']:7.2f} (printed {r['gamma_P_printed']:.0f})  MSE {r['mse']:.4f} (printed {r['mse_printed']:.4f})")
print("largest relative MSE gap:", max(abs(r["mse_delta"]) / r["mse_printed"] for r in rows))


# # Refitting the variance component
#
# The fixture's regression prediction stands in for the raw indicators, so a
# refit uses `[1, prediction]` as covariates. The three estimators of the
# between-area variance give similar answers on these data.

# In[3]:

for method in ("prasad-rao", "ml", "reml"):
    fit = fit_fay_herriot(design, method)
    print(f"{method:<10} sigma2_u {fit.sigma2_u:8.2f}  Var {fit.var_sigma2_u:10.1f}  mean MSE {fit.mse.mean():.3f}")


# # Fixed at the published variance

# In[4]:

fit = fit_fay_herriot(design, "reml", sigma2_u=PISA_SIGMA2_U)
eer, dif = fit_quality(fit, design)
k = list(design.domain_ids).index("Albania")
print("Albania: B", round(fit.B[k], 4), "prediction", round(fit.eblup[k], 2),
      "g1", round(fit.g1[k], 4), "EER %", round(eer[k], 4))
print("MSE below sampling variance in", int(np.sum(dif > 0)), "of", design.D, "countries")
