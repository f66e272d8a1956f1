# coding: utf-8

# # Pooling plausible values into domain estimates
#
# Each plausible value gives its own domain mean and sampling variance. The
# pooled estimate is their average; the pooled variance adds the average
# sampling variance to the spread between imputations, inflated by `1 + 1/L`.

# In[1]:

import numpy as np

from irtsae.combine import combine_domains, rubin_combine
from irtsae.irt import PlausibleValueSet


# Two imputations with equal sampling variance 0.5 and points 1 and 3:
# within = 0.5, between = 2, total = 0.5 + 1.5 * 2 = 3.5.

# In[2]:

est = rubin_combine([(1.0, 0.5), (3.0, 0.5)])
print(est.gamma_hat, est.within, est.between, est.sigma2_d)


# # Per-domain pooling
#
# Three domains of 40 students, five draws each. The measurement noise is
# shared across the draws of a student, so the between-imputation part stays
# small next to the sampling variance.

# In[3]:

rng = np.random.default_rng(2)
domain = np.repeat(["north", "south", "west"], 40)
ability = rng.normal(0, 1, 120) + np.select([domain == "south", domain == "west"], [0.3, -0.2], 0.0)
draws = ability[:, None] + rng.normal(0, 0.3, (120, 5))
pvs = PlausibleValueSet(draws, domain_of=domain).transformed(500, 100)

for e in combine_domains(pvs, N_sizes={"north": 400, "south": 400, "west": 400}):
    print(f"{e.domain:>6}  mean {e.gamma_hat:7.2f}  var {e.sigma2_d:6.2f}  (within {e.within:6.2f}, between {e.between:5.2f})")
