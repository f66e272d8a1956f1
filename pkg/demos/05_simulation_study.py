# coding: utf-8

# # Monte Carlo comparison at small scale
#
# One synthetic population is generated, masked, calibrated and given
# plausible values; each replicate then samples domains and students and scores
# the four estimators against the known domain means. This run is small enough
# to finish in well under a minute. The desk-scale defaults (`SimConfig()`) take
# about a minute and a half per missing rate.

# In[1]:

from irtsae.simulation import SimConfig, SimGrid, run_simulation

base = SimConfig(N=4000, D=40, I=30, R=60, burn_in=200, thin=20)
grid = SimGrid(base=base, f_d=(0.3, 0.7), f_n=(0.05, 0.2))
rows = run_simulation(grid, progress=lambda r: print("done", r["f_d"], r["f_n"]))


# Mean relative error (percent) per estimator; the last column is the relative
# bias of the area-level predictor.

# In[2]:

print(f"{'f_d':>5} {'f_n':>5} {'Dir':>6} {'Cal':>6} {'Comp':>6} {'P':>6} {'SBR P':>7}")
for r in rows:
    print(f"{r['f_d']:5.2f} {r['f_n']:5.2f} {r['eerp_dir']:6.2f} {r['eerp_cal']:6.2f} "
          f"{r['eerp_comp']:6.2f} {r['eerp_p']:6.2f} {r['sbr_p']:7.3f}")
