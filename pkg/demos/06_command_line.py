# coding: utf-8

# # The `irtsae` command line
#
# Every capability is also a subcommand. Here they are called through `main`
# inside a scratch directory; from a shell the same arguments follow `irtsae`.

# In[1]:

import tempfile
from pathlib import Path

from irtsae.cli import main

work = Path(tempfile.mkdtemp())


# Replay the PISA country table and export the fixture as a model input:

# In[2]:

main(["replay-pisa", "--out", str(work / "replay.csv"), "--export-areas", str(work / "areas.csv")])
print((work / "areas.csv").read_text().splitlines()[:3])


# Fit the area model and render the result as markdown:

# In[3]:

main(["fit-fh", "--in", str(work / "areas.csv"), "--method", "reml", "--out", str(work / "fit.csv")])
main(["report", "--in", str(work / "fit.csv"), "--format", "md"])


# A tiny simulation driven by a TOML file. Each output gets a manifest with the
# seed, versions and a hash of the configuration.

# In[4]:

(work / "sim.toml").write_text("N = 400\nD = 10\nI = 10\nR = 5\nburn_in = 50\nthin = 5\nf_d = 0.5\nf_n = [0.1, 0.3]\n")
main(["simulate", "--config", str(work / "sim.toml"), "--out", str(work / "sim.csv"), "--seed", "3"])
main(["report", "--in", str(work / "sim.csv")])
print((work / "sim.csv.manifest.json").read_text())


# Bad input exits with status 1 and a message naming the problem:

# In[5]:

(work / "bad.csv").write_text("domain_id,gamma_hat,sigma2_d\nA,500,4\nB,480,0\nC,510,3\n")
print("exit status:", main(["fit-fh", "--in", str(work / "bad.csv")]))
