import hashlib
import time
from pathlib import Path

import pytest

import irtsae
from irtsae.simulation import SimConfig, SimGrid, run_simulation


def _source_digest():
    h = hashlib.sha256()
    for path in sorted(Path(irtsae.__file__).parent.glob("*.py")):
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def desk_rows(request):
    """Desk-scale grid at 10% missing and high correlation.

    Returns ``{"rows": [...], "seconds": ...}`` with one row per cell and the
    time the grid took when it was computed. The result is cached under a key that changes whenever the library source
    does, so separate pytest processes in one session share a single run.
    """
    cfg = SimConfig()
    key = f"irtsae/desk/{_source_digest()}/{hashlib.sha256(repr(cfg).encode()).hexdigest()[:12]}"
    cached = request.config.cache.get(key, None)
    if cached is None:
        start = time.perf_counter()
        rows = run_simulation(SimGrid(base=cfg, missing_rates=(0.10,)))
        cached = {"rows": rows, "seconds": time.perf_counter() - start}
        request.config.cache.set(key, cached)
    return cached


def cell(rows, f_d, f_n):
    return next(r for r in rows if r["f_d"] == f_d and r["f_n"] == f_n)
