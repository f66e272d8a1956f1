"""CSV schemas, configuration, run manifests and the bundled PISA 2015 fixture.

Data files may start with ``#`` comment lines; these carry the reference to
the run manifest and, for some outputs, fitted scalars. Floats are written
with ``repr`` so that a write followed by a read reproduces them exactly.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import os
import platform
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import RankError, SchemaError, ValidationError
from .fayherriot import AreaDesign, FHFit
from .irt import ItemBank, LatentRegression, PlausibleValueSet, ResponseMatrix

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_ENV = "IRTSAE_SEED"
AREA_REQUIRED = ("domain_id", "gamma_hat", "sigma2_d")
# columns written by the pooling step that a fit input may carry along
AREA_PASSTHROUGH = ("within", "between", "L", "n_d")
FIT_COLUMNS = ("domain_id", "eblup", "B", "g1", "g2", "g3", "mse", "eer_pct", "dif_rel_pct")
ESTIMATE_COLUMNS = ("domain_id", "ht", "ht_var", "cal", "cal_var", "comp", "comp_var")
AREA_OUT_COLUMNS = ("domain_id", "gamma_hat", "sigma2_d", "within", "between", "L", "n_d")


# --------------------------------------------------------------------- basics

def fmt_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _numbered(header, prefix):
    cols = [h for h in header if re.fullmatch(rf"{prefix}_\d+", h)]
    return sorted(cols, key=lambda h: int(h.split("_")[-1]))


def read_table(path):
    """Return ``(comments, header, rows)``; comment lines lose their ``# `` prefix."""
    comments, lines = [], []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif line.strip():
                lines.append(line)
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError(f"{path}: file has no header") from None
    rows = [r for r in reader]
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {i} has {len(r)} fields, header has {len(header)}")
    return comments, header, rows


def render_table(columns, rows, fmt="csv", comments=()) -> str:
    """Format rows (sequences aligned with ``columns``) as CSV, markdown or aligned text."""
    cells = [[fmt_value(v) for v in r] for r in rows]
    if fmt == "csv":
        buf = _io.StringIO()
        for c in comments:
            buf.write(f"# {c}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows(cells)
        return buf.getvalue()
    if fmt == "md":
        out = [f"<!-- {c} -->" for c in comments]
        out.append("| " + " | ".join(columns) + " |")
        out.append("|" + "|".join("---" for _ in columns) + "|")
        out += ["| " + " | ".join(r) + " |" for r in cells]
        return "\n".join(out) + "\n"
    if fmt == "text":
        widths = [max(len(str(c)), *(len(r[k]) for r in cells)) if cells else len(str(c)) for k, c in enumerate(columns)]
        out = [f"# {c}" for c in comments]
        out.append("  ".join(str(c).rjust(w) for c, w in zip(columns, widths)))
        out += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells]
        return "\n".join(out) + "\n"
    raise ValidationError(f"unknown output format {fmt!r}")


def write_table(path, columns, rows, fmt="csv", comments=()):
    text = render_table(columns, rows, fmt, comments)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _float(cell, row, col, path):
    try:
        v = float(cell)
    except ValueError:
        raise ValidationError(f"{path}: row {row}, column {col!r}: {cell!r} is not a number") from None
    if not math.isfinite(v):
        raise ValidationError(f"{path}: row {row}, column {col!r}: value must be finite")
    return v


# ------------------------------------------------------------------ responses

def read_responses(path) -> ResponseMatrix:
    """Read ``person_id,domain_id,item_1..item_I`` with cells ``0``, ``1`` or ``NA``."""
    _, header, rows = read_table(path)
    if header[:2] != ["person_id", "domain_id"]:
        raise SchemaError(f"{path}: header must start with person_id,domain_id")
    items = header[2:]
    if not items or items != _numbered(header, "item"):
        raise SchemaError(f"{path}: item columns must be item_1..item_I in order")
    values = np.empty((len(rows), len(items)))
    for i, r in enumerate(rows, start=1):
        for j, cell in enumerate(r[2:]):
            cell = cell.strip()
            if cell == "NA":
                values[i - 1, j] = np.nan
            elif cell in ("0", "1"):
                values[i - 1, j] = float(cell)
            else:
                raise ValidationError(f"{path}: row {i}, column {items[j]!r}: expected 0, 1 or NA, got {cell!r}")
    return ResponseMatrix(values, np.array([r[1] for r in rows]), np.array([r[0] for r in rows]))


def write_responses(path, responses: ResponseMatrix, comments=()):
    cols = ["person_id", "domain_id"] + [f"item_{j + 1}" for j in range(responses.n_items)]
    rows = []
    for pid, dom, vals in zip(responses.person_ids, responses.domain_of, responses.values):
        rows.append([pid, dom] + ["NA" if np.isnan(v) else str(int(v)) for v in vals])
    write_table(path, cols, rows, comments=comments)


def read_person_table(path, prefix):
    """Read ``person_id,<prefix>_1..`` (or ``domain_id,...``) into ids and a matrix."""
    _, header, rows = read_table(path)
    cols = _numbered(header, prefix)
    if not cols:
        raise SchemaError(f"{path}: no {prefix}_k columns")
    idx = [header.index(c) for c in cols]
    mat = np.array([[_float(r[k], i, header[k], path) for k in idx] for i, r in enumerate(rows, start=1)])
    return [r[0] for r in rows], mat


# ------------------------------------------------------------------ item bank

def write_item_bank(path, bank: ItemBank, regression: LatentRegression = None, comments=()):
    comments = list(comments) + [f"scale: {bank.scale!r}"]
    if regression is not None:
        comments += [
            "latent_gamma: " + " ".join(repr(float(g)) for g in regression.gamma),
            f"latent_sigma2: {float(regression.sigma2)!r}",
        ]
    rows = [[f"item_{j + 1}", bank.a[j], bank.b[j], bank.c[j]] for j in range(bank.n_items)]
    write_table(path, ["item_id", "a", "b", "c"], rows, comments=comments)


def read_item_bank(path):
    """Return ``(bank, regression)``; ``regression`` is ``None`` unless stored in the header."""
    comments, header, rows = read_table(path)
    if header != ["item_id", "a", "b", "c"]:
        raise SchemaError(f"{path}: header must be item_id,a,b,c")
    meta = dict(c.split(":", 1) for c in comments if ":" in c)
    meta = {k.strip(): v.strip() for k, v in meta.items()}
    num = [[_float(r[k], i, header[k], path) for k in (1, 2, 3)] for i, r in enumerate(rows, start=1)]
    a, b, c = np.array(num).T
    bank = ItemBank(a, b, c, float(meta.get("scale", 1.7)))
    reg = None
    if "latent_gamma" in meta:
        reg = LatentRegression([float(x) for x in meta["latent_gamma"].split()], float(meta["latent_sigma2"]))
    return bank, reg


# ---------------------------------------------------------- plausible values

def write_pvs(path, pvs: PlausibleValueSet, comments=()):
    cols = ["person_id", "domain_id"] + [f"pv_{k + 1}" for k in range(pvs.L)]
    rows = [[p, d, *row] for p, d, row in zip(pvs.person_ids, pvs.domain_of, pvs.draws)]
    write_table(path, cols, rows, comments=comments)


def read_pvs(path) -> PlausibleValueSet:
    _, header, rows = read_table(path)
    if header[:2] != ["person_id", "domain_id"] or header[2:] != _numbered(header, "pv") or len(header) < 4:
        raise SchemaError(f"{path}: header must be person_id,domain_id,pv_1..pv_L with L >= 2")
    draws = np.array([[_float(c, i, header[k + 2], path) for k, c in enumerate(r[2:])] for i, r in enumerate(rows, start=1)])
    return PlausibleValueSet(draws, np.array([r[0] for r in rows]), np.array([r[1] for r in rows]))


def write_area_estimates(path, estimates, fmt="csv", comments=()):
    rows = [[e.domain, e.gamma_hat, e.sigma2_d, e.within, e.between, e.L, e.n_d] for e in estimates]
    write_table(path, AREA_OUT_COLUMNS, rows, fmt, comments)


# ------------------------------------------------------------- area designs

def ingest_area_csv(path, intercept: bool = True) -> AreaDesign:
    """Validate and load ``domain_id,gamma_hat,sigma2_d,x_1..x_p``.

    An intercept column is prepended unless ``intercept`` is false or one of
    the ``x_k`` columns is already constant. Columns produced by the pooling
    step (``within``, ``between``, ``L``, ``n_d``) are accepted and ignored.

    Raises
    ------
    SchemaError
        Required column missing or an unrecognised column present.
    ValidationError
        Non-numeric, non-finite or nonpositive-variance cell; the message
        names the row and column.
    RankError
        The covariate matrix is rank deficient.
    """
    path = str(path)
    _, header, rows = read_table(path)
    missing = [c for c in AREA_REQUIRED if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
    xcols = _numbered(header, "x")
    unknown = [h for h in header if h not in AREA_REQUIRED + AREA_PASSTHROUGH and h not in xcols]
    if unknown:
        raise SchemaError(f"{path}: unrecognised column(s) {', '.join(unknown)}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    ids, gam, s2, X = [], [], [], []
    for i, r in enumerate(rows, start=1):
        rec = dict(zip(header, r))
        ids.append(rec["domain_id"])
        gam.append(_float(rec["gamma_hat"], i, "gamma_hat", path))
        v = _float(rec["sigma2_d"], i, "sigma2_d", path)
        if v <= 0:
            raise ValidationError(f"{path}: row {i} ({rec['domain_id']}), column 'sigma2_d': variance must be positive, got {v!r}")
        s2.append(v)
        X.append([_float(rec[c], i, c, path) for c in xcols])
    X = np.array(X, dtype=float).reshape(len(rows), len(xcols))
    if intercept and not (X.shape[1] and np.any(np.ptp(X, axis=0) == 0)):
        X = np.column_stack([np.ones(len(rows)), X])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankError(f"{path}: covariate columns are linearly dependent")
    return AreaDesign(X, gam, s2, np.array(ids))


def write_area_csv(path, design: AreaDesign, comments=()):
    """Inverse of :func:`ingest_area_csv` (a leading column of ones is dropped)."""
    X = design.X
    if X.shape[1] and np.all(X[:, 0] == 1.0):
        X = X[:, 1:]
    cols = list(AREA_REQUIRED) + [f"x_{k + 1}" for k in range(X.shape[1])]
    rows = [[d, g, s, *x] for d, g, s, x in zip(design.domain_ids, design.gamma_hat, design.sigma2, X)]
    write_table(path, cols, rows, comments=comments)


def fit_rows(design: AreaDesign, fit: FHFit, eer, dif):
    return [
        [d, fit.eblup[k], fit.B[k], fit.g1[k], fit.g2[k], fit.g3[k], fit.mse[k], eer[k], dif[k]]
        for k, d in enumerate(design.domain_ids)
    ]


def fit_header(fit: FHFit):
    return [
        f"method: {fit.method}",
        f"sigma2_u: {fit.sigma2_u!r}",
        f"var_sigma2_u: {fit.var_sigma2_u!r}",
        "beta: " + " ".join(repr(float(b)) for b in fit.beta),
    ]


# -------------------------------------------------------------- PISA fixture

@dataclass(frozen=True)
class PisaFixtureRow:
    country: str
    sigma2_d: float
    B_d: float
    one_minus_B_d: float
    xb: float
    gamma_hat: float
    gamma_P: float
    g1: float
    g2: float
    g3: float
    mse: float
    cve_pct: float
    eer_pct: float
    dif_rel_pct: float


PISA_SIGMA2_U = 986.58


def load_pisa_fixture():
    """The 55 country rows of the PISA 2015 mathematics application, as printed."""
    text = resources.files("irtsae").joinpath("data/pisa2015_math.csv").read_text()
    reader = csv.DictReader(_io.StringIO(text))
    names = [f.name for f in fields(PisaFixtureRow)]
    if reader.fieldnames != names:
        raise SchemaError("bundled fixture header does not match PisaFixtureRow")
    return [PisaFixtureRow(r["country"], *(float(r[n]) for n in names[1:])) for r in reader]


def pisa_area_design(rows=None) -> AreaDesign:
    """Area design with covariates ``[1, synthetic value]`` per country."""
    rows = rows or load_pisa_fixture()
    xb = np.array([r.xb for r in rows])
    return AreaDesign(
        np.column_stack([np.ones(len(rows)), xb]),
        [r.gamma_hat for r in rows],
        [r.sigma2_d for r in rows],
        np.array([r.country for r in rows]),
    )


REPLAY_FIELDS = ("B_d", "gamma_P", "g1", "g2", "g3", "mse", "eer_pct", "dif_rel_pct")


def replay_pisa_fixture(sigma2_u: float = PISA_SIGMA2_U):
    """Recompute the printed country columns from sampling variances, direct
    estimates, synthetic values and the published between-country variance.

    Shrinkage, predictions, ``g1`` and the REML ``g3`` follow from those inputs.
    ``g2`` needs the raw country covariates, which are not published, so the
    printed ``g2`` is carried into the MSE.

    Returns
    -------
    list of dict
        One dict per country with ``<field>`` (recomputed),
        ``<field>_printed`` and ``<field>_delta`` for each replayed field.
    """
    rows = load_pisa_fixture()
    s2 = np.array([r.sigma2_d for r in rows])
    v = sigma2_u + s2
    B = s2 / v
    gamma_P = (1 - B) * np.array([r.gamma_hat for r in rows]) + B * np.array([r.xb for r in rows])
    g1 = s2 * (1 - B)
    g2 = np.array([r.g2 for r in rows])
    var_s2u = 2.0 / np.sum(v**-2.0)
    g3 = s2**2 / v**3 * var_s2u
    mse = g1 + g2 + 2 * g3
    eer = np.sqrt(mse) / gamma_P * 100
    dif = (s2 - mse) / s2 * 100
    recomputed = dict(B_d=B, gamma_P=gamma_P, g1=g1, g2=g2, g3=g3, mse=mse, eer_pct=eer, dif_rel_pct=dif)
    out = []
    for k, r in enumerate(rows):
        rec = {"country": r.country}
        for f in REPLAY_FIELDS:
            printed = getattr(r, f)
            rec[f] = float(recomputed[f][k])
            rec[f + "_printed"] = printed
            rec[f + "_delta"] = rec[f] - printed
        out.append(rec)
    return out


# ---------------------------------------------------------- config/manifest

def default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class RunManifest:
    """Provenance of one command invocation; the only file holding timestamps."""

    command: str
    seed: int
    config: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    versions: dict = field(default_factory=dict)
    config_hash: str = ""
    started: str = ""
    finished: str = ""

    def __post_init__(self):
        if not self.versions:
            import scipy

            from . import __version__

            self.versions = {
                "irtsae": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            }
        if not self.config_hash:
            self.config_hash = config_hash({"command": self.command, "seed": self.seed, **self.config})
        if not self.started:
            self.started = _now()

    @staticmethod
    def path_for(output) -> Path:
        p = Path(output)
        return p.with_name(p.name + ".manifest.json")

    def reference(self, output) -> str:
        """Comment line tying a data file to this manifest; free of timestamps."""
        return f"manifest: {self.path_for(output).name} config_sha256={self.config_hash}"

    def write(self, output):
        self.finished = _now()
        self.outputs = sorted(set(self.outputs) | {str(output)})
        path = self.path_for(output)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
