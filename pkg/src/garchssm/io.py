"""CSV ingestion and serialisation, plus the flat ``key = value`` run configuration."""
from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .model import (
    GarchParams,
    ModelSpec,
    SeriesData,
    build_local_linear_trend,
    build_random_walk_plus_noise,
    correlation_from_factor,
    correlation_from_rho,
)
from .sampling import McmcConfig, PriorSpec

__all__ = [
    "CsvFormatError",
    "ConfigError",
    "RunConfig",
    "read_csv",
    "write_csv",
    "write_table",
    "read_table",
    "write_gzip_csv",
    "format_float",
    "parse_config",
    "load_config",
    "file_hash",
    "OUTPUT_DIR_ENV",
]

MISSING_TOKENS = ("", "NA")
TIME_HEADERS = ("time", "t", "timestamp", "seconds")
OUTPUT_DIR_ENV = "GARCHSSM_OUTPUT_DIR"


class CsvFormatError(ValueError):
    """Malformed input file; ``line`` is the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def format_float(x) -> str:
    """Lossless text for a float64 (17 significant digits); NaN becomes ``NA``."""
    x = float(x)
    return "NA" if np.isnan(x) else format(x, ".17g")


def _content_lines(path):
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            yield lineno, line


def read_csv(path, time_column="auto") -> SeriesData:
    """Read a header-led CSV of series into :class:`SeriesData`.

    Empty cells and the token ``NA`` are missing. Lines starting with ``#``
    are comments. ``time_column`` names a column to carry through untouched;
    ``"auto"`` picks the first column when its header looks like a time axis
    and ``None`` treats every column as a series.
    """
    rows = list(_content_lines(path))
    if not rows:
        raise CsvFormatError(f"{path} is empty", line=1)
    header_line, header = rows[0]
    names = next(csv.reader([header]))
    names = [h.strip() for h in names]
    if time_column == "auto":
        time_idx = 0 if names and names[0].lower() in TIME_HEADERS else None
    elif time_column is None:
        time_idx = None
    else:
        if time_column not in names:
            raise CsvFormatError(f"time column {time_column!r} not in header", line=header_line)
        time_idx = names.index(time_column)
    series_idx = [k for k in range(len(names)) if k != time_idx]
    if not series_idx:
        raise CsvFormatError("no series columns", line=header_line)
    if len(rows) == 1:
        raise CsvFormatError("no data rows", line=header_line)
    values, times = [], []
    for lineno, line in rows[1:]:
        cells = next(csv.reader([line]))
        if len(cells) != len(names):
            raise CsvFormatError(f"expected {len(names)} fields, found {len(cells)}", line=lineno)
        row = []
        for k in series_idx:
            cell = cells[k].strip()
            if cell in MISSING_TOKENS:
                row.append(np.nan)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise CsvFormatError(f"non-numeric value {cell!r} in column {names[k]!r}", line=lineno) from None
            if not np.isfinite(v):
                raise CsvFormatError(f"non-finite value {cell!r} in column {names[k]!r}", line=lineno)
            row.append(v)
        values.append(row)
        if time_idx is not None:
            times.append(cells[time_idx].strip())
    y = np.array(values, dtype=float)
    return SeriesData(
        y=y,
        observed=np.isfinite(y),
        columns=[names[k] for k in series_idx],
        time=np.array(times, dtype=object) if time_idx is not None else None,
    )


def write_csv(data: SeriesData, path, comment: str = None) -> None:
    """Inverse of :func:`read_csv`: missing cells are written as ``NA``."""
    header = list(data.columns)
    cols = [data.y[:, i] for i in range(data.n)]
    if data.time is not None:
        header = ["time"] + header
    rows = []
    for t in range(data.T):
        row = [format_float(c[t]) for c in cols]
        if data.time is not None:
            row = [str(data.time[t])] + row
        rows.append(row)
    write_table(path, header, rows, comment=comment)


def _table_text(header, rows, comment=None) -> str:
    buf = io.StringIO()
    if comment:
        for line in comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_table(path, header, rows, comment=None) -> None:
    Path(path).write_text(_table_text(header, rows, comment))


def write_gzip_csv(path, header, rows) -> None:
    """Gzip with a zero timestamp and no file name so output bytes are reproducible."""
    raw = _table_text(header, rows).encode()
    with open(path, "wb") as fh:
        with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
            gz.write(raw)


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Header and raw string rows of a CSV written by :func:`write_table`."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt", newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        return header, [row for row in reader]


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------- config


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def _parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


_COMMENT = re.compile(r"\s#")


def parse_config(text: str) -> dict:
    """Parse ``section.key = value`` lines; values are JSON literals or bare strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _COMMENT.split(raw, 1)[0].strip()
        if line.startswith("#"):
            continue
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        if key in out:
            raise ConfigError(key, f"duplicate key (line {lineno})")
        out[key] = _parse_value(value)
    return out


_MODEL_KINDS = ("rwpn", "trend")
_PRIOR_KEYS = {f.name for f in fields(PriorSpec)}
_MCMC_KEYS = {f.name for f in fields(McmcConfig)} - {"proposal_sd", "seed"}
_SIM_KEYS = {"T", "alpha0", "alpha", "beta", "alpha1", "beta1", "W", "U", "rho", "R", "missing_rate",
             "theta0"}


@dataclass
class RunConfig:
    """Validated run settings assembled from a flat dotted-key document."""

    model_kind: str = "rwpn"
    n: int = None
    garch_enabled: bool = True
    p: int = 1
    q: int = 1
    m0: float = None
    c0: float = None
    priors: PriorSpec = field(default_factory=PriorSpec)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    input: str = None
    output: str = None
    time_column: str = "auto"
    seed: int = 0
    simulate: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)

    @property
    def model_name(self) -> str:
        return f"garch({self.p},{self.q})" if self.garch_enabled else "dlm"

    def build_spec(self, n: int) -> ModelSpec:
        builder = build_random_walk_plus_noise if self.model_kind == "rwpn" else build_local_linear_trend
        return builder(n, m0=self.m0, c0=self.c0)

    def output_dir(self) -> Path:
        out = self.output or os.environ.get(OUTPUT_DIR_ENV) or "garchssm_out"
        return Path(out)

    def canonical(self) -> str:
        """Stable text of the parsed document (used for the config hash)."""
        return json.dumps(self.source, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _int(key, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(key, f"expected an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        raise ConfigError(key, f"must be >= {lo}")
    return v


def _float(key, v, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    v = float(v)
    if positive and not v > 0:
        raise ConfigError(key, "must be positive")
    return v


def _bool(key, v):
    if not isinstance(v, bool):
        raise ConfigError(key, f"expected true/false, got {v!r}")
    return v


def _matrix_or_scalar(key, v):
    if v is None:
        return None
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(key, "expected a number or a nested list of numbers") from None
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(key, "expected a square matrix")
    return a


def build_config(doc: dict, base_dir=None) -> RunConfig:
    """Validate a parsed document; every error names the key at fault."""
    cfg = RunConfig(source=dict(doc))
    prior_kw, mcmc_kw, proposal = {}, {}, {}
    for key, v in doc.items():
        section, _, name = key.partition(".")
        if key == "seed":
            cfg.seed = _int(key, v, lo=0)
        elif key == "model.kind":
            if v not in _MODEL_KINDS:
                raise ConfigError(key, f"must be one of {_MODEL_KINDS}")
            cfg.model_kind = v
        elif key == "model.n":
            cfg.n = _int(key, v, lo=1)
        elif key == "model.m0":
            cfg.m0 = _float(key, v)
        elif key == "model.c0":
            cfg.c0 = _float(key, v, positive=True)
        elif key == "garch.enabled":
            cfg.garch_enabled = _bool(key, v)
        elif key == "garch.p":
            cfg.p = _int(key, v, lo=0)
        elif key == "garch.q":
            cfg.q = _int(key, v, lo=0)
        elif section == "priors" and name in _PRIOR_KEYS:
            if name in ("iw_scale", "obs_iw_scale"):
                prior_kw[name] = _matrix_or_scalar(key, v)
            elif name == "rho_uniform":
                prior_kw[name] = _bool(key, v)
            else:
                prior_kw[name] = _float(key, v, positive=True)
        elif section == "mcmc" and name.startswith("proposal_sd."):
            proposal[name.split(".", 1)[1]] = _float(key, v, positive=True)
        elif section == "mcmc" and name in _MCMC_KEYS:
            if name in ("adapt", "store_states", "marginal_W"):
                mcmc_kw[name] = _bool(key, v)
            elif name == "target_accept":
                t = _float(key, v)
                if not 0 < t < 1:
                    raise ConfigError(key, "must lie in (0, 1)")
                mcmc_kw[name] = t
            else:
                mcmc_kw[name] = _int(key, v, lo=1 if name in ("n_chains", "thin", "n_jobs") else 0)
        elif key in ("io.input", "io.output"):
            if not isinstance(v, str) or not v:
                raise ConfigError(key, "expected a path")
            path = Path(v)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            setattr(cfg, name, str(path))
        elif key == "io.time_column":
            cfg.time_column = v
        elif section == "simulate" and name in _SIM_KEYS:
            cfg.simulate[name] = v
        else:
            raise ConfigError(key, "unknown key")
    if cfg.p + cfg.q == 0 and cfg.garch_enabled:
        raise ConfigError("garch.p", "p + q must be positive when garch.enabled is true")
    try:
        cfg.priors = PriorSpec(**prior_kw)
    except ValueError as exc:
        raise ConfigError("priors", str(exc)) from None
    if proposal:
        mcmc_kw["proposal_sd"] = {"garch": 0.05, "corr": 0.05, **proposal}
    try:
        cfg.mcmc = McmcConfig(seed=cfg.seed, **mcmc_kw)
    except ValueError as exc:
        raise ConfigError("mcmc", str(exc)) from None
    for name in ("iw_scale", "obs_iw_scale"):
        val = getattr(cfg.priors, name)
        if isinstance(val, np.ndarray):
            try:
                np.linalg.cholesky(val)
            except np.linalg.LinAlgError:
                raise ConfigError(f"priors.{name}", "must be positive definite") from None
    return cfg


def load_config(path) -> RunConfig:
    """Read and validate a config file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return build_config(parse_config(text), base_dir=path.parent)


def simulation_truth_params(cfg: RunConfig):
    """``(spec, garch, R, W, T)`` from the ``simulate.*`` keys."""
    sim = cfg.simulate
    for key in ("T", "alpha0"):
        if key not in sim:
            raise ConfigError(f"simulate.{key}", "required for simulation")
    T = _int("simulate.T", sim["T"], lo=1)
    alpha0 = np.atleast_1d(np.asarray(sim["alpha0"], dtype=float))
    n = alpha0.size
    if cfg.n is not None and cfg.n != n:
        raise ConfigError("model.n", f"disagrees with simulate.alpha0 ({n} series)")

    def loadings(name, alt, width):
        if name in sim:
            a = np.asarray(sim[name], dtype=float)
            key = f"simulate.{name}"
        elif alt in sim:
            a = np.asarray(sim[alt], dtype=float).reshape(n, 1)
            key = f"simulate.{alt}"
        else:
            return np.zeros((n, width)), None
        a = a.reshape(n, -1) if a.size else np.zeros((n, 0))
        return a, key

    if cfg.garch_enabled:
        alpha, ka = loadings("alpha", "alpha1", cfg.p)
        beta, kb = loadings("beta", "beta1", cfg.q)
    else:
        alpha, beta, ka, kb = np.zeros((n, 0)), np.zeros((n, 0)), None, None
    try:
        garch = GarchParams(alpha0, alpha, beta)
    except ValueError as exc:
        raise ConfigError(ka or kb or "simulate.alpha0", str(exc)) from None
    if "U" in sim:
        try:
            _, R = correlation_from_factor(np.asarray(sim["U"], dtype=float))
        except ValueError as exc:
            raise ConfigError("simulate.U", str(exc)) from None
    elif "R" in sim:
        R = np.asarray(sim["R"], dtype=float)
        if R.shape != (n, n) or not np.allclose(np.diag(R), 1.0) or np.any(np.linalg.eigvalsh(R) <= 0):
            raise ConfigError("simulate.R", "must be an n x n correlation matrix")
    elif "rho" in sim:
        if n != 2:
            raise ConfigError("simulate.rho", "only valid for two series")
        try:
            R = correlation_from_rho(_float("simulate.rho", sim["rho"]))
        except ValueError as exc:
            raise ConfigError("simulate.rho", str(exc)) from None
    else:
        R = np.eye(n)
    spec = cfg.build_spec(n)
    W = sim.get("W", 0.1)
    W = _matrix_or_scalar("simulate.W", W)
    W = W * np.eye(spec.r) if np.ndim(W) == 0 else W
    if W.shape != (spec.r, spec.r) or np.any(np.linalg.eigvalsh(0.5 * (W + W.T)) < 0):
        raise ConfigError("simulate.W", f"must be a {spec.r} x {spec.r} PSD matrix")
    if "missing_rate" in sim:
        rate = _float("simulate.missing_rate", sim["missing_rate"])
        if not 0 <= rate < 1:
            raise ConfigError("simulate.missing_rate", "must lie in [0, 1)")
    return spec, garch, R, W, T
