"""File formats: numeric CSV, JSON-lines draws files and INI-style configs.

Draws files start with one header record describing the layout, followed by
one record per stored state.  Floats are written with Python's shortest
round-trip representation, so re-loaded values compare equal.
"""

import configparser
import csv
import json

import numpy as np

from .errors import SubspaceError
from .experiments import StudyConfig
from .model import MixtureAtoms, ModelParams, PriorConfig
from .sampler import ChainSettings

DRAWS_FORMAT = "bnpsubspace-draws"
DRAWS_VERSION = 1
STATE_FIELDS = ("k", "basis", "origin", "sigma0_diag", "sigma", "weights",
                "locations", "class_probs", "labels")


class InputError(SubspaceError, ValueError):
    """Malformed user input (file contents or configuration)."""


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_csv(path, label_column=False):
    """Read a numeric CSV; an optional header row is detected automatically.

    Returns ``(x, y)`` where ``y`` holds the final column as integers when
    ``label_column`` is set (else None).  Raises InputError naming the
    1-based row and column of the first bad cell.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    start = 0
    header = None
    if rows and not all(_is_number(c) for c in rows[0]):
        header = rows[0]
        start = 1
    data = rows[start:]
    width = len(header) if header is not None else (len(data[0]) if data else 0)
    values = np.empty((len(data), width))
    for i, row in enumerate(data, start=start + 1):
        if len(row) != width:
            raise InputError(f"row {i}: expected {width} columns, found {len(row)}")
        for j, cell in enumerate(row):
            try:
                values[i - start - 1, j] = float(cell)
            except ValueError:
                raise InputError(f"row {i}, column {j + 1}: non-numeric value {cell!r}") from None
    if not np.all(np.isfinite(values)):
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise InputError(f"row {i + start + 1}, column {j + 1}: non-finite value")
    if not label_column:
        return values, None
    if width < 2:
        raise InputError("a label column needs at least one feature column before it")
    y = values[:, -1]
    if np.any(y != np.round(y)) or (y.size and y.min() < 1):
        raise InputError("labels in the final column must be integers >= 1")
    return values[:, :-1], y.astype(int)


def write_csv(path, x, y=None, header=True):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            names = [f"x{j + 1}" for j in range(x.shape[1])]
            w.writerow(names + (["y"] if y is not None else []))
        for i, row in enumerate(x):
            cells = [repr(float(v)) for v in row]
            if y is not None:
                cells.append(str(int(y[i])))
            w.writerow(cells)


# ---------------------------------------------------------------------------
# draws files
# ---------------------------------------------------------------------------

def _tolist(a):
    return None if a is None else np.asarray(a).tolist()


def state_to_record(state):
    return {
        "k": state.k,
        "basis": _tolist(state.basis),
        "origin": _tolist(state.origin),
        "sigma0_diag": _tolist(state.sigma0_diag),
        "sigma": state.sigma,
        "weights": _tolist(state.atoms.weights),
        "locations": _tolist(state.atoms.locations),
        "class_probs": _tolist(state.atoms.class_probs),
        "labels": _tolist(state.labels),
    }


def record_to_state(rec, m):
    basis = np.asarray(rec["basis"], dtype=float).reshape(m, -1)
    locs = np.asarray(rec["locations"], dtype=float)
    atoms = MixtureAtoms(rec["weights"], locs.reshape(len(rec["weights"]), -1),
                         rec.get("class_probs"))
    labels = rec.get("labels")
    return ModelParams(rec["k"], basis, rec["origin"], rec["sigma0_diag"], rec["sigma"], atoms,
                       None if labels is None else np.asarray(labels, dtype=int))


def draws_header(draws, m, extra=None):
    s = draws.settings
    first = draws.draws[0] if len(draws.draws) else None
    head = {
        "format": DRAWS_FORMAT,
        "version": DRAWS_VERSION,
        "fields": list(STATE_FIELDS),
        "m": m,
        "basis_columns": None if first is None else int(first.basis.shape[1]),
        "n_atoms": None if first is None else int(first.atoms.n_atoms),
        "n_classes": None if first is None or first.atoms.class_probs is None
        else int(first.atoms.class_probs.shape[1]),
        "n_draws": len(draws.draws),
        "settings": {f: getattr(s, f) for f in s.__dataclass_fields__},
    }
    if extra:
        head.update(extra)
    return head


def write_draws(path, draws, m, extra=None):
    """Write a header line and one JSON record per stored state."""
    with open(path, "w") as fh:
        fh.write(json.dumps(draws_header(draws, m, extra), sort_keys=True) + "\n")
        for st in draws.draws:
            fh.write(json.dumps(state_to_record(st), sort_keys=True) + "\n")


def read_draws(path):
    """Return ``(header, states)`` from a draws file."""
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise InputError(f"{path}: empty draws file")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line 1 is not a header record ({exc})") from None
    if head.get("format") != DRAWS_FORMAT:
        raise InputError(f"{path}: not a draws file")
    m = int(head["m"])
    states = []
    for i, ln in enumerate(lines[1:], start=2):
        try:
            states.append(record_to_state(json.loads(ln), m))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise InputError(f"{path}: line {i}: bad state record ({exc})") from None
    return head, states


def settings_from_header(head):
    return ChainSettings(**head["settings"])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def load_config(path=None):
    """Parse a config file into a ConfigParser (empty sections when absent)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
    for sec in ("prior", "chain", "study"):
        if not cp.has_section(sec):
            cp.add_section(sec)
    return cp


def prior_from_config(cp, m, k_max, n_classes=None):
    """Build a PriorConfig from the ``[prior]`` section.

    Keys: dp_concentration, base_mean, base_variance, theta_mean,
    theta_variance, sigma_shape, sigma_rate, sigma0_shape, sigma0_rate,
    sigma0_upper, trunc_atoms, homogeneous, dirichlet, k_prior
    (``uniform`` or p(0..K)), consistency (a, b, alpha, tau).
    """
    sec = cp["prior"]
    try:
        kw = {}
        if "dp_concentration" in sec:
            kw["dp_concentration"] = sec.getfloat("dp_concentration")
        if "base_mean" in sec:
            kw["base_mean"] = sec.getfloat("base_mean")
        if "base_variance" in sec:
            kw["base_cov"] = sec.getfloat("base_variance") * np.eye(k_max)
        if "theta_mean" in sec:
            kw["theta_mean"] = sec.getfloat("theta_mean")
        if "theta_variance" in sec:
            kw["theta_cov"] = sec.getfloat("theta_variance") * np.eye(m)
        kw["sigma_gamma"] = (sec.getfloat("sigma_shape", 1.0), sec.getfloat("sigma_rate", 0.1))
        kw["sigma0_gamma"] = (sec.getfloat("sigma0_shape", 1.0), sec.getfloat("sigma0_rate", 0.1),
                              sec.getfloat("sigma0_upper", 1e6))
        if "trunc_atoms" in sec:
            kw["trunc_atoms"] = sec.getint("trunc_atoms")
        kw["homogeneous"] = sec.getboolean("homogeneous", False)
        if n_classes is not None:
            kw["base_dirichlet"] = np.full(n_classes, sec.getfloat("dirichlet", 1.0))
        kp = sec.get("k_prior", "uniform").strip()
        if kp != "uniform":
            kw["k_prior"] = np.array(_floats(kp))
        if "consistency" in sec:
            vals = _floats(sec["consistency"])
            if len(vals) != 4:
                raise ValueError("consistency needs four values: a, b, alpha, tau")
            kw["consistency_exponents"] = tuple(vals)
        return PriorConfig.default(m, k_max, **kw)
    except (ValueError, SubspaceError) as exc:
        raise InputError(f"[prior]: {exc}") from None


def settings_from_config(cp, **overrides):
    """Build ChainSettings from ``[chain]``; non-None overrides win."""
    sec = cp["chain"]
    try:
        kw = {}
        for key in ("iterations", "burn_in", "thin", "seed", "bmf_sweeps"):
            if key in sec:
                kw[key] = sec.getint(key)
        for key in ("adapt_c1", "adapt_c2", "adapt_c3"):
            if key in sec:
                kw[key] = sec.getfloat(key)
        if "adapt" in sec and sec["adapt"].strip().lower() != "auto":
            kw["adapt"] = sec.getboolean("adapt")
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return ChainSettings(**kw)
    except ValueError as exc:
        raise InputError(f"[chain]: {exc}") from None


def study_from_config(cp, **overrides):
    sec = cp["study"]
    try:
        kw = {}
        for key in ("m", "k_true", "n_train", "n_test", "replicates", "seed"):
            if key in sec:
                kw[key] = sec.getint(key)
        if "sigma2" in sec:
            kw["sigma2"] = sec.getfloat("sigma2")
        if "scenario" in sec:
            kw["scenario"] = sec["scenario"].strip()
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return StudyConfig(**kw)
    except (ValueError, SubspaceError) as exc:
        raise InputError(f"[study]: {exc}") from None

