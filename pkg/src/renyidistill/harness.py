"""Simulation harness: scenario generation, power estimation and result files."""

from __future__ import annotations

import csv
import json
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import special

from .design import UNASSIGNED, Layer, Partitioning, SparseDesign
from .distill import distill
from .filters import FilterSpec
from .partition import PartitionConfig, greedy_partition
from .residualize import CovariateBasis, residualize_covariates
from .rng import GaussianField
from .rtest import LRTWhitener, baseline_cauchy, baseline_minp, load_table, renyi_pvalue, renyi_stat

METHODS = ("RD", "RDA", "RDLK", "RDLKC0", "MINP", "CAUCHY", "ANOVA", "ORACLE")
PLACEMENTS = ("layer1", "layer2", "spread")
PARTITIONS = ("layers", "auto")
CSV_COLUMNS = ("method", "threshold", "effect", "power", "se", "seconds")

_TINY = np.finfo(np.float64).tiny


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    """One simulation setting.

    Parameters
    ----------
    p : int
        Number of predictors.
    group_size : int
        Samples per group; column ``j`` is the normalized indicator of its group.
    overlap : float
        Fraction of each group shared with its partner group; ``0`` gives an
        orthogonal design.
    actives : int
        Number of nonzero coefficients.
    effects : tuple of float
        Effect sizes swept; every active coefficient equals the effect.
    placement : {"layer1", "layer2", "spread"}
        Which member of each overlapping pair carries the signal.
    partition : {"layers", "auto"}
        Two hand-built orthogonal layers, or the greedy partitioner, for
        overlapping designs.  Orthogonal designs always use one layer.
    filter : FilterSpec, optional
        Filter used by ``RD`` and ``RDA``; defaults to ``k4`` with ``k_test``.
    k_test : int, optional
        Size passed to the outlier test; defaults to ``5 * actives``.
    thresholds : tuple of float
    replicates : int
    seed : int
    methods : tuple of str
    q0, q1 : float
        Partitioner settings for ``partition="auto"`` and the ``RDA`` method.
    table_method : {"order_statistics", "partial_sums"}
        Null table family used for the outlier test p-values.
    table_dir : str, optional
        Directory searched for tables instead of the shipped ones.
    residualize : bool
        Project out an intercept (with noise added back) before distillation.
    workers : int
        Worker processes for replicates; results do not depend on it.
    """

    p: int = 1000
    group_size: int = 10
    overlap: float = 0.0
    actives: int = 4
    effects: tuple = (0.0,)
    placement: str = "layer1"
    partition: str = "layers"
    filter: FilterSpec | None = None
    k_test: int | None = None
    thresholds: tuple = (1e-2, 1e-4)
    replicates: int = 500
    seed: int = 0
    methods: tuple = ("RD", "MINP", "CAUCHY", "ANOVA", "ORACLE")
    q0: float = 0.9
    q1: float = 0.7
    table_method: str = "order_statistics"
    table_dir: str | None = None
    residualize: bool = False
    workers: int = 1

    def __post_init__(self):
        set_ = lambda name, v: object.__setattr__(self, name, v)  # noqa: E731
        set_("effects", tuple(float(e) for e in np.atleast_1d(self.effects)))
        set_("thresholds", tuple(float(t) for t in np.atleast_1d(self.thresholds)))
        set_("methods", tuple(str(m).upper() for m in self.methods))
        if self.p < 1 or self.group_size < 1:
            raise ScenarioError("p and group_size must be positive")
        if not 0 <= self.actives <= self.p:
            raise ScenarioError(f"need 0 <= actives <= p, got actives={self.actives}, p={self.p}")
        if self.placement not in PLACEMENTS:
            raise ScenarioError(f"placement must be one of {PLACEMENTS}")
        if self.partition not in PARTITIONS:
            raise ScenarioError(f"partition must be one of {PARTITIONS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ScenarioError(f"unknown method(s) {bad}; choose from {METHODS}")
        if any(not 0.0 < t < 1.0 for t in self.thresholds):
            raise ScenarioError("thresholds must lie in (0, 1)")
        if self.replicates < 1:
            raise ScenarioError("replicates must be positive")
        if self.k_test is None and self.actives == 0:
            raise ScenarioError("k_test is required when there are no actives")
        if self.actives == 0 and "ORACLE" in self.methods:
            raise ScenarioError("ORACLE needs at least one active predictor")
        if self.filter is not None and not isinstance(self.filter, FilterSpec):
            set_("filter", FilterSpec(**self.filter) if isinstance(self.filter, dict)
                 else FilterSpec.parse(self.filter))
        self.shared  # geometry check

    @property
    def shared(self):
        """Samples each group shares with its partner."""
        if not 0.0 <= self.overlap < 1.0:
            raise ScenarioError(f"overlap must lie in [0, 1), got {self.overlap}")
        s = self.overlap * self.group_size
        if abs(s - round(s)) > 1e-9:
            raise ScenarioError(
                f"overlap {self.overlap} of {self.group_size} samples is not a whole number of samples")
        if s > 0 and self.p % 2:
            raise ScenarioError("overlapping pairs need an even number of predictors")
        return int(round(s))

    @property
    def n(self):
        s = self.shared
        return self.p * self.group_size if s == 0 else self.p // 2 * (2 * self.group_size - s)

    @property
    def test_k(self):
        return int(self.k_test) if self.k_test is not None else 5 * self.actives

    @property
    def low_k(self):
        return max(1, self.actives // 2)

    def rd_filter(self):
        return self.filter or FilterSpec("k4", self.test_k)


def build_design(s):
    """Group-indicator design, with overlapping pairs when ``s.overlap > 0``."""
    g, sh = s.group_size, s.shared
    cols = np.repeat(np.arange(s.p), g)
    within = np.tile(np.arange(g), s.p)
    if sh == 0:
        rows = cols * g + within
    else:
        pair, second = cols // 2, cols % 2
        rows = pair * (2 * g - sh) + second * (g - sh) + within
    return SparseDesign.from_coo(s.n, s.p, rows, cols, np.ones(rows.size))


def layered_partitioning(d, s):
    """Single all-hard layer for orthogonal designs; even and odd layers for pairs."""
    owner = np.full(d.n, UNASSIGNED, dtype=np.int64)
    if s.shared == 0:
        owner[d.indices] = d.col_ids
        return Partitioning((Layer(owner, np.ones(d.n, dtype=np.int8)),))
    layers = []
    for parity in (0, 1):
        xi = np.full(d.n, UNASSIGNED, dtype=np.int64)
        pick = d.col_ids % 2 == parity
        xi[d.indices[pick]] = d.col_ids[pick]
        layers.append(Layer(xi, (xi != UNASSIGNED).astype(np.int8)))
    return Partitioning(tuple(layers))


def auto_partitioning(d, s):
    return greedy_partition(d, PartitionConfig(q0=s.q0, q1=s.q1))


def active_indices(s):
    """Predictors carrying the signal, spread evenly over the design."""
    i = np.arange(s.actives)
    if s.shared == 0:
        return (i * s.p) // max(s.actives, 1)
    pairs = (i * (s.p // 2)) // max(s.actives, 1)
    offset = {"layer1": 0, "layer2": 1}.get(s.placement)
    return 2 * pairs + (i % 2 if offset is None else offset)


def coefficients(s, effect):
    beta = np.zeros(s.p)
    beta[active_indices(s)] = effect
    return beta


def generate_scenario(s, rng=None, effect=None):
    """Design, partitioning, coefficients and one response draw.

    Parameters
    ----------
    effect : float, optional
        Effect size; the first entry of ``s.effects`` when omitted.
    """
    rng = np.random.default_rng(rng)
    d = build_design(s)
    rho = auto_partitioning(d, s) if s.partition == "auto" and s.shared else layered_partitioning(d, s)
    beta = coefficients(s, s.effects[0] if effect is None else effect)
    y = d.matvec(beta) + rng.standard_normal(d.n)
    return d, rho, beta, y


@dataclass
class PowerResult:
    """Rejection frequencies per method, threshold and effect.

    Attributes
    ----------
    rows : list of dict
        Records with keys ``CSV_COLUMNS``.
    pvalues : dict
        Method name to an array of shape ``(len(effects), replicates)``.
    phase_seconds : dict
        Wall-clock time per phase.
    """

    scenario: Scenario
    rows: list = field(default_factory=list)
    pvalues: dict = field(default_factory=dict)
    phase_seconds: dict = field(default_factory=dict)

    def power(self, method, threshold, effect=None):
        """Frequencies over the effect sweep, or at one effect."""
        sel = [r for r in self.rows if r["method"] == method and r["threshold"] == threshold]
        if effect is None:
            return np.array([r["power"] for r in sel])
        return next(r["power"] for r in sel if r["effect"] == effect)

    def se(self, method, threshold):
        return np.array([r["se"] for r in self.rows
                         if r["method"] == method and r["threshold"] == threshold])


class _Context:
    """Everything a worker needs, rebuilt deterministically from the scenario."""

    def __init__(self, s):
        self.s = s
        self.d = build_design(s)
        self.rho = layered_partitioning(self.d, s)
        if s.partition == "auto" and s.shared:
            self.rho = auto_partitioning(self.d, s)
        if "RDA" in s.methods:
            self.rho_auto = auto_partitioning(self.d, s) if s.shared else self.rho
        self.tables = {}
        for m in s.methods:
            k = self.method_k(m)
            if k is not None and k not in self.tables:
                p = s.p if s.table_method == "order_statistics" else None
                self.tables[k] = load_table(k, s.table_method, p, s.table_dir)
        if "ANOVA" in s.methods:
            self.anova = LRTWhitener(self.d)
        if "ORACLE" in s.methods:
            self.oracle = LRTWhitener(self.d, active_indices(s))
        self.basis = CovariateBasis.intercept(self.d.n) if s.residualize else None

    def method_k(self, m):
        if m in ("RD", "RDA"):
            return self.s.test_k
        if m in ("RDLK", "RDLKC0"):
            return self.s.low_k
        return None

    def method_filter(self, m):
        s = self.s
        if m in ("RD", "RDA"):
            return s.rd_filter()
        base = s.rd_filter()
        return FilterSpec("k4", s.low_k, base.c1, 0.0 if m == "RDLKC0" else base.c2)

    def pvalue(self, m, y, rng):
        if m in ("MINP", "CAUCHY"):
            z = self.d.rmatvec(y)
            u = np.clip(special.erfc(np.abs(z) / math.sqrt(2.0)), _TINY, 1.0)
            return float(baseline_minp(u) if m == "MINP" else baseline_cauchy(u))
        if m == "ANOVA":
            return self.anova.pvalue(y)
        if m == "ORACLE":
            return self.oracle.pvalue(y)
        rho = self.rho_auto if m == "RDA" else self.rho
        field_ = GaussianField.from_generator(rng)
        res = distill(self.d, rho, y, self.method_filter(m), rng, field_, validate=False)
        k = self.method_k(m)
        return float(renyi_pvalue(renyi_stat(res.u_star, k), self.tables[k]))


def _replicate_streams(seed, count):
    """Per replicate: a noise stream and one stream per method name."""
    root = np.random.SeedSequence(seed)
    out = []
    for child in root.spawn(count):
        kids = child.spawn(2 + len(METHODS))
        out.append((kids[0], kids[1], dict(zip(METHODS, kids[2:]))))
    return out


def _run_block(s, start, stop, ctx=None):
    ctx = ctx or _Context(s)
    streams = _replicate_streams(s.seed, s.replicates)[start:stop]
    pv = {m: np.empty((len(s.effects), stop - start)) for m in s.methods}
    secs = {m: 0.0 for m in s.methods}
    for r, (noise_ss, resid_ss, method_ss) in enumerate(streams):
        eps = np.random.default_rng(noise_ss).standard_normal(ctx.d.n)
        for e, effect in enumerate(s.effects):
            y = ctx.d.matvec(coefficients(s, effect)) + eps
            if ctx.basis is not None:
                y = residualize_covariates(y, ctx.basis, np.random.default_rng(resid_ss))
            for m in s.methods:
                t0 = time.perf_counter()
                pv[m][e, r] = ctx.pvalue(m, y, np.random.default_rng(method_ss[m]))
                secs[m] += time.perf_counter() - t0
    return pv, secs


def run_power(s):
    """Estimate rejection frequencies for every method in ``s``.

    Noise and auxiliary randomness are shared across effects (common random
    numbers), so the curves are smooth in the effect size.  Results depend
    only on the scenario, not on ``s.workers``.
    """
    t_setup = time.perf_counter()
    ctx = _Context(s)  # fails early on missing tables
    setup = time.perf_counter() - t_setup
    t0 = time.perf_counter()
    workers = max(1, min(int(s.workers), s.replicates))
    bounds = np.linspace(0, s.replicates, workers + 1).astype(int)
    blocks = list(zip(bounds[:-1], bounds[1:]))
    if workers == 1:
        parts = [_run_block(s, a, b, ctx) for a, b in blocks]
    else:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_block, [s] * workers, *zip(*blocks)))
    pvalues = {m: np.concatenate([pv[m] for pv, _ in parts], axis=1) for m in s.methods}
    seconds = {m: sum(sec[m] for _, sec in parts) for m in s.methods}
    result = PowerResult(s, pvalues=pvalues,
                         phase_seconds={"setup": setup, "replicates": time.perf_counter() - t0})
    for m in s.methods:
        for t in s.thresholds:
            for e, effect in enumerate(s.effects):
                f = float(np.mean(pvalues[m][e] <= t))
                result.rows.append({
                    "method": m, "threshold": t, "effect": effect, "power": f,
                    "se": math.sqrt(f * (1.0 - f) / s.replicates),
                    "seconds": seconds[m] / (len(s.effects) * s.replicates),
                })
    return result


def _fmt(v):
    return repr(float(v))


def emit_results(result, path, timing=False):
    """Write ``power.csv`` (or ``path`` itself when it ends in ``.csv``) and a JSON sidecar.

    The ``seconds`` column is left empty unless ``timing`` is set, so reruns
    with the same seed are byte-identical.
    """
    path = Path(path)
    csv_path = path if path.suffix == ".csv" else path / "power.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in result.rows:
            w.writerow([r["method"], _fmt(r["threshold"]), _fmt(r["effect"]), _fmt(r["power"]),
                        _fmt(r["se"]), _fmt(r["seconds"]) if timing else ""])
    meta = {"scenario": scenario_to_dict(result.scenario) if result.scenario else None,
            "n": result.scenario.n if result.scenario else None,
            "replicate_seed_entropy": result.scenario.seed if result.scenario else None}
    if timing:
        meta["phase_seconds"] = result.phase_seconds
    with open(csv_path.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path


def scenario_to_dict(s):
    out = asdict(s)
    out["effects"] = list(s.effects)
    out["thresholds"] = list(s.thresholds)
    out["methods"] = list(s.methods)
    out["k_test_resolved"] = s.test_k
    return out


_INT_KEYS = {"p", "group_size", "actives", "k_test", "replicates", "seed", "workers"}
_FLOAT_KEYS = {"overlap", "q0", "q1"}
_LIST_KEYS = {"effects", "thresholds", "methods"}
_KEY_ALIASES = {"effect": "effects", "threshold": "thresholds", "method": "methods",
                "groupsize": "group_size", "ktest": "k_test"}


def _snake(key):
    key = re.sub(r"(?<=[a-z0-9])([A-Z])", r"_\1", key.strip()).lower()
    return _KEY_ALIASES.get(key.replace("_", ""), _KEY_ALIASES.get(key, key))


def _parse_bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ScenarioError(f"not a boolean: {v!r}")


def _parse_list(v, kind):
    items = [x for x in re.split(r"[,\s]+", v.strip().strip("[]()")) if x]
    return tuple(kind(x) for x in items)


def parse_config(text, **overrides):
    """Scenario from flat ``key = value`` lines; ``#`` starts a comment.

    Keys mirror the ``Scenario`` fields (camelCase accepted).  Lists are
    comma separated and ``filter = {k4, 20, 0.05, 0.05}`` sets the filter.
    """
    kw = {}
    valid = set(Scenario.__dataclass_fields__)
    for lineno, raw in enumerate(str(text).splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        key = _snake(key)
        if key not in valid:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        if key in _INT_KEYS:
            kw[key] = int(float(value))
        elif key in _FLOAT_KEYS:
            kw[key] = float(value)
        elif key == "methods":
            kw[key] = _parse_list(value, str)
        elif key in _LIST_KEYS:
            kw[key] = _parse_list(value, float)
        elif key == "residualize":
            kw[key] = _parse_bool(value)
        elif key == "filter":
            kw[key] = FilterSpec.parse(value.strip().strip("{}"))
        else:
            kw[key] = value
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return Scenario(**kw)


def load_config(path, **overrides):
    return parse_config(Path(path).read_text(), **overrides)


def with_methods(s, *methods):
    return replace(s, methods=tuple(methods))
