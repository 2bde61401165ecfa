"""Synthetic data-generating processes with ground-truth noises and counterfactuals.

Every generator is a pure function of ``(n, seed)`` and returns a
:class:`GeneratedData` bundling the observed table, the causal graph, the
exogenous noise columns and whatever effect truth the process defines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd
from scipy.special import expit, softmax

from .exceptions import ConfigError, DimensionError
from .scm import CausalGraph

LALONDE_COLUMNS = ("treat", "age", "educ", "black", "hisp", "nodegr", "re74", "re75")
LALONDE_COVARIATES = ("age", "educ", "black", "hisp", "nodegr", "re74", "re75")

#: reference values quoted as metadata only; truth always comes from our own computation
REFERENCE_ABLATION_ATE = 202.29


@dataclass
class GeneratedData:
    """Observed table plus ground truth.

    ``cf_outcome`` holds the outcome under the flipped treatment for every row
    (when the process has a binary treatment); ``ate_se`` is 0 for analytic
    truths and the Monte-Carlo standard error otherwise.
    """

    data: pd.DataFrame
    graph: CausalGraph
    noises: pd.DataFrame
    treatment: Optional[str] = None
    outcome: Optional[str] = None
    ite_true: Optional[np.ndarray] = None
    cf_outcome: Optional[np.ndarray] = None
    ate_true: float = float("nan")
    ate_se: float = 0.0
    metadata: Dict = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        """Write the table to ``path`` and ground truth to ``<path>.json``."""
        path = Path(path)
        table = self.data.copy()
        for c in self.noises.columns:
            table[f"noise_{c}"] = self.noises[c].to_numpy()
        if self.ite_true is not None:
            table["ite_true"] = self.ite_true
        if self.cf_outcome is not None:
            table["cf_outcome"] = self.cf_outcome
        table.to_csv(path, index=False)
        meta = {"graph": self.graph.to_dict(), "treatment": self.treatment, "outcome": self.outcome,
                "ate_true": self.ate_true, "ate_se": self.ate_se, "n": len(self.data), **self.metadata}
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))
        return sidecar


def _check_n(n, minimum=100):
    if int(n) != n or n < minimum:
        raise ConfigError(f"n must be an integer >= {minimum}, got {n}")
    return int(n)


def logistic_noise(rng, n, scale=1.0):
    """Logistic(0, scale) by inverse CDF."""
    u = rng.random(n)
    return scale * np.log(u / (1.0 - u))


def gen_psm_failure(n: int = 5000, seed: int = 42) -> GeneratedData:
    """Confounded design with a categorical confounder; constant effect 5000.

    ``C1`` codes: 0 = A, 1 = B, 2 = C.
    """
    n = _check_n(n)
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal(n)
    w2 = rng.standard_normal(n)
    z = np.column_stack([w1 - w2, np.cos(np.pi * w1) + np.sin(np.pi * w2), w1**2 - w2**2])
    probs = softmax(z, axis=1)
    u_c = rng.random(n)
    c1 = np.minimum((u_c[:, None] > np.cumsum(probs, axis=1)).sum(axis=1), 2)
    u_t = logistic_noise(rng, n)
    eta = 2 * np.sin(np.pi * w1) + 1.5 * w2**2 + 2 * w1 * w2 - 1.5 * (c1 == 0) + 2.5 * (c1 == 1)
    t = (eta + u_t > 0).astype(float)
    u_y = rng.normal(0.0, 6000.0, n)
    base = 60 * (15 * w1 - 25 * w2 + 10 * w1 * w2) + 60 * (-40 * (c1 == 0) + 50 * (c1 == 2))
    y = 5000 * t + base + u_y
    graph = CausalGraph(
        ["W1", "W2", "C1", "T", "Y"],
        [("W1", "C1"), ("W2", "C1"), ("W1", "T"), ("W2", "T"), ("C1", "T"),
         ("W1", "Y"), ("W2", "Y"), ("C1", "Y"), ("T", "Y")],
        kinds={"C1": "categorical", "T": "categorical"}, n_classes={"C1": 3, "T": 2})
    data = pd.DataFrame({"W1": w1, "W2": w2, "C1": c1.astype(float), "T": t, "Y": y})
    noises = pd.DataFrame({"W1": w1, "W2": w2, "C1": u_c, "T": u_t, "Y": u_y})
    return GeneratedData(data, graph, noises, "T", "Y", ite_true=np.full(n, 5000.0),
                         cf_outcome=y + 5000 * (1 - 2 * t), ate_true=5000.0,
                         metadata={"dgp": "psm", "seed": seed})


def gen_stress_noninvertible(n: int = 2000, seed: int = 42) -> GeneratedData:
    """``Y = 5T + 2W + U_Y^2``: the outcome is not invertible in its noise."""
    n = _check_n(n)
    rng = np.random.default_rng(seed)
    w = rng.uniform(-2.0, 2.0, n)
    u_t = logistic_noise(rng, n)
    t = (w + 0.5 * w**2 + u_t > 0).astype(float)
    u_y = rng.normal(0.0, 1.5, n)
    y = 5 * t + 2 * w + u_y**2
    graph = CausalGraph(["W", "T", "Y"], [("W", "T"), ("W", "Y"), ("T", "Y")],
                        kinds={"T": "categorical"}, n_classes={"T": 2})
    data = pd.DataFrame({"W": w, "T": t, "Y": y})
    noises = pd.DataFrame({"W": w, "T": u_t, "Y": u_y})
    return GeneratedData(data, graph, noises, "T", "Y", ite_true=np.full(n, 5.0),
                         cf_outcome=5 * (1 - t) + 2 * w + u_y**2, ate_true=5.0,
                         metadata={"dgp": "stress", "seed": seed})


def _mixture_noise(rng, z):
    """Outcome noise whose law depends on ``Z``.

    ``Z = 0``: equal mixture of N(-4, 2^2) and N(4, 2^2); ``Z = 1``: N(0, 3^2).
    """
    n = z.size
    comp = np.where(rng.random(n) < 0.5, -4.0, 4.0)
    e = rng.standard_normal(n)
    return np.where(z == 0, comp + 2.0 * e, 3.0 * e)


def mediation_ite(x1, x2):
    """Unit-level effect of the mediation process: ``25 (15 cos(2 pi x2) + 5 x1 + 10 |x1|)``."""
    return 25.0 * (15 * np.cos(2 * np.pi * x2) + 5 * x1 + 10 * np.abs(x1))


def gen_ablation_mediation(n: int = 4000, seed: int = 42, n_mc: int = 200_000) -> GeneratedData:
    """Mediated effect with a mixture-noise outcome.

    ``sinc`` is the normalized ``sin(pi x) / (pi x)`` (``np.sinc``), equal to 1 at 0.
    The true ATE is a Monte-Carlo mean of :func:`mediation_ite` over fresh
    covariates with ``n_mc`` draws; its standard error is reported.
    """
    n = _check_n(n)
    if n_mc < 100_000:
        raise ConfigError(f"n_mc must be >= 100000, got {n_mc}")
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    x2 = rng.uniform(-2.0, 2.0, n)
    z = (rng.random(n) < 0.5).astype(float)
    u_t = logistic_noise(rng, n, 0.3)
    v_t = rng.random(n)
    t = (v_t < expit(2.0 * np.sin(np.pi * x1) * x2 - 1.5 * z + u_t)).astype(float)
    u_m = rng.normal(0.0, 1.5, n)
    u_y = _mixture_noise(rng, z)

    def m_of(tt):
        return 5 * np.tanh(x2) + tt * (15 * np.cos(2 * np.pi * x2) + 5 * x1) + (1 - tt) * (-10 * np.abs(x1)) + u_m

    m = m_of(t)
    y = 25 * m + 10 * np.sinc(2 * x1) + u_y
    y_cf = 25 * m_of(1 - t) + 10 * np.sinc(2 * x1) + u_y
    mc = np.random.default_rng([seed, 7919])
    ite_mc = mediation_ite(mc.standard_normal(n_mc), mc.uniform(-2.0, 2.0, n_mc))
    graph = CausalGraph(
        ["X1", "X2", "Z", "T", "M", "Y"],
        [("X1", "T"), ("X2", "T"), ("Z", "T"), ("X1", "M"), ("X2", "M"), ("T", "M"),
         ("M", "Y"), ("X1", "Y"), ("Z", "Y")],
        kinds={"Z": "categorical", "T": "categorical"}, n_classes={"Z": 2, "T": 2})
    data = pd.DataFrame({"X1": x1, "X2": x2, "Z": z, "T": t, "M": m, "Y": y})
    noises = pd.DataFrame({"X1": x1, "X2": x2, "Z": z, "T": u_t, "M": u_m, "Y": u_y})
    return GeneratedData(data, graph, noises, "T", "Y", ite_true=mediation_ite(x1, x2), cf_outcome=y_cf,
                         ate_true=float(ite_mc.mean()), ate_se=float(ite_mc.std(ddof=1) / np.sqrt(n_mc)),
                         metadata={"dgp": "ablation", "seed": seed, "n_mc": n_mc,
                                   "analytic_ate": 250.0 * np.sqrt(2.0 / np.pi),
                                   "reference_ate": REFERENCE_ABLATION_ATE})


def load_lalonde_csv(path) -> pd.DataFrame:
    """Read a Lalonde-schema covariate file.

    Raises :class:`~causal_roundtrip.exceptions.DimensionError` naming a
    missing column, or the row and column of the first unparseable cell.
    """
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in LALONDE_COLUMNS if c not in raw.columns]
    if missing:
        raise DimensionError(f"{path}: missing required columns {missing}")
    out = {}
    for c in LALONDE_COLUMNS:
        vals = pd.to_numeric(raw[c].str.strip(), errors="coerce")
        bad = np.flatnonzero(vals.isna().to_numpy())
        if bad.size:
            r = int(bad[0])
            raise DimensionError(f"{path}: unparseable value {raw[c].iloc[r]!r} at row {r + 1}, column {c!r}")
        out[c] = vals.to_numpy(dtype=np.float64)
    return pd.DataFrame(out)


def synthetic_lalonde_covariates(n: int = 445, seed: int = 42) -> pd.DataFrame:
    """Covariates with the Lalonde schema and roughly NSW-like marginals.

    Treatment is randomized with probability 185/445, as in the experimental
    sample.  This is a stand-in for the real file, not a copy of it.
    """
    n = _check_n(n, 20)
    rng = np.random.default_rng(seed)
    age = np.clip(np.rint(17 + rng.gamma(2.0, 4.2, n)), 17, 55)
    educ = np.clip(np.rint(rng.normal(10.2, 1.8, n)), 3, 16)
    black = (rng.random(n) < 0.83).astype(float)
    hisp = ((1 - black) * (rng.random(n) < 0.55)).astype(float)
    nodegr = (educ < 12).astype(float)
    earn = rng.lognormal(8.6, 0.8, n)
    re74 = np.where(rng.random(n) < 0.72, 0.0, earn)
    re75 = np.where(rng.random(n) < 0.62, 0.0, 0.6 * earn + rng.lognormal(7.8, 0.7, n))
    treat = (rng.random(n) < 185 / 445).astype(float)
    return pd.DataFrame({"treat": treat, "age": age, "educ": educ, "black": black, "hisp": hisp,
                         "nodegr": nodegr, "re74": np.round(re74, 2), "re75": np.round(re75, 2)})


def lalonde_ite(cov: pd.DataFrame, mu_re74: float) -> np.ndarray:
    return (1500 + 350 * np.log1p(cov["educ"].to_numpy()) - 3 * (cov["age"].to_numpy() - 40) ** 2
            + 1200 * (1 - cov["nodegr"].to_numpy()) * (1 - cov["black"].to_numpy())
            - 1000 * np.tanh((cov["re74"].to_numpy() - mu_re74) / 1000))


def lalonde_graph() -> CausalGraph:
    cov = list(LALONDE_COVARIATES)
    edges = [(c, "treat") for c in cov] + [(c, "re78") for c in cov] + [("treat", "re78")]
    kinds = {"treat": "categorical", "black": "categorical", "hisp": "categorical", "nodegr": "categorical"}
    return CausalGraph(cov + ["treat", "re78"], edges, kinds=kinds,
                       n_classes={"treat": 2, "black": 2, "hisp": 2, "nodegr": 2})


def gen_semisynthetic_lalonde(covariates=None, seed: int = 42) -> GeneratedData:
    """Synthetic earnings outcome ``re78`` with a heterogeneous known effect on real-schema covariates.

    ``covariates`` is a path to a Lalonde-schema CSV, a DataFrame, or ``None``
    for :func:`synthetic_lalonde_covariates`.
    """
    if covariates is None:
        cov = synthetic_lalonde_covariates(seed=seed)
    elif isinstance(covariates, pd.DataFrame):
        missing = [c for c in LALONDE_COLUMNS if c not in covariates.columns]
        if missing:
            raise DimensionError(f"covariates missing required columns {missing}")
        cov = covariates[list(LALONDE_COLUMNS)].astype(float).reset_index(drop=True)
    else:
        cov = load_lalonde_csv(covariates)
    n = len(cov)
    rng = np.random.default_rng(seed)
    mu_re74 = float(cov["re74"].mean())
    u_base = rng.normal(0.0, 500.0, n)
    y_base = (2 * cov["re74"] + 1.5 * cov["re75"] + 100 * cov["educ"] - 50 * cov["age"]
              + 2000 * cov["black"] - 1000 * cov["hisp"]).to_numpy() + u_base
    ite = lalonde_ite(cov, mu_re74)
    treat = cov["treat"].to_numpy()
    data = cov.copy()
    data["re78"] = y_base + ite * treat
    noises = pd.DataFrame({c: cov[c].to_numpy() for c in LALONDE_COVARIATES})
    noises["re78"] = u_base
    return GeneratedData(data[list(LALONDE_COVARIATES) + ["treat", "re78"]], lalonde_graph(), noises,
                         "treat", "re78", ite_true=ite, cf_outcome=y_base + ite * (1 - treat),
                         ate_true=float(ite.mean()), metadata={"dgp": "semisynthetic", "seed": seed,
                                                               "mu_re74": mu_re74})


# ---------------------------------------------------------------------------
# metric-validation toy process and the five simulated models


def toy_mechanism(w, t):
    return 2 * np.sin(w) + 3 * t


class ToyModel:
    """Simulated outcome mechanism with an explicit encoder/decoder pair.

    ``abduct(y, w, t)`` returns the model's noise estimate; ``decode(u, w, t)``
    maps noise back to an outcome.  ``encode`` is ``abduct`` plus the model's
    injected reconstruction error, so ``decode(encode(y))`` is its round trip.
    """

    def __init__(self, name, mean_fn, exact=True, error_scale=0.0, sign_loss=False, unrelated=False, seed=0):
        self.name = name
        self.mean_fn = mean_fn
        self.exact = exact
        self.error_scale = error_scale
        self.sign_loss = sign_loss
        self.unrelated = unrelated
        self.seed = seed

    def encode(self, y, w, t):
        if self.unrelated:
            return np.random.default_rng([self.seed, 5]).standard_normal(np.size(y))
        u = np.asarray(y) - self.mean_fn(w, t)
        if self.sign_loss:
            u = np.abs(u)
        if self.error_scale:
            u = u + self.error_scale * np.random.default_rng([self.seed, 3]).standard_normal(u.size)
        return u

    def decode(self, u, w, t):
        if self.unrelated:
            return np.asarray(u, dtype=np.float64).copy()
        return self.mean_fn(w, t) + u


def toy_models(seed: int = 0, error_scale: float = 1.2) -> Dict[str, ToyModel]:
    """Models A (oracle) to E (inputs ignored), in decreasing order of quality.

    B keeps the true mechanism but adds ``N(0, error_scale^2)`` to every
    abducted noise, so its round trip is lossy.  C fits ``2 W + 3 T`` in place
    of ``2 sin(W) + 3 T``.  D uses the same wrong mechanism and abducts
    ``|residual|``, losing the noise sign.  E emits standard-normal outputs
    unrelated to ``(W, T)``.
    """
    linear = lambda w, t: 2 * w + 3 * t  # noqa: E731
    return {
        "A": ToyModel("A", toy_mechanism, seed=seed),
        "B": ToyModel("B", toy_mechanism, exact=False, error_scale=error_scale, seed=seed),
        "C": ToyModel("C", linear, seed=seed),
        "D": ToyModel("D", linear, exact=False, sign_loss=True, seed=seed),
        "E": ToyModel("E", linear, exact=False, unrelated=True, seed=seed),
    }


def gen_metric_validation_scm(n: int = 2000, seed: int = 42):
    """``W ~ N(0,1)``, ``T ~ Bern(sigmoid(W))``, ``Y = 2 sin(W) + 3T + U``, ``U ~ N(0,1)``.

    Returns ``(GeneratedData, models)`` with ``models`` from :func:`toy_models`.
    """
    n = _check_n(n, 500)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n)
    v_t = rng.random(n)
    t = (v_t < expit(w)).astype(float)
    u = rng.standard_normal(n)
    y = toy_mechanism(w, t) + u
    graph = CausalGraph(["W", "T", "Y"], [("W", "T"), ("W", "Y"), ("T", "Y")],
                        kinds={"T": "categorical"}, n_classes={"T": 2})
    data = pd.DataFrame({"W": w, "T": t, "Y": y})
    gd = GeneratedData(data, graph, pd.DataFrame({"W": w, "T": v_t, "Y": u}), "T", "Y",
                       ite_true=np.full(n, 3.0), cf_outcome=toy_mechanism(w, 1 - t) + u, ate_true=3.0,
                       metadata={"dgp": "metric-validation", "seed": seed})
    return gd, toy_models(seed)
