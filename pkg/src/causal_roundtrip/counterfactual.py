"""Abduction-action-prediction on a fitted SCM: counterfactual rows, effects, attribution, fairness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import ConfigError, DimensionError, GraphError, SeedRunError
from .scm import StructuralCausalModel


def _validate_interventions(scm: StructuralCausalModel, interventions: dict, n: int) -> Dict[str, np.ndarray]:
    out = {}
    for node, value in interventions.items():
        if node not in scm.graph.nodes:
            raise GraphError(f"intervention on unknown node {node!r}")
        v = np.broadcast_to(np.asarray(value, dtype=np.float64), (n,)).copy()
        if scm.graph.kinds[node] == "categorical":
            k = scm.graph.n_classes.get(node)
            if np.any(v != np.rint(v)) or np.any(v < 0) or (k is not None and np.any(v > k - 1)):
                raise ConfigError(f"intervention on categorical node {node!r} must use valid label codes")
        out[node] = v
    return out


def _same_rows(a: pd.DataFrame, b: pd.DataFrame) -> np.ndarray:
    if a.shape[1] == 0:
        return np.ones(len(a), dtype=bool)
    return np.all(a.to_numpy() == b.to_numpy(), axis=1)


def counterfactual(scm: StructuralCausalModel, data: pd.DataFrame, interventions: dict,
                   noise: Optional[dict] = None) -> pd.DataFrame:
    """Counterfactual table under ``do(interventions)`` for every row of ``data``.

    Intervention values may be scalars or per-row arrays.  Descendants of the
    intervened set are recomputed in topological order from their abducted
    noise; every other column keeps its observed value.  Diffusion nodes whose
    parents are unchanged in a row decode from the stored latent pair, the
    rest re-bootstrap the pair under the new parents.
    """
    data = data.reset_index(drop=True)
    n = len(data)
    forced = _validate_interventions(scm, interventions, n)
    cf = data.copy()
    for node, v in forced.items():
        cf[node] = v
    targets = [v for v in scm.graph.topo_order() if v in scm.graph.descendants(forced) and v not in forced]
    if noise is None:
        noise = scm.encode_noise(data, targets)
    for node in targets:
        pa_cf = scm.parent_frame(cf, node)
        keep = _same_rows(pa_cf, scm.parent_frame(data, node))
        cf[node] = scm.decode_value(node, noise[node], pa_cf, keep_aux=keep)
    return cf


def counterfactual_row(scm: StructuralCausalModel, row, interventions: dict) -> pd.Series:
    """Single-row form of :func:`counterfactual`."""
    frame = row.to_frame().T if isinstance(row, pd.Series) else pd.DataFrame([row])
    return counterfactual(scm, frame.astype(float), interventions).iloc[0]


@dataclass
class EffectReport:
    """Effect estimate of one model; ``ate == mean(ite)`` by construction."""

    ate: float
    ite: np.ndarray
    pehe: Optional[float] = None
    y1: Optional[np.ndarray] = None
    y0: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {"ate": self.ate, "pehe": self.pehe}


def _binary(data, column, what):
    v = data[column].to_numpy(dtype=np.float64)
    if not np.all((v == 0) | (v == 1)):
        raise ConfigError(f"{what} column {column!r} must be binary (codes 0/1)")
    return v


def estimate_ate(scm: StructuralCausalModel, data: pd.DataFrame, treatment: str, outcome: str,
                 ite_true=None) -> EffectReport:
    """Counterfactual-imputation ATE.

    Each unit's missing potential outcome comes from ``do(T := 1 - t)``; the
    factual arm uses the observed outcome.
    """
    data = data.reset_index(drop=True)
    t = _binary(data, treatment, "treatment")
    y = data[outcome].to_numpy(dtype=np.float64)
    y_cf = counterfactual(scm, data, {treatment: 1.0 - t})[outcome].to_numpy()
    y1 = np.where(t == 1, y, y_cf)
    y0 = np.where(t == 1, y_cf, y)
    ite = y1 - y0
    score = None if ite_true is None else pehe(ite, ite_true)
    return EffectReport(float(np.mean(ite)), ite, score, y1, y0)


def pehe(ite_hat, ite_true, root: bool = True) -> float:
    """Precision in estimating heterogeneous effects: ``sqrt(mean((hat - true)^2))``."""
    ite_hat = np.asarray(ite_hat, dtype=np.float64).reshape(-1)
    ite_true = np.asarray(ite_true, dtype=np.float64).reshape(-1)
    if ite_hat.shape != ite_true.shape:
        raise DimensionError(f"length mismatch {ite_hat.size} vs {ite_true.size}")
    mse = float(np.mean((ite_hat - ite_true) ** 2))
    return float(np.sqrt(mse)) if root else mse


def cate_by_group(scm: Optional[StructuralCausalModel], data: pd.DataFrame, treatment: str, outcome: str,
                  column: str, values: Optional[Sequence] = None, ite=None,
                  min_support: int = 10) -> Dict[float, dict]:
    """Mean ITE within each group ``data[column] == value``.

    ITEs come from :func:`estimate_ate` unless precomputed ones are passed
    (``scm`` may then be ``None``).  Groups with fewer than ``min_support``
    units are flagged ``low_support``.
    """
    data = data.reset_index(drop=True)
    if ite is None:
        ite = estimate_ate(scm, data, treatment, outcome).ite
    ite = np.asarray(ite, dtype=np.float64)
    col = data[column].to_numpy()
    if ite.size != col.size:
        raise DimensionError("ite and data lengths differ")
    values = sorted(np.unique(col)) if values is None else values
    out = {}
    for v in values:
        mask = col == v
        if not mask.any():
            raise ConfigError(f"group {column}={v} is empty")
        out[float(v)] = {"cate": float(ite[mask].mean()), "n": int(mask.sum()),
                         "low_support": bool(mask.sum() < min_support)}
    return out


def attribute_exogenous(scm: StructuralCausalModel, victim: pd.DataFrame, donor: pd.DataFrame, outcome: str,
                        outcome_only: bool = False) -> np.ndarray:
    """Outcome change when victims receive the donors' exogenous noise.

    Rows are paired by position.  Swapped noises are those of every non-root
    node on the outcome's ancestral path, the outcome included (or only the
    outcome with ``outcome_only``).  Roots keep the victim's observed values and
    swapped nodes are recomputed in topological order.
    """
    victim = victim.reset_index(drop=True).astype(float)
    donor = donor.reset_index(drop=True).astype(float)
    if len(victim) != len(donor):
        raise DimensionError("victim and donor tables must have the same length")
    g = scm.graph
    path = (g.ancestors(outcome) | {outcome})
    swap = [n for n in g.topo_order() if n in path and g.parents(n)]
    if outcome_only:
        swap = [outcome]
    recompute = [n for n in g.topo_order() if n in path and g.parents(n) and (n in swap or g.ancestors(n) & set(swap))]
    noise_v = scm.encode_noise(victim, recompute)
    noise_d = scm.encode_noise(donor, swap)
    cf = victim.copy()
    for node in recompute:
        pa = scm.parent_frame(cf, node)
        if node in swap:
            keep = _same_rows(pa, scm.parent_frame(donor, node))
            cf[node] = scm.decode_value(node, noise_d[node], pa, keep_aux=keep)
        else:
            keep = _same_rows(pa, scm.parent_frame(victim, node))
            cf[node] = scm.decode_value(node, noise_v[node], pa, keep_aux=keep)
    return cf[outcome].to_numpy() - victim[outcome].to_numpy()


@dataclass
class FairnessReport:
    gap_by_group: Dict[float, float]
    mean_gap: float
    actual: np.ndarray
    counterfactual: np.ndarray
    attribute: np.ndarray

    def to_dict(self) -> dict:
        return {"mean_gap": self.mean_gap, "gap_by_group": {str(k): v for k, v in self.gap_by_group.items()}}


def fairness_audit(scm: StructuralCausalModel, data: pd.DataFrame, attribute: str, outcome: str) -> FairnessReport:
    """Per-unit ``actual - counterfactual`` outcome with the binary ``attribute`` flipped."""
    data = data.reset_index(drop=True)
    a = _binary(data, attribute, "sensitive attribute")
    actual = data[outcome].to_numpy(dtype=np.float64)
    cf = counterfactual(scm, data, {attribute: 1.0 - a})[outcome].to_numpy()
    gap = actual - cf
    groups = {float(v): float(gap[a == v].mean()) for v in (0.0, 1.0) if np.any(a == v)}
    return FairnessReport(groups, float(gap.mean()), actual, cf, a)


@dataclass
class EnsembleReport:
    """Per-seed scalars with mean and sample standard deviation (n - 1).

    ``single_seed`` flags that ``std`` is 0 by convention.  ``ensembled_ite`` is
    the per-unit mean ITE over seeds when runs returned ITEs.
    """

    seeds: List[int]
    per_seed: Dict[str, List[float]]
    mean: Dict[str, float]
    std: Dict[str, float]
    single_seed: bool
    ensembled_ite: Optional[np.ndarray] = None
    extras: Dict[str, list] = field(default_factory=dict)


def aggregate(values: Sequence[float]):
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def ensemble_run(run: Callable[[int], dict], seeds: Sequence[int]) -> EnsembleReport:
    """Run ``run(seed)`` for each seed and aggregate its scalar outputs.

    ``run`` returns a dict of floats; an optional ``"ite"`` array is averaged
    across seeds, and non-scalar entries are kept per seed in ``extras``.
    """
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("at least one seed is required")
    per_seed: Dict[str, List[float]] = {}
    extras: Dict[str, list] = {}
    ites = []
    for s in seeds:
        try:
            out = run(s)
        except Exception as exc:
            raise SeedRunError(f"run failed for seed {s}: {exc}", s) from exc
        for key, val in out.items():
            if key == "ite":
                ites.append(np.asarray(val, dtype=np.float64))
            elif np.isscalar(val) and not isinstance(val, str):
                per_seed.setdefault(key, []).append(float(val))
            else:
                extras.setdefault(key, []).append(val)
    mean, std = {}, {}
    for key, vals in per_seed.items():
        mean[key], std[key] = aggregate(vals)
    ens = np.mean(ites, axis=0) if ites else None
    return EnsembleReport(seeds, per_seed, mean, std, len(seeds) == 1, ens, extras)
