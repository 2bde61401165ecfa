"""Causal graphs, per-node mechanisms and the structural causal model estimator.

Mechanisms follow the scikit-learn estimator contract: constructor arguments
are hyperparameters, ``fit(X, y)`` learns from a parent table ``X`` and a
target column ``y``, and fitted state lives in trailing-underscore attributes.
Each mechanism also exposes the abduction pair ``encode`` / ``decode`` and
``sample`` for ancestral generation.
"""

from __future__ import annotations

import copy
import zlib
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

import networkx as nx
import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin, clone
from sklearn.ensemble import HistGradientBoostingRegressor, RandomForestRegressor
from sklearn.linear_model import LinearRegression
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .diffusion import DiffusionMechanismConfig, train_mechanism
from .exceptions import ConfigError, DegenerateColumnError, DimensionError, GraphError
from .nn import AdamState, MlpSpec, _backward, _forward, adam_update, init_params
from .samplers import LatentCode, belm_decode_generative, ddim_decode, decode, encode, sre_ratio

KINDS = ("continuous", "categorical")


class CausalGraph:
    """Directed acyclic graph with a kind (continuous or categorical) per node.

    Parent lists are sorted by name so that nothing downstream depends on the
    order in which nodes or edges were declared.
    """

    def __init__(self, nodes: Iterable[str], edges: Iterable, kinds: Optional[Dict[str, str]] = None,
                 n_classes: Optional[Dict[str, int]] = None):
        nodes = list(nodes)
        if len(set(nodes)) != len(nodes):
            raise GraphError("duplicate node names")
        edges = [tuple(e) for e in edges]
        if len(set(edges)) != len(edges):
            raise GraphError("duplicate edges")
        g = nx.DiGraph()
        g.add_nodes_from(nodes)
        for u, v in edges:
            if u not in g or v not in g:
                raise GraphError(f"edge ({u!r}, {v!r}) references an undeclared node")
            if u == v:
                raise GraphError(f"self-loop on {u!r}")
            g.add_edge(u, v)
        if not nx.is_directed_acyclic_graph(g):
            cycle = [u for u, _ in nx.find_cycle(g)]
            raise GraphError(f"graph has a cycle: {' -> '.join(cycle + cycle[:1])}")
        kinds = dict(kinds or {})
        for name, kind in kinds.items():
            if name not in g:
                raise GraphError(f"kind declared for unknown node {name!r}")
            if kind not in KINDS:
                raise GraphError(f"node {name!r}: kind must be one of {KINDS}, got {kind!r}")
        self._g = g
        self.nodes = sorted(nodes)
        self.edges = sorted(edges)
        self.kinds = {n: kinds.get(n, "continuous") for n in self.nodes}
        self.n_classes = dict(n_classes or {})

    @classmethod
    def from_dict(cls, spec: dict) -> "CausalGraph":
        try:
            return cls(spec["nodes"], spec.get("edges", []), spec.get("kinds"), spec.get("n_classes"))
        except KeyError as exc:
            raise GraphError(f"graph spec missing field {exc}") from None

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "edges": [list(e) for e in self.edges],
                "kinds": dict(self.kinds), "n_classes": dict(self.n_classes)}

    def parents(self, node) -> List[str]:
        self._check(node)
        return sorted(self._g.predecessors(node))

    def children(self, node) -> List[str]:
        self._check(node)
        return sorted(self._g.successors(node))

    def descendants(self, nodes) -> set:
        out = set()
        for n in nodes:
            self._check(n)
            out |= nx.descendants(self._g, n)
        return out

    def ancestors(self, node) -> set:
        self._check(node)
        return nx.ancestors(self._g, node)

    def roots(self) -> List[str]:
        return [n for n in self.nodes if self._g.in_degree(n) == 0]

    def topo_order(self) -> List[str]:
        return topo_order(self)

    def _check(self, node):
        if node not in self._g:
            raise GraphError(f"unknown node {node!r}")

    def __repr__(self):
        return f"CausalGraph(nodes={self.nodes}, edges={self.edges})"


def topo_order(graph: CausalGraph) -> List[str]:
    """Lexicographically smallest topological order (a function of topology and names only)."""
    return list(nx.lexicographical_topological_sort(graph._g))


class NodePreprocessor(BaseEstimator, TransformerMixin):
    """Maps a parent table to a conditioning matrix and a target to model space.

    Continuous parents are standardized, categorical parents one-hot encoded.
    Continuous targets are standardized; categorical targets keep their label
    codes ``0..K-1`` and decode by rounding and clipping to that range.
    """

    def __init__(self, standardize_target: bool = True):
        self.standardize_target = standardize_target

    def fit(self, X, y=None, parent_kinds=None, target_kind="continuous", n_classes=None):
        X = _as_frame(X)
        parent_kinds = parent_kinds or {}
        n_classes = n_classes or {}
        self.columns_ = list(X.columns)
        self.parent_kinds_ = {c: parent_kinds.get(c, "continuous") for c in self.columns_}
        self.parent_stats_ = {}
        for c in self.columns_:
            col = X[c].to_numpy(dtype=np.float64)
            if self.parent_kinds_[c] == "categorical":
                k = int(n_classes.get(c, int(col.max()) + 1 if col.size else 2))
                self.parent_stats_[c] = ("onehot", k)
            else:
                self.parent_stats_[c] = ("scale", float(col.mean()), _safe_std(col, c))
        self.condition_dim_ = sum(s[1] if s[0] == "onehot" else 1 for s in self.parent_stats_.values())
        self.target_kind_ = target_kind
        if y is not None:
            y = np.asarray(y, dtype=np.float64).reshape(-1)
            if target_kind == "categorical":
                self.n_target_classes_ = int(n_classes.get("__target__", int(y.max()) + 1))
                self.target_mean_, self.target_std_ = 0.0, 1.0
            elif self.standardize_target:
                self.target_mean_, self.target_std_ = float(y.mean()), _safe_std(y, "target")
            else:
                self.target_mean_, self.target_std_ = 0.0, 1.0
        return self

    def transform(self, X):
        check_is_fitted(self, "parent_stats_")
        X = _as_frame(X)
        missing = [c for c in self.columns_ if c not in X.columns]
        if missing:
            raise DimensionError(f"missing parent columns {missing}")
        n = len(X)
        blocks = []
        for c in self.columns_:
            col = X[c].to_numpy(dtype=np.float64)
            stat = self.parent_stats_[c]
            if stat[0] == "onehot":
                codes = np.clip(np.rint(col), 0, stat[1] - 1).astype(int)
                blocks.append(np.eye(stat[1])[codes])
            else:
                blocks.append(((col - stat[1]) / stat[2])[:, None])
        return np.hstack(blocks) if blocks else np.zeros((n, 0))

    def transform_target(self, y):
        check_is_fitted(self, "target_mean_")
        return (np.asarray(y, dtype=np.float64).reshape(-1) - self.target_mean_) / self.target_std_

    def inverse_transform_target(self, z):
        """Back to data units; categorical targets are rounded and clipped to valid codes."""
        check_is_fitted(self, "target_mean_")
        v = np.asarray(z, dtype=np.float64) * self.target_std_ + self.target_mean_
        if self.target_kind_ == "categorical":
            v = np.clip(np.rint(v), 0, self.n_target_classes_ - 1)
        return v


def _safe_std(col, name):
    std = float(np.std(col))
    if not np.isfinite(std) or std <= 1e-12:
        raise DegenerateColumnError(f"column {name!r} has zero variance")
    return std


def _as_frame(X):
    if X is None:
        return pd.DataFrame()
    if isinstance(X, pd.DataFrame):
        return X
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return pd.DataFrame(arr, columns=[f"x{i}" for i in range(arr.shape[1])])


class MlpRegressor(BaseEstimator, RegressorMixin):
    """Small residual-MLP regressor trained with Adam on squared error."""

    def __init__(self, hidden_dim=64, num_blocks=1, learning_rate=3e-3, epochs=200, batch_size=128, random_state=0):
        self.hidden_dim = hidden_dim
        self.num_blocks = num_blocks
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        rng = np.random.default_rng(self.random_state)
        self.x_mean_, self.x_std_ = X.mean(0), X.std(0) + 1e-12
        self.y_mean_, self.y_std_ = float(y.mean()), float(y.std()) + 1e-12
        Xs = (X - self.x_mean_) / self.x_std_
        ys = (y - self.y_mean_) / self.y_std_
        self.spec_ = MlpSpec(X.shape[1], self.hidden_dim, self.num_blocks, 1, "silu")
        params = init_params(self.spec_, rng)
        state = AdamState.for_params(params, self.learning_rate)
        n = X.shape[0]
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                out, cache = _forward(params, self.spec_, Xs[idx])
                g = 2.0 * (out[:, 0] - ys[idx]) / idx.size
                grads, _ = _backward(params, self.spec_, Xs[idx], cache, g[:, None])
                params, state = adam_update(params, grads, state)
        self.params_ = params
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        out = _forward(self.params_, self.spec_, (X - self.x_mean_) / self.x_std_)[0][:, 0]
        return out * self.y_std_ + self.y_mean_


_REGRESSORS = {
    "linear": lambda seed: LinearRegression(),
    "mlp": lambda seed: MlpRegressor(random_state=seed),
    "gbm": lambda seed: HistGradientBoostingRegressor(random_state=seed),
    "rf": lambda seed: RandomForestRegressor(n_estimators=100, min_samples_leaf=5, random_state=seed),
}


class Mechanism(BaseEstimator):
    """Common interface of per-node mechanisms."""

    #: mechanisms whose encode/decode pair is exact by construction report zero SRE
    exact_inverse = True

    def encode(self, y, X):
        raise NotImplementedError

    def decode(self, noise, X, keep_aux=None):
        raise NotImplementedError

    def sample(self, X, n, rng):
        raise NotImplementedError

    def _fit_preprocessor(self, X, y, parent_kinds, target_kind, n_classes, standardize=True):
        self.preprocessor_ = NodePreprocessor(standardize_target=standardize).fit(
            X, y, parent_kinds, target_kind, n_classes)
        self.target_kind_ = target_kind


class EmpiricalMechanism(Mechanism):
    """Root node modeled by its empirical distribution; abduction is the identity."""

    def fit(self, X, y, parent_kinds=None, target_kind="continuous", n_classes=None, random_state=0):
        self.values_ = np.asarray(y, dtype=np.float64).reshape(-1).copy()
        if self.values_.size == 0:
            raise ConfigError("empty column")
        self.target_kind_ = target_kind
        return self

    def encode(self, y, X=None):
        check_is_fitted(self, "values_")
        return np.asarray(y, dtype=np.float64).reshape(-1).copy()

    def decode(self, noise, X=None, keep_aux=None):
        return np.asarray(noise, dtype=np.float64).copy()

    def sample(self, X, n, rng):
        check_is_fitted(self, "values_")
        return self.values_[rng.integers(0, self.values_.size, size=n)]


class AdditiveNoiseMechanism(Mechanism):
    """``V = f(Pa) + U``; abduction is the residual ``V - f(Pa)``.

    Parameters
    ----------
    regressor : {"linear", "mlp", "gbm", "rf"} or a scikit-learn regressor
        Family used for ``f``.  ``gbm`` is histogram gradient boosting.
    """

    def __init__(self, regressor="mlp"):
        self.regressor = regressor

    def fit(self, X, y, parent_kinds=None, target_kind="continuous", n_classes=None, random_state=0):
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        self._fit_preprocessor(X, y, parent_kinds, target_kind, n_classes, standardize=False)
        cond = self.preprocessor_.transform(X) if X is not None else np.zeros((y.size, 0))
        if isinstance(self.regressor, str):
            if self.regressor not in _REGRESSORS:
                raise ConfigError(f"unknown regressor {self.regressor!r}; choose from {sorted(_REGRESSORS)}")
            reg = _REGRESSORS[self.regressor](random_state)
        else:
            reg = clone(self.regressor)
        if cond.shape[1] == 0:
            self.constant_ = float(y.mean())
            self.regressor_ = None
        else:
            self.regressor_ = reg.fit(cond, y)
        resid = y - self._predict(cond)
        self.residuals_ = resid
        self.residual_std_ = float(np.std(resid))
        return self

    def _predict(self, cond):
        if self.regressor_ is None:
            return np.full(cond.shape[0], self.constant_)
        return np.asarray(self.regressor_.predict(cond), dtype=np.float64)

    def predict(self, X):
        check_is_fitted(self, "residual_std_")
        return self._predict(self.preprocessor_.transform(X))

    def encode(self, y, X):
        return np.asarray(y, dtype=np.float64).reshape(-1) - self.predict(X)

    def decode(self, noise, X, keep_aux=None):
        v = self.predict(X) + np.asarray(noise, dtype=np.float64)
        if self.target_kind_ == "categorical":
            v = np.clip(np.rint(v), 0, self.preprocessor_.n_target_classes_ - 1)
        return v

    def sample(self, X, n, rng):
        """``f(pa)`` plus a resampled training residual."""
        check_is_fitted(self, "residual_std_")
        u = self.residuals_[rng.integers(0, self.residuals_.size, size=n)]
        return self.decode(u, X)


class DiffusionMechanism(Mechanism):
    """Conditional diffusion model of one node given its parents.

    Targets are standardized (continuous) or kept as label codes
    (categorical); parents become a conditioning vector through
    :class:`NodePreprocessor`.  ``encode`` returns a :class:`LatentCode` in
    normalized space.
    """

    def __init__(self, timesteps=200, hidden_dim=256, num_blocks=2, learning_rate=1e-4, epochs=500,
                 batch_size=128, hybrid_weight=0.0, guidance_weight=0.0, sampler="belm",
                 condition_dropout=0.1, embed_dim=32, activation="silu"):
        self.timesteps = timesteps
        self.hidden_dim = hidden_dim
        self.num_blocks = num_blocks
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.hybrid_weight = hybrid_weight
        self.guidance_weight = guidance_weight
        self.sampler = sampler
        self.condition_dropout = condition_dropout
        self.embed_dim = embed_dim
        self.activation = activation

    @property
    def exact_inverse(self):
        return self.sampler == "belm"

    def config(self, target_kind="continuous") -> DiffusionMechanismConfig:
        return DiffusionMechanismConfig(
            timesteps=self.timesteps, hidden_dim=self.hidden_dim, num_blocks=self.num_blocks,
            learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            hybrid_weight=self.hybrid_weight, guidance_weight=self.guidance_weight, sampler=self.sampler,
            condition_dropout=self.condition_dropout, target_kind=target_kind, embed_dim=self.embed_dim,
            activation=self.activation).validate()

    def fit(self, X, y, parent_kinds=None, target_kind="continuous", n_classes=None, random_state=0):
        cfg = self.config(target_kind)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        self._fit_preprocessor(X, y, parent_kinds, target_kind, n_classes)
        cond = self._cond(X, y.size)
        x0 = self.preprocessor_.transform_target(y)
        k = self.preprocessor_.n_target_classes_ if target_kind == "categorical" else None
        self.denoiser_ = train_mechanism(x0, cond, cfg, random_state, n_classes=k)
        return self

    def with_sampler(self, sampler: str) -> "DiffusionMechanism":
        """Copy sharing the trained denoiser but running another sampler."""
        if sampler not in ("belm", "ddim"):
            raise ConfigError(f"unknown sampler {sampler!r}")
        other = copy.copy(self)
        other.sampler = sampler
        return other

    def _cond(self, X, n):
        cond = self.preprocessor_.transform(X) if X is not None else np.zeros((n, 0))
        if cond.shape[1] == 0:
            return np.zeros((n, 0))
        if cond.shape[0] != n:
            raise DimensionError(f"parent table has {cond.shape[0]} rows, expected {n}")
        return cond

    def encode(self, y, X) -> LatentCode:
        check_is_fitted(self, "denoiser_")
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        x0 = self.preprocessor_.transform_target(y)
        return encode(x0, self._cond(X, y.size), self.denoiser_, self.sampler)

    def decode_normalized(self, latent: LatentCode, X, keep_aux=None):
        """Decode in model space.

        ``keep_aux`` (boolean per row) selects rows decoded from the stored
        pair; the others discard ``x_aux`` and decode from ``x_T`` alone.
        """
        check_is_fitted(self, "denoiser_")
        n = len(latent)
        cond = self._cond(X, n)
        if latent.x_aux is None or self.sampler == "ddim":
            return decode(latent.without_aux() if self.sampler == "belm" else latent, cond, self.denoiser_, self.sampler)
        if keep_aux is None:
            return decode(latent, cond, self.denoiser_, self.sampler)
        keep_aux = np.asarray(keep_aux, dtype=bool)
        out = np.empty(n)
        if keep_aux.any():
            out[keep_aux] = decode(latent.take(keep_aux), cond[keep_aux], self.denoiser_, "belm")
        if (~keep_aux).any():
            out[~keep_aux] = belm_decode_generative(latent.take(~keep_aux).x_T, cond[~keep_aux], self.denoiser_)
        return out

    def decode(self, latent: LatentCode, X, keep_aux=None):
        return self.preprocessor_.inverse_transform_target(self.decode_normalized(latent, X, keep_aux))

    def sample(self, X, n, rng):
        check_is_fitted(self, "denoiser_")
        x_T = rng.standard_normal(n)
        cond = self._cond(X, n)
        if self.sampler == "belm":
            z = belm_decode_generative(x_T, cond, self.denoiser_)
        else:
            z = ddim_decode(x_T, cond, self.denoiser_)
        return self.preprocessor_.inverse_transform_target(z)


@dataclass(frozen=True)
class SreResult:
    reported: float
    measured: float


def sre_measure(mechanism: Mechanism, X, y) -> SreResult:
    """Normalized reconstruction error of ``decode(encode(v))``.

    For exactly invertible mechanisms the reported value is 0 by definition;
    the measured float64 figure is kept as a sanity check.  Diffusion
    mechanisms are measured in normalized target space.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ConfigError("empty row set")
    if isinstance(mechanism, DiffusionMechanism):
        x0 = mechanism.preprocessor_.transform_target(y)
        rec = mechanism.decode_normalized(mechanism.encode(y, X), X)
        measured = sre_ratio(x0, rec)
    else:
        rec = mechanism.decode(mechanism.encode(y, X), X)
        measured = sre_ratio(y, rec)
    return SreResult(0.0 if mechanism.exact_inverse else measured, measured)


def node_seed(seed: int, node: str) -> int:
    """Per-node training seed; independent of declaration order."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(node.encode())]).generate_state(1)[0])


class StructuralCausalModel(BaseEstimator):
    """Graph plus one fitted mechanism per node.

    Parameters
    ----------
    graph : CausalGraph
    mechanisms : dict
        Node name to an unfitted :class:`Mechanism`.  Nodes left out default
        to :class:`EmpiricalMechanism` for roots and
        ``AdditiveNoiseMechanism("mlp")`` otherwise.
    random_state : int
    """

    def __init__(self, graph: CausalGraph, mechanisms: Optional[dict] = None, random_state: int = 0):
        self.graph = graph
        self.mechanisms = mechanisms
        self.random_state = random_state

    def _default(self, node):
        if not self.graph.parents(node):
            return EmpiricalMechanism()
        return AdditiveNoiseMechanism("mlp")

    def fit(self, data: pd.DataFrame, y=None):
        data = self._check_data(data)
        given = dict(self.mechanisms or {})
        unknown = set(given) - set(self.graph.nodes)
        if unknown:
            raise GraphError(f"mechanisms given for unknown nodes {sorted(unknown)}")
        self.mechanisms_ = {}
        for node in self.graph.topo_order():
            mech = clone(given[node]) if node in given else self._default(node)
            if isinstance(mech, EmpiricalMechanism) and self.graph.parents(node):
                raise ConfigError(f"node {node!r} has parents and cannot use an empirical mechanism")
            X = self.parent_frame(data, node)
            mech.fit(X, data[node], parent_kinds=self.graph.kinds, target_kind=self.graph.kinds[node],
                     n_classes=self._n_classes(node), random_state=node_seed(self.random_state, node))
            self.mechanisms_[node] = mech
        self.n_rows_ = len(data)
        return self

    def _n_classes(self, node):
        nc = {p: self.graph.n_classes[p] for p in self.graph.parents(node) if p in self.graph.n_classes}
        if node in self.graph.n_classes:
            nc["__target__"] = self.graph.n_classes[node]
        return nc

    def _check_data(self, data):
        if not isinstance(data, pd.DataFrame):
            raise DimensionError("data must be a pandas DataFrame with one column per node")
        missing = [n for n in self.graph.nodes if n not in data.columns]
        if missing:
            raise DimensionError(f"data is missing node columns {missing}")
        vals = data[self.graph.nodes].to_numpy(dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise DimensionError("data contains missing or non-finite values")
        for n in self.graph.nodes:
            if self.graph.kinds[n] == "categorical":
                col = data[n].to_numpy(dtype=np.float64)
                if np.any(col < 0) or np.any(col != np.rint(col)):
                    raise DimensionError(f"categorical column {n!r} must hold label codes 0..K-1")
        return data

    def parent_frame(self, data, node):
        parents = self.graph.parents(node)
        if not parents:
            return pd.DataFrame(index=range(len(data)))
        return data[parents].reset_index(drop=True)

    def mechanism(self, node) -> Mechanism:
        check_is_fitted(self, "mechanisms_")
        if node not in self.mechanisms_:
            raise GraphError(f"unknown node {node!r}")
        return self.mechanisms_[node]

    def with_sampler(self, sampler: str) -> "StructuralCausalModel":
        """Copy in which every diffusion mechanism runs ``sampler``; denoisers are shared."""
        check_is_fitted(self, "mechanisms_")
        other = copy.copy(self)
        other.mechanisms_ = {n: m.with_sampler(sampler) if isinstance(m, DiffusionMechanism) else m
                             for n, m in self.mechanisms_.items()}
        return other

    def sample(self, n: int, seed: int = 0) -> pd.DataFrame:
        """Ancestral sampling in topological order."""
        check_is_fitted(self, "mechanisms_")
        out = pd.DataFrame(index=range(n))
        for node in self.graph.topo_order():
            rng = np.random.default_rng(node_seed(seed, node))
            out[node] = self.mechanisms_[node].sample(self.parent_frame(out, node), n, rng)
        return out[self.graph.nodes]

    def encode_noise(self, data: pd.DataFrame, nodes=None) -> Dict[str, object]:
        """Abduct the exogenous representation of every (or each listed) node."""
        check_is_fitted(self, "mechanisms_")
        data = data.reset_index(drop=True)
        nodes = self.graph.topo_order() if nodes is None else nodes
        return {n: self.mechanism(n).encode(data[n], self.parent_frame(data, n)) for n in nodes}

    def decode_value(self, node, noise, parents: pd.DataFrame, keep_aux=None):
        return self.mechanism(node).decode(noise, parents, keep_aux)
