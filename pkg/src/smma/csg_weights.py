"""Sample store and nearest-neighbor integration weights.

Each optimization step deposits (design snapshot, parameter draw, inner
value, inner gradient) records. The constraint integral is then estimated
by the piecewise-constant nearest-neighbor surrogate: every point of a
parameter discretization is assigned to the closest stored record in a
joint design/parameter metric, and the record's weight is the total
quadrature mass routed to it. Weights double as importance scores for the
limited-memory eviction policy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .smoothing import SmoothingParams, h_deriv, h_eval

STORE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ParamCoord:
    """Topology and scale of one parameter coordinate.

    kind "flat" measures |x - y| / scale; kind "circular" measures the
    wrap-around distance on [0, period) divided by scale.
    """

    kind: str
    period: float | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("flat", "circular"):
            raise ValueError(f"unknown coordinate kind {self.kind!r}")
        if self.kind == "circular" and (self.period is None or self.period <= 0):
            raise ValueError("circular coordinate requires a positive period")
        if self.scale <= 0:
            raise ValueError("coordinate scale must be positive")


@dataclass(frozen=True)
class JointMetric:
    """Norm on (design, parameter) pairs.

    dist^2 = design_scale * ||u1 - u2||_2^2 / dim(u)
           + param_scale  * sum_c dist_c(x1, x2)^2
    """

    coords: tuple[ParamCoord, ...]
    design_scale: float = 1.0
    param_scale: float = 1.0

    def __post_init__(self):
        if self.design_scale < 0 or self.param_scale < 0:
            raise ValueError("metric scales must be nonnegative")
        if self.design_scale + self.param_scale <= 0:
            raise ValueError("at least one metric scale must be positive")

    def param_dist2(self, x1, x2) -> np.ndarray:
        """Squared parameter distance; broadcasts over leading axes."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        if x1.shape[-1] != len(self.coords) or x2.shape[-1] != len(self.coords):
            raise ValueError("parameter dimension does not match metric")
        diff = np.abs(x1 - x2)
        total = 0.0
        for c, coord in enumerate(self.coords):
            d = diff[..., c]
            if coord.kind == "circular":
                d = np.minimum(d % coord.period, (-d) % coord.period)
            total = total + (d / coord.scale) ** 2
        return total

    def design_dist2(self, u1, u2) -> np.ndarray:
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        if u1.shape[-1] != u2.shape[-1]:
            raise ValueError("design dimension mismatch")
        return np.sum((u1 - u2) ** 2, axis=-1) / u1.shape[-1]


def joint_distance(metric: JointMetric, u1, x1, u2, x2) -> float:
    """Distance between two (design, parameter) points."""
    d2 = (metric.design_scale * metric.design_dist2(np.atleast_1d(u1),
                                                    np.atleast_1d(u2))
          + metric.param_scale * metric.param_dist2(x1, x2))
    return float(np.sqrt(d2))


@dataclass
class SampleRecord:
    design_snapshot: np.ndarray
    param: np.ndarray
    inner_value: float
    inner_gradient: np.ndarray
    iteration_born: int

    def __post_init__(self):
        self.design_snapshot = np.asarray(self.design_snapshot, dtype=float)
        self.param = np.atleast_1d(np.asarray(self.param, dtype=float))
        self.inner_gradient = np.asarray(self.inner_gradient, dtype=float)
        if self.inner_gradient.shape != self.design_snapshot.shape:
            raise ValueError("gradient length must equal design length")


class SampleStore:
    """Ordered collection of samples with cached stacked arrays.

    capacity is bookkeeping for the limited-memory mode; the driver is
    responsible for evicting back below it at the end of an iteration
    (weights are computed over the fresh batch first).
    """

    def __init__(self, metric: JointMetric, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive when set")
        self.metric = metric
        self.capacity = capacity
        self.records: list[SampleRecord] = []
        self._stacks: dict | None = None

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: SampleRecord) -> None:
        self.records.append(record)
        self._stacks = None

    def clear(self) -> None:
        self.records.clear()
        self._stacks = None

    def _stacked(self) -> dict:
        if self._stacks is None:
            if not self.records:
                raise ValueError("sample store is empty")
            self._stacks = {
                "designs": np.stack([r.design_snapshot for r in self.records]),
                "params": np.stack([r.param for r in self.records]),
                "values": np.array([r.inner_value for r in self.records]),
                "gradients": np.stack([r.inner_gradient for r in self.records]),
            }
        return self._stacks

    @property
    def values(self) -> np.ndarray:
        return self._stacked()["values"]

    @property
    def gradients(self) -> np.ndarray:
        return self._stacked()["gradients"]

    def keep(self, indices: np.ndarray) -> None:
        """Retain the given record indices, preserving order."""
        indices = np.sort(np.asarray(indices, dtype=int))
        self.records = [self.records[i] for i in indices]
        self._stacks = None

    def save(self, path) -> None:
        """Binary dump for restarts; round-trips exactly."""
        st = self._stacked() if self.records else None
        meta = {
            "version": STORE_FORMAT_VERSION,
            "capacity": -1 if self.capacity is None else self.capacity,
            "design_scale": self.metric.design_scale,
            "param_scale": self.metric.param_scale,
            "coord_kinds": [c.kind for c in self.metric.coords],
            "coord_periods": [0.0 if c.period is None else c.period
                              for c in self.metric.coords],
            "coord_scales": [c.scale for c in self.metric.coords],
        }
        arrays = {
            "born": np.array([r.iteration_born for r in self.records], dtype=int),
        }
        if st is not None:
            arrays.update(designs=st["designs"], params=st["params"],
                          values=st["values"], gradients=st["gradients"])
        np.savez(path, meta_version=meta["version"],
                 meta_capacity=meta["capacity"],
                 meta_design_scale=meta["design_scale"],
                 meta_param_scale=meta["param_scale"],
                 meta_coord_kinds=np.array(meta["coord_kinds"]),
                 meta_coord_periods=np.array(meta["coord_periods"]),
                 meta_coord_scales=np.array(meta["coord_scales"]),
                 **arrays)

    @classmethod
    def load(cls, path) -> "SampleStore":
        with np.load(path, allow_pickle=False) as z:
            if int(z["meta_version"]) != STORE_FORMAT_VERSION:
                raise ValueError("unsupported store format version")
            coords = tuple(
                ParamCoord(kind=str(k),
                           period=None if p == 0.0 else float(p),
                           scale=float(s))
                for k, p, s in zip(z["meta_coord_kinds"],
                                   z["meta_coord_periods"],
                                   z["meta_coord_scales"]))
            cap = int(z["meta_capacity"])
            store = cls(metric=JointMetric(
                coords=coords,
                design_scale=float(z["meta_design_scale"]),
                param_scale=float(z["meta_param_scale"])),
                capacity=None if cap < 0 else cap)
            if "values" in z:
                born = z["born"]
                for i in range(z["values"].shape[0]):
                    store.append(SampleRecord(
                        design_snapshot=z["designs"][i],
                        param=z["params"][i],
                        inner_value=float(z["values"][i]),
                        inner_gradient=z["gradients"][i],
                        iteration_born=int(born[i])))
        return store


def _record_offsets(store: SampleStore, u_current) -> np.ndarray:
    """Design-distance part of the squared joint distance, per record."""
    m = store.metric
    if m.design_scale == 0.0:
        return np.zeros(len(store))
    designs = store._stacked()["designs"]
    return m.design_scale * m.design_dist2(designs,
                                           np.asarray(u_current, dtype=float))


def nearest_index(store: SampleStore, u, x) -> int:
    """Index of the closest record to (u, x); ties go to the smallest index."""
    if len(store) == 0:
        raise ValueError("sample store is empty")
    m = store.metric
    d2 = _record_offsets(store, u) + m.param_scale * m.param_dist2(
        store._stacked()["params"], np.atleast_1d(np.asarray(x, dtype=float)))
    return int(np.argmin(d2))


def pseudoexact_weights(store: SampleStore, u_current, quad_points,
                        quad_weights) -> np.ndarray:
    """Route each quadrature point's mass to its nearest record.

    quad_points: (T, m) parameter discretization distributed according to
    the parameter measure; quad_weights: (T,) nonnegative, summing to 1.
    """
    if len(store) == 0:
        raise ValueError("sample store is empty")
    pts = np.atleast_2d(np.asarray(quad_points, dtype=float))
    w = np.asarray(quad_weights, dtype=float)
    if w.shape != (pts.shape[0],):
        raise ValueError("quadrature weights must match point count")
    if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("quadrature weights must be nonnegative and sum to 1")

    m = store.metric
    params = store._stacked()["params"]
    # (T, K) squared distances; design part is constant per record
    d2 = (m.param_scale * m.param_dist2(pts[:, None, :], params[None, :, :])
          + _record_offsets(store, u_current)[None, :])
    owner = np.argmin(d2, axis=1)   # ties resolve to the smallest index
    alpha = np.bincount(owner, weights=w, minlength=len(store))
    return alpha


def empirical_weights(store: SampleStore, u_current) -> np.ndarray:
    """Pseudoexact weights with the records' own parameters as points."""
    params = store._stacked()["params"]
    T = params.shape[0]
    return pseudoexact_weights(store, u_current, params, np.full(T, 1.0 / T))


def aggregate(store: SampleStore, weights: np.ndarray,
              params: SmoothingParams) -> tuple[float, np.ndarray]:
    """Estimator for records that store raw compliances.

    G_hat  = sum_k alpha_k h(c_k - c_max)
    dG_hat = sum_k alpha_k h'(c_k - c_max) grad c_k
    """
    alpha = _checked_weights(store, weights)
    t = store.values - params.c_max
    g_hat = float(alpha @ h_eval(t, params))
    dg_hat = (alpha * h_deriv(t, params)) @ store.gradients
    return g_hat, dg_hat


def aggregate_precomposed(store: SampleStore,
                          weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Estimator for records whose values already include the smoothing."""
    alpha = _checked_weights(store, weights)
    return float(alpha @ store.values), alpha @ store.gradients


def _checked_weights(store: SampleStore, weights) -> np.ndarray:
    alpha = np.asarray(weights, dtype=float)
    if alpha.shape != (len(store),):
        raise ValueError("one weight per stored record required")
    if np.any(alpha < 0.0) or abs(alpha.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative and sum to 1")
    return alpha


def evict_min_weight(store: SampleStore, weights: np.ndarray,
                     n_evict: int) -> SampleStore:
    """Drop the n_evict smallest-weight records (ties: smallest index)."""
    if n_evict >= len(store):
        raise ValueError("cannot evict the entire store")
    alpha = np.asarray(weights, dtype=float)
    if alpha.shape != (len(store),):
        raise ValueError("one weight per stored record required")
    order = np.argsort(alpha, kind="stable")
    store.keep(order[n_evict:])
    return store
