"""The two built-in problems: a rim-loaded wheel and a clamped plate.

Wheel: annulus of radius 1, clamped at the hub, prescribed material on the
outer rim, loaded by a sharply localized normal traction whose direction
omega is uniform on the circle. Uncertainty enters the right-hand side
only, so one factorization serves a whole batch of load cases.

Plate: 2l x 1l rectangle clamped at the bottom, loaded on a strip of the
top edge at a random position omega with a random inclination alpha, and
weakened in a random disc at xi. The alpha-average of the compliance is
analytic (two unit solves per omega node), the omega integral is a fixed
trapezoid, and only xi is sampled; each xi requires its own factorization.

Both builders rescale their load so the initial design's compliance at the
distribution-mean parameter equals 1, making the default cap c_max = 1.5
and the published smoothing constants directly meaningful.
"""
from __future__ import annotations

import copy

import numpy as np

from . import design_field as df
from .csg_weights import JointMetric, ParamCoord
from .mesh_fem import (
    FactorizedSystem,
    StructuredMesh,
    assemble_stiffness,
    build_disc_mesh,
    build_rect_mesh,
    element_quadratic_forms,
)
from .smoothing import SmoothingParams, h_deriv, h_eval

DEFAULT_ANGLE_RANGE = (np.pi / 4.0, 3.0 * np.pi / 4.0)


def angle_integrals(a: float, b: float) -> tuple[float, float, float, float]:
    """(int cos^2, int sin^2, int cos*sin, length) over [a, b]."""
    ix = 0.5 * (b - a) + 0.25 * (np.sin(2 * b) - np.sin(2 * a))
    iy = 0.5 * (b - a) - 0.25 * (np.sin(2 * b) - np.sin(2 * a))
    ixy = 0.5 * (np.sin(b) ** 2 - np.sin(a) ** 2)
    return ix, iy, ixy, b - a


def angle_reduced_compliance(system: FactorizedSystem, Fx: np.ndarray,
                             Fy: np.ndarray,
                             angle_range: tuple[float, float] = DEFAULT_ANGLE_RANGE,
                             ) -> float:
    """Average over load angles of F(alpha)^T K^-1 F(alpha), analytically.

    F(alpha) = cos(alpha) Fx + sin(alpha) Fy; the trigonometric moments
    over the angle interval are closed-form, so two solves suffice.
    """
    ix, iy, ixy, width = angle_integrals(*angle_range)
    ux = system.solve(np.asarray(Fx, dtype=float))
    uy = system.solve(np.asarray(Fy, dtype=float))
    return (ix * float(Fx @ ux) + iy * float(Fy @ uy)
            + ixy * (float(Fx @ uy) + float(Fy @ ux))) / width


def _backprop_batch(grads_wrt_s: np.ndarray, rho: np.ndarray,
                    filt: df.FilterMatrix, simp: df.SimpParams,
                    mesh: StructuredMesh) -> np.ndarray:
    """backprop_to_design for a (B, n_elements) block of gradients."""
    y = filt.apply(rho)
    inner = (simp.s * y ** (simp.s - 1.0)
             * (simp.e_solid - simp.e_void)) * grads_wrt_s
    if mesh.fixed_density:
        inner = inner.copy()
        inner[..., mesh.fixed_density_idx] = 0.0
    return filt.apply_transpose(inner.T).T


class _ProblemBase:
    """Shared design-field plumbing; subclasses provide the physics."""

    mesh: StructuredMesh
    filt: df.FilterMatrix
    simp: df.SimpParams
    smoothing: SmoothingParams
    name: str = ""
    aggregate_mode: str = "wrap_h"
    initial_value: float = 0.75

    @property
    def n_design(self) -> int:
        return self.mesh.n_elements

    @property
    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.mesh.n_elements, dtype=bool)
        if self.mesh.fixed_density:
            mask[self.mesh.fixed_density_idx] = False
        return mask

    def initial_design(self) -> np.ndarray:
        rho = np.full(self.mesh.n_elements, self.initial_value)
        if self.mesh.fixed_density:
            rho[self.mesh.fixed_density_idx] = self.mesh.fixed_density_values
        return rho

    def with_simp(self, s: float):
        """Same problem with a different SIMP exponent (shared geometry)."""
        clone = copy.copy(self)
        clone.simp = self.simp.with_exponent(s)
        return clone

    def rvol(self, rho) -> float:
        return df.rvol(rho, self.filt, self.mesh.element_volumes)

    def pvol(self, rho) -> float:
        return df.pvol(rho, self.filt, self.simp, self.mesh.element_volumes)

    def rvol_gradient(self) -> np.ndarray:
        return df.rvol_gradient(self.filt, self.mesh.element_volumes)


class WheelProblem(_ProblemBase):
    aggregate_mode = "wrap_h"
    name = "wheel"

    def __init__(self, mesh: StructuredMesh, filt: df.FilterMatrix,
                 simp: df.SimpParams, smoothing: SmoothingParams,
                 load_scale: float = 1.0, initial_value: float = 0.75):
        self.mesh = mesh
        self.filt = filt
        self.simp = simp
        self.smoothing = smoothing
        self.load_scale = load_scale
        self.initial_value = initial_value

        nr, na = mesh.shape
        self._outer_nodes = nr * na + np.arange(na)
        self._build_rim_quadrature(na)

        self.default_simp_schedule = ((1, simp.s), (200, 15.0))
        self.default_verify_spec = 1080
        self.default_pseudo_points = 1024

    def _build_rim_quadrature(self, na: int) -> None:
        """Consistent rim traction: integrate f * n against the linear
        shape functions over each rim edge (composite Gauss in the angle),
        precomputed as a sparse operator so F(omega) = scale * (A @ f).

        The traction is much narrower than an edge, so sub-edge panels are
        needed; node-sampled lumping would make the resultant oscillate at
        element frequency and alias against coarse load quadratures."""
        import scipy.sparse as sp
        panels, order = 6, 6
        gp, gw = np.polynomial.legendre.leggauss(order)
        dtheta = 2.0 * np.pi / na
        offs, wts = [], []
        for p in range(panels):
            a, b = p * dtheta / panels, (p + 1) * dtheta / panels
            offs.append(0.5 * (b - a) * gp + 0.5 * (a + b))
            wts.append(0.5 * (b - a) * gw)
        offs = np.concatenate(offs)          # within-edge angles
        wts = np.concatenate(wts)            # arc-length weights (r = 1)

        theta = (np.arange(na)[:, None] * dtheta + offs[None, :]).ravel()
        w = np.tile(wts, na)
        phi = np.tile(offs / dtheta, na)     # shape fn of the next node
        edge = np.repeat(np.arange(na), offs.size)
        n0 = self._outer_nodes[edge]
        n1 = self._outer_nodes[(edge + 1) % na]

        nx, ny = -np.cos(theta), -np.sin(theta)    # inner normal at r = 1
        rows = np.concatenate([2 * n0, 2 * n0 + 1, 2 * n1, 2 * n1 + 1])
        cols = np.tile(np.arange(theta.size), 4)
        vals = np.concatenate([w * (1 - phi) * nx, w * (1 - phi) * ny,
                               w * phi * nx, w * phi * ny])
        self._rim_theta = theta
        self._rim_beta = np.arctan2(np.cos(theta), np.sin(theta))
        self._rim_op = sp.coo_matrix(
            (vals, (rows, cols)),
            shape=(self.mesh.n_dofs, theta.size)).tocsr()

    # -- loads ---------------------------------------------------------

    def intensity(self, beta, omega) -> np.ndarray:
        """Traction intensity around the rim for load direction omega."""
        return 1.0 + np.tanh(1e3 * (np.cos(np.asarray(beta) - omega) - 1.0)
                             + 1e-1)

    def load(self, omega: float) -> np.ndarray:
        f = self.intensity(self._rim_beta, omega) * self.load_scale
        return self._rim_op @ f

    def load_block(self, omegas: np.ndarray) -> np.ndarray:
        f = self.intensity(self._rim_beta[:, None],
                           np.asarray(omegas)[None, :]) * self.load_scale
        return self._rim_op @ f

    # -- evaluation ----------------------------------------------------

    def stiffness_field(self, rho) -> np.ndarray:
        return df.interpolate_stiffness(rho, self.filt, self.simp,
                                        mesh=self.mesh)

    def evaluate_records(self, rho, params, want_grads: bool = True):
        """Raw compliances (and design gradients) for a batch of omegas."""
        omegas = np.asarray(params, dtype=float).reshape(-1)
        system = assemble_stiffness(self.mesh, self.stiffness_field(rho))
        F = self.load_block(omegas)
        U = system.solve(F)
        values = np.einsum("db,db->b", F, U)
        if not want_grads:
            return values, None
        grads_s = -element_quadratic_forms(self.mesh, U, U)
        grads = _backprop_batch(grads_s, np.asarray(rho, dtype=float),
                                self.filt, self.simp, self.mesh)
        return values, grads

    # -- parameter space -----------------------------------------------

    def sample_param(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(0.0, 2.0 * np.pi)])

    def metric(self) -> JointMetric:
        return JointMetric(
            coords=(ParamCoord("circular", period=2.0 * np.pi,
                               scale=2.0 * np.pi),),
            design_scale=1.0, param_scale=1.0)

    def pseudo_quadrature(self, n_points: int):
        pts = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
        return pts[:, None], np.full(n_points, 1.0 / n_points)

    def baseline_nodes(self, spec):
        n = int(spec)
        return self.pseudo_quadrature(n)

    def default_baseline_spec(self, batch_size: int):
        return batch_size

    def dense_raw(self, rho, spec=None):
        """Raw compliances on an equispaced circle rule (periodic trapezoid)."""
        n = int(spec) if spec is not None else self.default_verify_spec
        pts, w = self.pseudo_quadrature(n)
        values, _ = self.evaluate_records(rho, pts, want_grads=False)
        return values, w


def wheel_problem(n_radial: int = 18, n_angular: int = 72,
                  r_inner: float = 0.1, r_rim: float = 0.95,
                  r_min: float | None = None, simp_s: float = 10.0,
                  a1: float = 50.0, a2: float = 0.1, a3: float = 5.0,
                  p_level: float = 0.025, c_max: float | None = None,
                  poisson: float = 0.3,
                  initial_value: float = 0.75) -> WheelProblem:
    """Wheel benchmark; traction scaled so the initial compliance is 1."""
    mesh = build_disc_mesh(n_radial, n_angular, r_inner, r_rim,
                           poisson=poisson)
    if r_min is None:
        r_min = 1.5 * (1.0 - r_inner) / n_radial
    filt = df.build_filter(mesh, r_min)
    simp = df.SimpParams(s=simp_s)
    smoothing = SmoothingParams(a1=a1, a2=a2, a3=a3, c_max=1.0,
                                p_level=p_level)
    problem = WheelProblem(mesh, filt, simp, smoothing,
                           initial_value=initial_value)
    # pin the compliance scale at the mean direction of the uniform omega
    values, _ = problem.evaluate_records(problem.initial_design(),
                                         np.array([np.pi]), want_grads=False)
    problem.load_scale = 1.0 / np.sqrt(float(values[0]))
    problem.smoothing = SmoothingParams(
        a1=a1, a2=a2, a3=a3, c_max=1.5 if c_max is None else c_max,
        p_level=p_level)
    return problem


class PlateProblem(_ProblemBase):
    aggregate_mode = "precomposed"
    name = "plate"

    def __init__(self, mesh: StructuredMesh, filt: df.FilterMatrix,
                 simp: df.SimpParams, smoothing: SmoothingParams,
                 ell: float = 1.0, n_omega: int = 32,
                 load_scale: float = 1.0, weakening: bool = True,
                 initial_value: float = 0.65):
        self.mesh = mesh
        self.filt = filt
        self.simp = simp
        self.smoothing = smoothing
        self.ell = ell
        self.n_omega = n_omega
        self.load_scale = load_scale
        self.weakening = weakening
        self.initial_value = initial_value

        self.omega_range = (ell / 5.0, 4.0 * ell / 5.0)
        self.xi_range = ((ell / 4.0, 7.0 * ell / 4.0),
                         (ell / 8.0, 7.0 * ell / 8.0))
        self.angle_range = DEFAULT_ANGLE_RANGE
        self.bump_radius = ell / 18.0

        # omega trapezoid: fixed inner rule of the constraint integral
        self.omega_nodes = np.linspace(*self.omega_range, n_omega)
        w = np.ones(n_omega)
        w[0] = w[-1] = 0.5
        self.omega_weights = w / w.sum()

        nx, ny = mesh.shape
        self._top_nodes = ny * (nx + 1) + np.arange(nx + 1)
        self._top_x = mesh.nodes[self._top_nodes, 0]
        self._gauss = np.polynomial.legendre.leggauss(8)
        self._bump_panels = 32

        self.default_simp_schedule = ((1, simp.s),)
        self.default_verify_spec = (50, 50)
        self.default_pseudo_points = 32

    # -- loads and material modifier ------------------------------------

    def bump(self, t, omega) -> np.ndarray:
        """Load intensity profile of width 2*l/18 centered at omega."""
        t = np.asarray(t, dtype=float)
        d2 = (18.0 / self.ell) ** 2 * (t - omega) ** 2
        out = np.zeros_like(t)
        inside = d2 < 1.0
        out[inside] = np.exp(-0.1 / (1.0 - d2[inside]))
        return out

    def weakness(self, xi) -> np.ndarray:
        """Stiffness reduction field g_xi at the element centroids."""
        if not self.weakening:
            return np.zeros(self.mesh.n_elements)
        xi = np.asarray(xi, dtype=float)
        r2 = self.bump_radius ** 2
        d2 = np.sum((self.mesh.element_centroids - xi) ** 2, axis=1)
        out = np.zeros(self.mesh.n_elements)
        inside = d2 < r2
        out[inside] = 0.99 * np.exp(-d2[inside] / (r2 * (r2 - d2[inside])))
        return out

    def _consistent_profile(self, omega: float) -> np.ndarray:
        """Nodal loads from integrating the bump against the top-edge
        shape functions: composite Gauss on fixed panels over the bump
        support, split at edge boundaries. Even a bump narrower than one
        edge produces its full resultant, independent of node alignment."""
        x = self._top_x
        nodal = np.zeros(x.size)
        gp, gw = self._gauss
        lo = max(omega - self.bump_radius, x[0])
        hi = min(omega + self.bump_radius, x[-1])
        if hi <= lo:
            return nodal
        # cosine-graded panels: the bump is infinitely flat but strongly
        # non-polynomial at its support ends, so crowd the cuts there
        u = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi,
                                            self._bump_panels + 1)))
        cuts = lo + (hi - lo) * u
        interior = x[(x > lo) & (x < hi)]
        cuts = np.unique(np.concatenate([cuts, interior]))
        for a, b in zip(cuts[:-1], cuts[1:]):
            e = min(int(np.searchsorted(x, 0.5 * (a + b)) - 1), x.size - 2)
            t = 0.5 * (b - a) * gp + 0.5 * (a + b)
            w = 0.5 * (b - a) * gw * self.bump(t, omega)
            phi = (t - x[e]) / (x[e + 1] - x[e])
            nodal[e] += np.sum(w * (1.0 - phi))
            nodal[e + 1] += np.sum(w * phi)
        return nodal

    def load_pair(self, omega: float) -> tuple[np.ndarray, np.ndarray]:
        """Unit loads (Fx, Fy) so that F(alpha) = cos(a) Fx + sin(a) Fy.

        alpha is measured from the positive x axis; alpha = pi/2 points
        straight down, so the downward sign lives in Fy.
        """
        prof = self._consistent_profile(omega) * self.load_scale
        Fx = np.zeros(self.mesh.n_dofs)
        Fy = np.zeros(self.mesh.n_dofs)
        Fx[2 * self._top_nodes] = prof
        Fy[2 * self._top_nodes + 1] = -prof
        return Fx, Fy

    def load_block(self) -> tuple[np.ndarray, np.ndarray]:
        """(n_dofs, n_omega) blocks of Fx and Fy over the omega nodes."""
        cache = getattr(self, "_load_cache", None)
        if cache is None or cache[0] != self.load_scale:
            fx, fy = [], []
            for om in self.omega_nodes:
                Fx, Fy = self.load_pair(float(om))
                fx.append(Fx)
                fy.append(Fy)
            cache = (self.load_scale, np.column_stack(fx), np.column_stack(fy))
            self._load_cache = cache
        return cache[1], cache[2]

    def stiffness_field(self, rho, xi) -> np.ndarray:
        interp = df.interpolate_stiffness(rho, self.filt, self.simp,
                                          mesh=self.mesh)
        return interp * (1.0 - self.weakness(xi))

    # -- evaluation ------------------------------------------------------

    def _factorize(self, rho, xi) -> FactorizedSystem:
        return assemble_stiffness(self.mesh, self.stiffness_field(rho, xi))

    def angle_averaged_block(self, system: FactorizedSystem,
                             FxB: np.ndarray, FyB: np.ndarray):
        """Per-omega angle-averaged compliances plus the solved states."""
        ix, iy, ixy, width = angle_integrals(*self.angle_range)
        Ux = system.solve(FxB)
        Uy = system.solve(FyB)
        cxx = np.einsum("db,db->b", FxB, Ux)
        cyy = np.einsum("db,db->b", FyB, Uy)
        cxy = np.einsum("db,db->b", FxB, Uy)
        cyx = np.einsum("db,db->b", FyB, Ux)
        cbar = (ix * cxx + iy * cyy + ixy * (cxy + cyx)) / width
        return cbar, Ux, Uy

    def xi_eval(self, rho, xi, want_grad: bool = True):
        """One record: omega-trapezoid of h(angle-averaged compliance - cap).

        One factorization, 2 * n_omega right-hand sides.
        """
        rho = np.asarray(rho, dtype=float)
        system = self._factorize(rho, xi)
        FxB, FyB = self.load_block()
        cbar, Ux, Uy = self.angle_averaged_block(system, FxB, FyB)
        t = cbar - self.smoothing.c_max
        value = float(self.omega_weights @ h_eval(t, self.smoothing))
        if not want_grad:
            return value, None

        ix, iy, ixy, width = angle_integrals(*self.angle_range)
        qxx = element_quadratic_forms(self.mesh, Ux, Ux)
        qyy = element_quadratic_forms(self.mesh, Uy, Uy)
        qxy = element_quadratic_forms(self.mesh, Ux, Uy)
        dcbar_ds = -(ix * qxx + iy * qyy + 2.0 * ixy * qxy) / width
        coef = self.omega_weights * h_deriv(t, self.smoothing)
        grad_s = coef @ dcbar_ds
        grad_s = grad_s * (1.0 - self.weakness(xi))
        grad = df.backprop_to_design(grad_s, rho, self.filt, self.simp,
                                     mesh=self.mesh)
        return value, grad

    def evaluate_records(self, rho, params, want_grads: bool = True):
        xis = np.atleast_2d(np.asarray(params, dtype=float))
        values, grads = [], []
        for xi in xis:
            v, g = self.xi_eval(rho, xi, want_grad=want_grads)
            values.append(v)
            grads.append(g)
        values = np.array(values)
        return values, (np.stack(grads) if want_grads else None)

    def angle_averaged_compliance(self, rho, xi, omega: float) -> float:
        """Single (xi, omega) angle-averaged compliance."""
        system = self._factorize(rho, xi)
        Fx, Fy = self.load_pair(omega)
        return angle_reduced_compliance(system, Fx, Fy, self.angle_range)

    # -- parameter space -------------------------------------------------

    def sample_param(self, rng: np.random.Generator) -> np.ndarray:
        # coordinate order: xi_1 then xi_2
        return np.array([rng.uniform(*self.xi_range[0]),
                         rng.uniform(*self.xi_range[1])])

    def metric(self) -> JointMetric:
        widths = [hi - lo for lo, hi in self.xi_range]
        return JointMetric(
            coords=(ParamCoord("flat", scale=widths[0]),
                    ParamCoord("flat", scale=widths[1])),
            design_scale=1.0, param_scale=1.0)

    def pseudo_quadrature(self, n_per_axis: int):
        """Midpoint tensor grid on Xi with equal weights."""
        n = int(n_per_axis)
        (x0, x1), (y0, y1) = self.xi_range
        gx = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
        gy = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        return pts, np.full(n * n, 1.0 / (n * n))

    def _trapezoid_grid(self, n1: int, n2: int):
        (x0, x1), (y0, y1) = self.xi_range
        gx = np.linspace(x0, x1, n1)
        gy = np.linspace(y0, y1, n2)
        wx = np.ones(n1)
        wx[0] = wx[-1] = 0.5
        wy = np.ones(n2)
        wy[0] = wy[-1] = 0.5
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        W = np.outer(wx, wy)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        return pts, (W / W.sum()).ravel()

    def baseline_nodes(self, spec):
        n1, n2 = spec
        return self._trapezoid_grid(int(n1), int(n2))

    def default_baseline_spec(self, batch_size: int):
        return (5, 5)

    def dense_raw(self, rho, spec=None):
        """Angle-averaged compliances on a xi trapezoid grid x omega nodes."""
        n1, n2 = spec if spec is not None else self.default_verify_spec
        pts, lam = self._trapezoid_grid(int(n1), int(n2))
        FxB, FyB = self.load_block()
        values = np.empty((pts.shape[0], self.n_omega))
        for i, xi in enumerate(pts):
            system = self._factorize(rho, xi)
            values[i], _, _ = self.angle_averaged_block(system, FxB, FyB)
        weights = (lam[:, None] * self.omega_weights[None, :]).ravel()
        return values.ravel(), weights

    def h1_values(self, rho, xi_points) -> np.ndarray:
        """Omega-averaged steepened h per xi (the damage sensitivity map)."""
        out = np.empty(len(xi_points))
        for i, xi in enumerate(np.atleast_2d(xi_points)):
            out[i], _ = self.xi_eval(rho, xi, want_grad=False)
        return out


def plate_problem(nx: int = 60, ny: int = 30, ell: float = 1.0,
                  n_omega: int = 32, r_min: float | None = None,
                  simp_s: float = 5.0, a1: float = 35.0, a2: float = 0.05,
                  a3: float = 5.0, p_level: float = 0.05,
                  c_max: float | None = None, poisson: float = 0.3,
                  weakening: bool = True,
                  initial_value: float = 0.65) -> PlateProblem:
    """Plate benchmark; load scaled so the initial compliance is 1."""
    mesh = build_rect_mesh(nx, ny, 2.0 * ell, ell, poisson=poisson)
    if r_min is None:
        r_min = 1.5 * (2.0 * ell / nx)
    filt = df.build_filter(mesh, r_min)
    simp = df.SimpParams(s=simp_s)
    smoothing = SmoothingParams(a1=a1, a2=a2, a3=a3, c_max=1.0,
                                p_level=p_level)
    problem = PlateProblem(mesh, filt, simp, smoothing, ell=ell,
                           n_omega=n_omega, weakening=weakening,
                           initial_value=initial_value)
    xi_mean = np.array([np.mean(problem.xi_range[0]),
                        np.mean(problem.xi_range[1])])
    omega_mean = float(np.mean(problem.omega_range))
    c0 = problem.angle_averaged_compliance(problem.initial_design(), xi_mean,
                                           omega_mean)
    problem.load_scale = 1.0 / np.sqrt(c0)
    problem.smoothing = SmoothingParams(
        a1=a1, a2=a2, a3=a3, c_max=1.5 if c_max is None else c_max,
        p_level=p_level)
    return problem
