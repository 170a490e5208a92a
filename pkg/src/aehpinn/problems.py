"""The six benchmark PDEs: operators, exact solutions, sources, and sampling.

Points are arrays of shape ``(N, D)`` with spatial coordinates first and
time last (for time-dependent problems).  Every operator is vectorized
over the leading axis; single points of shape ``(D,)`` also work.
"""

import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .autodiff import JetValue
from .exceptions import ConfigurationError, MissingReferenceError, UnsupportedProblemError

PI = np.pi

# name -> (spatial_dim, has_time, domain, default params, exact solution available)
_REGISTRY = {
    "heat_steep": (1, True, ((-1.0, 1.0), (0.0, 1.0)), {"alpha": 0.11}, True),
    "helmholtz": (2, False, ((0.0, 1.0), (0.0, 1.0)), {"k": 4 * PI}, True),
    "convection_dominated": (1, False, ((0.0, 1.0),), {"epsilon": 1e-6}, True),
    "allen_cahn": (1, True, ((-1.0, 1.0), (0.0, 1.0)), {"d": 0.001}, False),
    "sine_gordon": (2, False, ((-4.0, 4.0), (-4.0, 4.0)), {}, True),
    "multiscale_4d": (4, False, ((0.0, 1.0),) * 4, {}, True),
}

PROBLEMS = tuple(_REGISTRY)

# (N_R, N_I, N_B) per problem; time-dependent rows split the table's
# boundary budget evenly over the initial slice and the two spatial faces
DEFAULT_COUNTS = {
    "heat_steep": (54756, 1200, 2400),
    "helmholtz": (54756, 0, 3600),
    "convection_dominated": (2501, 0, 2),
    "allen_cahn": (12800, 1200, 2400),
    "sine_gordon": (12800, 0, 4800),
    "multiscale_4d": (12800, 0, 2400),
}

REFERENCE_HEADER = "# allen_cahn reference"


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    spatial_dim: int
    has_time: bool
    domain: tuple
    params: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))
    exact_solution_available: bool = True

    @property
    def input_dim(self):
        return self.spatial_dim + int(self.has_time)

    @property
    def n_faces(self):
        return 2 * self.spatial_dim

    def __getitem__(self, key):
        return self.params[key]


def build_problem(name, overrides=None):
    """Problem spec with default parameters, optionally overridden.

    >>> build_problem("helmholtz", {"k": math.pi})["k"] == math.pi
    True
    """
    if name not in _REGISTRY:
        raise ConfigurationError(f"unknown problem {name!r}; expected one of {PROBLEMS}")
    sdim, has_time, domain, defaults, exact = _REGISTRY[name]
    params = dict(defaults)
    for key, value in (overrides or {}).items():
        if key not in defaults:
            raise ConfigurationError(
                f"problem {name!r} has no parameter {key!r} (valid: {sorted(defaults)})")
        value = float(value)
        if not value > 0 or not math.isfinite(value):
            raise ConfigurationError(f"{name}.{key} must be positive and finite, got {value}")
        params[key] = value
    return ProblemSpec(name, sdim, has_time, domain, MappingProxyType(params), exact)


def _cols(problem, x):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != problem.input_dim:
        raise ConfigurationError(
            f"{problem.name} expects points of dimension {problem.input_dim}, got {X.shape[1]}")
    return X, single


def _out(v, single):
    return v[0] if single else v


def exact_solution(problem, x):
    X, single = _cols(problem, x)
    name, p = problem.name, problem.params
    if name == "heat_steep":
        xs, t = X[:, 0], X[:, 1]
        u = (1 - xs**2) * np.exp(1.0 / ((2 * t - 1) ** 2 + p["alpha"]))
    elif name == "helmholtz":
        k = p["k"]
        u = np.sin(k * X[:, 0]) * np.sin(k * X[:, 1])
    elif name == "convection_dominated":
        xs = X[:, 0]
        u = np.cos(PI * xs / 2) * -np.expm1(-2 * xs / p["epsilon"])
    elif name == "sine_gordon":
        x1, x2 = X[:, 0], X[:, 1]
        u = np.sin(x1 * x2) * (1 - np.cos(x1**2 + x2**2))
    elif name == "multiscale_4d":
        u = (np.sin(4 * PI * X[:, 0]) + np.sin(6 * PI * X[:, 1])
             + np.sin(8 * PI * X[:, 2]) + 0.1 * np.sin(50 * PI * X[:, 3]))
    else:
        raise UnsupportedProblemError(
            f"{name} has no closed-form solution; supply a reference file instead")
    return _out(u, single)


def source_term(problem, x):
    """Forcing obtained by substituting the exact solution into the operator."""
    X, single = _cols(problem, x)
    name, p = problem.name, problem.params
    if name == "heat_steep":
        xs, t = X[:, 0], X[:, 1]
        q = (2 * t - 1) ** 2 + p["alpha"]
        e = np.exp(1.0 / q)
        u_t = (1 - xs**2) * e * (-4 * (2 * t - 1) / q**2)
        u_xx = -2 * e
        f = u_t - u_xx
    elif name == "helmholtz":
        k = p["k"]
        f = k**2 * np.sin(k * X[:, 0]) * np.sin(k * X[:, 1])
    elif name == "convection_dominated":
        xs, eps = X[:, 0], p["epsilon"]
        c, c1, c2 = np.cos(PI * xs / 2), -PI / 2 * np.sin(PI * xs / 2), -(PI / 2) ** 2 * np.cos(PI * xs / 2)
        E = np.exp(-2 * xs / eps)
        one_m = -np.expm1(-2 * xs / eps)
        u_x = c1 * one_m + c * (2 / eps) * E
        # -eps*u_xx expanded so the 1/eps^2 factor cancels analytically
        m_eps_uxx = -eps * c2 * one_m - 4 * c1 * E + (4 / eps) * c * E
        f = m_eps_uxx + (xs - 2) * u_x
    elif name == "sine_gordon":
        x1, x2 = X[:, 0], X[:, 1]
        S, C = np.sin(x1 * x2), np.cos(x1 * x2)
        q = x1**2 + x2**2
        A = 1 - np.cos(q)
        lap = 0.0
        for a, b in ((x1, x2), (x2, x1)):
            A_a = 2 * a * np.sin(q)
            A_aa = 2 * np.sin(q) + 4 * a**2 * np.cos(q)
            lap = lap + (-S * b**2 * A + 2 * C * b * A_a + S * A_aa)
        f = lap + np.sin(S * A)
    elif name == "multiscale_4d":
        f = (-16 * PI**2 * np.sin(4 * PI * X[:, 0]) - 36 * PI**2 * np.sin(6 * PI * X[:, 1])
             - 64 * PI**2 * np.sin(8 * PI * X[:, 2]) - 250 * PI**2 * np.sin(50 * PI * X[:, 3]))
    elif name == "allen_cahn":
        f = np.zeros(len(X))
    else:  # pragma: no cover
        raise UnsupportedProblemError(name)
    return _out(f, single)


def pde_residual_with_partials(problem, jet, x, source=None):
    """Residual ``N[u]`` at each point and its derivatives w.r.t. the jet entries.

    Returns ``(r, JetValue(dr/du, dr/dgrad, dr/dhess))``.  ``source`` may
    carry precomputed forcing values for the same points.
    """
    X, _ = _cols(problem, x)
    u = np.atleast_1d(jet.value)
    g = np.atleast_2d(jet.input_grad)
    h = np.atleast_2d(jet.input_diag_hess)
    f = source_term(problem, X) if source is None else source
    name, p = problem.name, problem.params
    du, dg, dh = np.zeros_like(u), np.zeros_like(g), np.zeros_like(h)
    if name == "heat_steep":
        r = g[:, 1] - h[:, 0] - f
        dg[:, 1] = 1.0
        dh[:, 0] = -1.0
    elif name == "helmholtz":
        k2 = p["k"] ** 2
        r = -h[:, 0] - h[:, 1] - k2 * u - f
        dh[:] = -1.0
        du[:] = -k2
    elif name == "convection_dominated":
        eps = p["epsilon"]
        xs = X[:, 0]
        r = -eps * h[:, 0] + (xs - 2) * g[:, 0] - f
        dh[:, 0] = -eps
        dg[:, 0] = xs - 2
    elif name == "allen_cahn":
        d = p["d"]
        r = g[:, 1] - d * h[:, 0] - 5 * (u - u**3)
        dg[:, 1] = 1.0
        dh[:, 0] = -d
        du[:] = -5 * (1 - 3 * u**2)
    elif name == "sine_gordon":
        r = h[:, 0] + h[:, 1] + np.sin(u) - f
        dh[:] = 1.0
        du[:] = np.cos(u)
    elif name == "multiscale_4d":
        r = h.sum(axis=1) - f
        dh[:] = 1.0
    else:  # pragma: no cover
        raise UnsupportedProblemError(name)
    return r, JetValue(du, dg, dh)


def pde_residual(problem, jet, x, source=None):
    X, single = _cols(problem, x)
    if single:
        jet = JetValue(np.atleast_1d(jet.value), np.atleast_2d(jet.input_grad),
                       np.atleast_2d(jet.input_diag_hess))
    r, _ = pde_residual_with_partials(problem, jet, X, source)
    return _out(r, single)


def face_tag(axis, side):
    """Integer tag of the boundary face ``axis`` at side 0 (low) or 1 (high)."""
    return 2 * axis + side


def boundary_data(problem, x, tags):
    """Dirichlet datum at boundary points carrying face tags."""
    X, single = _cols(problem, x)
    if tags is None:
        raise ConfigurationError("boundary points need boundary tags")
    tags = np.atleast_1d(np.asarray(tags))
    if tags.shape != (len(X),):
        raise ConfigurationError("one boundary tag per point is required")
    if np.any((tags < 0) | (tags >= problem.n_faces)):
        raise ConfigurationError(f"boundary tag out of range for {problem.name}")
    name = problem.name
    if name in ("heat_steep", "helmholtz", "convection_dominated"):
        g = np.zeros(len(X))
    elif name == "allen_cahn":
        g = -np.ones(len(X))
    elif name == "sine_gordon":
        g = np.empty(len(X))
        for tag in range(4):
            m = tags == tag
            axis, side = divmod(tag, 2)
            other = X[m, 1 - axis]
            sign = 1.0 if side else -1.0
            g[m] = sign * np.sin(4 * other) * (1 - np.cos(16 + other**2))
    elif name == "multiscale_4d":
        g = exact_solution(problem, X)
    else:  # pragma: no cover
        raise UnsupportedProblemError(name)
    return _out(g, single)


def boundary_residual(problem, u_value, x, tags):
    return np.asarray(u_value) - boundary_data(problem, x, tags)


def initial_data(problem, x):
    X, single = _cols(problem, x)
    if not problem.has_time:
        raise UnsupportedProblemError(f"{problem.name} is time-independent")
    xs = X[:, 0]
    if problem.name == "heat_steep":
        h = (1 - xs**2) * np.exp(1.0 / (1 + problem["alpha"]))
    else:
        h = xs**2 * np.cos(PI * xs)
    return _out(h, single)


def initial_residual(problem, u_value, x):
    return np.asarray(u_value) - initial_data(problem, x)


@dataclass(frozen=True)
class SamplePoint:
    coords: np.ndarray
    group: str
    boundary_tag: int = None


@dataclass(frozen=True)
class SampleSet:
    """Collocation points per group.  ``boundary_tags`` has one face tag per boundary point."""

    residual: np.ndarray
    initial: np.ndarray
    boundary: np.ndarray
    boundary_tags: np.ndarray
    seed: int = None

    @property
    def counts(self):
        return len(self.residual), len(self.initial), len(self.boundary)

    def all_points(self):
        return np.concatenate([self.residual, self.initial, self.boundary])

    def points(self):
        for c in self.residual:
            yield SamplePoint(c, "residual")
        for c in self.initial:
            yield SamplePoint(c, "initial")
        for c, tag in zip(self.boundary, self.boundary_tags):
            yield SamplePoint(c, "boundary", int(tag))

    def equal(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("residual", "initial", "boundary", "boundary_tags"))


def _int_root(n, k):
    """Integer ``m`` with ``m**k == n``, or None."""
    if n <= 0:
        return None
    m = round(n ** (1.0 / k))
    for c in (m - 1, m, m + 1):
        if c > 0 and c**k == n:
            return c
    return None


def _axis_points(lo, hi, m, closed_hi):
    """``m`` uniformly spaced points in (lo, hi), or in (lo, hi] when ``closed_hi``."""
    i = np.arange(1, m + 1)
    if closed_hi:
        return lo + (hi - lo) * i / m
    return lo + (hi - lo) * i / (m + 1)


def _fill_box(box, n, rng):
    """``n`` points in an axis-aligned box given as ``[(lo, hi, closed_hi), ...]``.

    Uniform grid when ``n`` is a perfect power of the box dimension,
    otherwise seeded uniform random points.
    """
    k = len(box)
    if k == 0:
        return np.zeros((n, 0))
    m = _int_root(n, k)
    if m is not None:
        axes = [_axis_points(lo, hi, m, c) for lo, hi, c in box]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in mesh], axis=1)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    # mirror [0, 1) draws so the open lower end is excluded
    return lo + (hi - lo) * (1.0 - rng.random((n, k)))


def _split(n, parts):
    base, rem = divmod(n, parts)
    return [base + (i < rem) for i in range(parts)]


def sample_training_set(problem, counts=None, seed=0):
    """Residual, initial and boundary collocation points.

    Residual points form a uniform interior grid when ``N_R`` is a perfect
    power of the input dimension, otherwise they are drawn uniformly at
    random.  Boundary points are split evenly over the faces (remainder to
    the first faces in tag order) and placed the same way within each face.
    """
    n_r, n_i, n_b = DEFAULT_COUNTS[problem.name] if counts is None else counts
    if n_r < 0 or n_i < 0 or n_b < 0 or n_r + n_i + n_b == 0:
        raise ConfigurationError(f"invalid sample counts {(n_r, n_i, n_b)}")
    if n_i and not problem.has_time:
        raise ConfigurationError(f"{problem.name} has no initial slice; N_I must be 0")
    rng = np.random.default_rng(seed)
    sdim = problem.spatial_dim
    space = [(lo, hi, False) for lo, hi in problem.domain[:sdim]]
    time = [(problem.domain[-1][0], problem.domain[-1][1], True)] if problem.has_time else []

    residual = _fill_box(space + time, n_r, rng)
    if problem.has_time:
        xs = _fill_box(space, n_i, rng)
        initial = np.column_stack([xs, np.full(n_i, problem.domain[-1][0])])
    else:
        initial = np.zeros((0, problem.input_dim))

    faces, tags = [], []
    for tag, n_face in enumerate(_split(n_b, problem.n_faces)):
        axis, side = divmod(tag, 2)
        box = [b for i, b in enumerate(space) if i != axis] + time
        pts = _fill_box(box, n_face, rng)
        value = problem.domain[axis][side]
        faces.append(np.insert(pts, axis, value, axis=1))
        tags.append(np.full(n_face, tag))
    boundary = np.concatenate(faces) if faces else np.zeros((0, problem.input_dim))
    boundary_tags = np.concatenate(tags) if tags else np.zeros(0, dtype=int)
    return SampleSet(residual, initial, boundary, boundary_tags.astype(int), seed)


@dataclass(frozen=True)
class TestGrid:
    points: np.ndarray
    values: np.ndarray

    __test__ = False  # keep pytest from collecting this class

    def __len__(self):
        return len(self.points)


def _grid(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1)


def test_grid(problem, reference=None, seed=2024):
    """Evaluation points with exact (or reference) values."""
    name, dom = problem.name, problem.domain
    if name == "allen_cahn":
        if reference is None:
            raise MissingReferenceError("allen_cahn evaluation needs a reference solution file")
        pts, vals = read_reference(reference)
        return TestGrid(pts, vals)
    if name == "heat_steep":
        pts = _grid([np.linspace(*dom[0], 201), np.linspace(*dom[1], 201)])
    elif name == "helmholtz":
        pts = _grid([np.linspace(*dom[0], 201), np.linspace(*dom[1], 101)])
    elif name == "convection_dominated":
        pts = np.linspace(*dom[0], 1001)[:, None]
    elif name == "sine_gordon":
        pts = _grid([np.linspace(*dom[0], 100), np.linspace(*dom[1], 100)])
    else:
        pts = np.random.default_rng(seed).random((10000, 4))
    return TestGrid(pts, exact_solution(problem, pts))


test_grid.__test__ = False


def write_reference(path, points, values):
    """Write an Allen-Cahn reference table (``x t u`` rows)."""
    data = np.column_stack([np.asarray(points, float), np.asarray(values, float)])
    np.savetxt(path, data, fmt="%.17e", header=REFERENCE_HEADER[2:], comments="# ")


def read_reference(path):
    try:
        with open(path) as fh:
            first = fh.readline().strip()
    except FileNotFoundError as exc:
        raise MissingReferenceError(f"reference file not found: {path}") from exc
    if first != REFERENCE_HEADER:
        raise ConfigurationError(f"{path}: expected header {REFERENCE_HEADER!r}, got {first!r}")
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 3:
        raise ConfigurationError(f"{path}: expected 3 columns (x t u), got {data.shape[1]}")
    return data[:, :2], data[:, 2]
