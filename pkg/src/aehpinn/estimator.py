"""scikit-learn style facade over the training loop."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .autodiff import forward_value
from .exceptions import ConfigurationError
from .losses import CollocationBatch
from .network import NetworkConfig, OptimizerConfig
from .problems import DEFAULT_COUNTS, SampleSet, build_problem, sample_training_set, test_grid
from .strategies import StrategySpec, train


class PINNSolver(RegressorMixin, BaseEstimator):
    """Train a Tanh MLP to solve one of the built-in PDE problems.

    The PDE itself is the training signal, so ``fit`` needs no targets.
    Passing ``X`` replaces the residual collocation points; initial and
    boundary points are always sampled from the problem.

    Parameters
    ----------
    problem : str, default='heat_steep'
    problem_params : dict or None
        Overrides of the problem coefficients, e.g. ``{'epsilon': 1e-2}``.
    strategy : {'aeh', 'vanilla', 'hard_only', 'easy_only', 'aapinn_lite'}
    s1, s2, period : int
        Hard steps and easy steps per epoch, and the ratio reset period.
    hidden_layers, width : int
    lr, ascent_lr : float
        Adam step size and adaptive-weight ascent step size.
    max_epochs : int
    n_residual, n_initial, n_boundary : int or None
        Sample counts; ``None`` uses the problem defaults.
    precision : {'double', 'single'}
    random_state : int
        Seeds initialization and sampling.

    Attributes
    ----------
    params_ : ParameterVector
    state_ : TrainerState
    history_ : list of MetricsRecord
    problem_ : ProblemSpec
    n_features_in_ : int
    rel_l2_ : float or None
        Error on the problem's test grid after training, when an exact
        solution is available.
    """

    def __init__(self, problem="heat_steep", problem_params=None, strategy="aeh", s1=10, s2=1,
                 period=300, hidden_layers=4, width=50, lr=1e-3, ascent_lr=1e-3,
                 max_epochs=1000, n_residual=None, n_initial=None, n_boundary=None,
                 precision="double", random_state=0):
        self.problem = problem
        self.problem_params = problem_params
        self.strategy = strategy
        self.s1 = s1
        self.s2 = s2
        self.period = period
        self.hidden_layers = hidden_layers
        self.width = width
        self.lr = lr
        self.ascent_lr = ascent_lr
        self.max_epochs = max_epochs
        self.n_residual = n_residual
        self.n_initial = n_initial
        self.n_boundary = n_boundary
        self.precision = precision
        self.random_state = random_state

    def _sample_set(self, problem, X):
        defaults = DEFAULT_COUNTS[problem.name]
        counts = tuple(d if v is None else v for v, d in
                       zip((self.n_residual, self.n_initial, self.n_boundary), defaults))
        seed = self.random_state
        if X is None:
            return sample_training_set(problem, counts, seed)
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        if X.shape[1] != problem.input_dim:
            raise ConfigurationError(
                f"X has {X.shape[1]} columns, {problem.name} needs {problem.input_dim}")
        rest = sample_training_set(problem, (0, counts[1], counts[2]), seed)
        return SampleSet(X, rest.initial, rest.boundary, rest.boundary_tags, seed)

    def fit(self, X=None, y=None):
        """Train on the problem; ``X`` optionally overrides the residual points."""
        if y is not None:
            raise ConfigurationError("PINNSolver learns from the PDE; y must be None")
        problem = build_problem(self.problem, self.problem_params)
        net = NetworkConfig(problem.input_dim, self.hidden_layers, self.width,
                            precision=self.precision)
        opt = OptimizerConfig(lr=self.lr, ascent_lr=self.ascent_lr)
        spec = StrategySpec(self.strategy, s1=self.s1, s2=self.s2, period=self.period)
        if self.max_epochs < 0:
            raise ConfigurationError(f"max_epochs must be >= 0, got {self.max_epochs}")
        batch = CollocationBatch(problem, self._sample_set(problem, X))
        grid = test_grid(problem) if problem.exact_solution_available else None
        self.state_, self.history_ = train(batch, net, opt, spec, self.max_epochs,
                                           seed=self.random_state, eval_every=self.max_epochs or 1,
                                           grid=grid, log_phases=False)
        self.params_ = self.state_.params
        self.problem_ = problem
        self.n_features_in_ = problem.input_dim
        self.rel_l2_ = self.history_[-1].rel_l2
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but PINNSolver was fitted with {self.n_features_in_}")
        return np.asarray(forward_value(self.params_, X), dtype=np.float64)
