from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple, TypedDict

from factoredot.core.exception import ConfigError


InitPolicy = Literal["kmeans_source", "kmeans_target", "kmeans_pooled", "given"]
"""How the hubs are placed before the first UpdatePlans."""

Method = Literal["fot", "ot", "sinkhorn", "kot"]
"""Estimation methods available to `estimate` and `sweep`."""

AdaptMethod = Literal["fot", "ot", "sinkhorn", "kot", "nn_only"]

GenKind = Literal["hypercube", "disk_annulus", "gaussian_mixture"]

SweepVariable = Literal["n", "d", "k"]

Strategy = Literal["sync", "async"]

SWEEP_SCHEMA_VERSION = 1


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True, slots=True)
class SinkhornConfig:
    """
    Entropic regularization settings, shared by the plain Sinkhorn solver
    and by UpdatePlans.
    """

    epsilon: float = 0.1
    "Entropic regularization strength."

    max_iter: int = 10_000
    "Iteration cap. Reaching it raises ConvergenceError."

    tol: float = 1e-6
    "Stopping tolerance on the L1 violation of the marginals."

    absorb_threshold: float = 50.0
    "Absorb scalings into the log-domain offsets once max |log u| or |log v| exceeds this."

    eps_scaling: bool = False
    "Anneal epsilon geometrically from the largest cost entry down to `epsilon`."

    eps_scaling_factor: float = 0.5

    def __post_init__(self):
        _require(self.epsilon > 0, f"epsilon must be > 0, got {self.epsilon}")
        _require(self.tol > 0, f"tol must be > 0, got {self.tol}")
        _require(self.max_iter >= 1, f"max_iter must be >= 1, got {self.max_iter}")
        _require(
            self.absorb_threshold > 1,
            f"absorb_threshold must be > 1, got {self.absorb_threshold}",
        )
        _require(
            0 < self.eps_scaling_factor < 1,
            f"eps_scaling_factor must lie in (0, 1), got {self.eps_scaling_factor}",
        )


@dataclass(frozen=True, slots=True)
class FotConfig:
    """Settings for one FactoredOT run."""

    k: int = 4
    "Transport-rank budget: number of hubs in the barycenter."

    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)

    outer_tol: float = 1e-6
    "Relative change of the transport part below which the outer loop stops."

    outer_max_iter: int = 200

    init: InitPolicy = "kmeans_source"

    seed: int = 0

    init_points: Optional[Tuple[Tuple[float, ...], ...]] = None
    "Hub locations, used only when init == 'given'."

    def __post_init__(self):
        _require(self.k >= 1, f"k must be >= 1, got {self.k}")
        _require(self.outer_tol > 0, f"outer_tol must be > 0, got {self.outer_tol}")
        _require(
            self.outer_max_iter >= 1,
            f"outer_max_iter must be >= 1, got {self.outer_max_iter}",
        )
        _require(
            self.init in ("kmeans_source", "kmeans_target", "kmeans_pooled", "given"),
            f"Unknown init policy '{self.init}'",
        )
        if self.init == "given":
            _require(
                self.init_points is not None and len(self.init_points) == self.k,
                "init='given' needs exactly k init_points",
            )
            object.__setattr__(
                self, "init_points", tuple(tuple(p) for p in self.init_points)
            )


@dataclass(frozen=True, slots=True)
class GenSpec:
    """
    Which synthetic pair (or labeled sample) to draw.

    The mixture fields are only read for kind == 'gaussian_mixture'.
    """

    kind: GenKind
    d: int
    n: int
    seed: int = 0

    means: Optional[Tuple[Tuple[float, ...], ...]] = None
    "Component means; defaults to a regular polygon in the first two coordinates with side `separation`."

    sigma: float = 1.0
    "Shared isotropic standard deviation."

    mixture_weights: Optional[Tuple[float, ...]] = None
    labels: Optional[Tuple[str, ...]] = None
    n_components: int = 3
    separation: float = 5.0
    shift: Optional[Tuple[float, ...]] = None
    "Translation applied to the target sample of a mixture pair."

    def __post_init__(self):
        _require(
            self.kind in ("hypercube", "disk_annulus", "gaussian_mixture"),
            f"Unknown generator '{self.kind}'",
        )
        _require(self.n >= 1, f"n must be >= 1, got {self.n}")
        _require(self.d >= 1, f"d must be >= 1, got {self.d}")
        if self.kind in ("hypercube", "disk_annulus"):
            _require(self.d >= 2, f"{self.kind} needs d >= 2, got {self.d}")
        _require(self.sigma >= 0, f"sigma must be >= 0, got {self.sigma}")
        if self.means is not None:
            means = tuple(tuple(float(x) for x in m) for m in self.means)
            _require(len(means) >= 1, "need at least one mixture component")
            _require(
                all(len(m) == self.d for m in means),
                f"every mixture mean needs {self.d} coordinates",
            )
            object.__setattr__(self, "means", means)
        else:
            _require(self.n_components >= 1, "need at least one mixture component")
        n_comp = self.component_count
        if self.mixture_weights is not None:
            _require(
                len(self.mixture_weights) == n_comp,
                "mixture_weights must have one entry per component",
            )
            _require(
                all(w >= 0 for w in self.mixture_weights)
                and sum(self.mixture_weights) > 0,
                "mixture_weights must be nonnegative with positive sum",
            )
        if self.labels is not None:
            _require(
                len(self.labels) == n_comp, "labels must have one entry per component"
            )
            object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        if self.shift is not None:
            _require(len(self.shift) == self.d, f"shift needs {self.d} coordinates")
            object.__setattr__(self, "shift", tuple(float(x) for x in self.shift))

    @property
    def component_count(self) -> int:
        return len(self.means) if self.means is not None else self.n_components


@dataclass(frozen=True, slots=True)
class ExperimentSpec:
    """
    A full-factorial sweep: every value x every method x every replicate.
    """

    generator: GenSpec
    sweep: SweepVariable
    values: Tuple[int, ...]
    methods: Tuple[Method, ...] = ("fot",)
    replicates: int = 20
    base: FotConfig = field(default_factory=FotConfig)

    n_per_d: Optional[int] = None
    "When sweeping d, draw n = n_per_d * d points (the n = 10d protocol)."

    protocol: str = "default"
    "Free-form tag written into the output metadata."

    def __post_init__(self):
        _require(self.replicates >= 1, f"replicates must be >= 1, got {self.replicates}")
        _require(len(self.values) >= 1, "sweep value list must be nonempty")
        _require(self.sweep in ("n", "d", "k"), f"Unknown sweep variable '{self.sweep}'")
        _require(len(self.methods) >= 1, "at least one method is required")
        for m in self.methods:
            _require(m in ("fot", "ot", "sinkhorn", "kot"), f"Unknown method '{m}'")
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        object.__setattr__(self, "methods", tuple(self.methods))


@dataclass(frozen=True, slots=True)
class RunTweaks:
    """
    Holds run settings not significant enough to warrant a full flag.
    """

    max_workers: int = 1
    "Sweep worker pool size. 1 runs cells inline."

    dashboard: bool = False
    "Whether to draw the live one-line sweep dashboard."

    exact_cap: int = 5_000_000
    "Largest n0 * n1 the exact solver accepts."

    plugin_fallback_epsilon: float = 1e-3
    "Epsilon used for the plug-in baseline once the exact solver is over its cap."

    record_runtime: bool = True
    "Write wall-clock runtimes into sweep rows. Off makes repeated sweeps byte-identical."

    def __post_init__(self):
        _require(self.max_workers >= 1, f"max_workers must be >= 1, got {self.max_workers}")
        _require(self.exact_cap >= 1, "exact_cap must be >= 1")
        _require(self.plugin_fallback_epsilon > 0, "plugin_fallback_epsilon must be > 0")


class EstimateRecord(TypedDict):
    """One estimation result, serialized as JSON by `factoredot estimate`."""

    method: str
    k: Optional[int]
    epsilon: Optional[float]
    seed: int
    w_hat: Optional[float]
    plug_in_cost: Optional[float]
    runtime_ms: float
    n0: int
    n1: int
    d: int

    kot_cost: Optional[float]
    plug_in_approx: bool
    transport_rank: Optional[int]
    outer_iterations: Optional[int]
    regularized_objective: Optional[float]
    partition_objective: Optional[float]


class SweepRow(TypedDict):
    value: int
    method: str
    replicate: int
    seed: int
    estimate: Optional[float]
    ground_truth: Optional[float]
    abs_error: Optional[float]
    runtime_ms: Optional[float]
    status: str
    approx: bool


class SweepCell(TypedDict):
    """Identifies one unit of sweep work, like a call identifier for a job queue."""

    value: int
    method: str
    replicate: int
    seed: int
