#    Copyright 2025 Genesis Corporation.
#
#    All Rights Reserved.
#
#    Licensed under the Apache License, Version 2.0 (the "License"); you may
#    not use this file except in compliance with the License. You may obtain
#    a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#    Unless required by applicable law or agreed to in writing, software
#    distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
#    WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
#    License for the specific language governing permissions and limitations
#    under the License.
import enum
import typing as tp
import dataclasses

import numpy as np

from marginlab.common import constants as c
from marginlab.common import exceptions
from marginlab.common import utils


class StructuralError(exceptions.MarginLabException):
    message = "Invalid network structure: %(reason)s"


class DimensionMismatch(exceptions.MarginLabException):
    message = "Dimension mismatch: expected %(expected)s, got %(actual)s"


class InvalidConfig(exceptions.MarginLabException):
    message = "Invalid configuration %(field)s=%(value)s: %(reason)s"


def to_simple(value: tp.Any) -> tp.Any:
    """Convert models, arrays and enums into JSON friendly values."""
    if isinstance(value, SimpleViewMixin):
        return value.dump_to_simple_view()
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, np.ndarray):
        return to_simple(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(to_simple(k)): to_simple(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_simple(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return repr(value)
    return value


def _frozen_array(value: tp.Any, dtype: tp.Any = float) -> np.ndarray:
    array = np.array(value, dtype=dtype)
    array.setflags(write=False)
    return array


class SimpleViewMixin:
    @classmethod
    def restore_from_simple_view(cls, **kwargs: tp.Any) -> tp.Any:
        future_fields = set(kwargs.keys()) - set(
            (f.name for f in dataclasses.fields(cls))  # type: ignore[arg-type]
        )

        # Ignore future fields
        for f in future_fields:
            kwargs.pop(f)

        return cls(**kwargs)

    def dump_to_simple_view(self) -> dict[str, tp.Any]:
        view = {}
        for f in dataclasses.fields(self):  # type: ignore[arg-type]
            view[f.name] = to_simple(getattr(self, f.name))
        return view


@dataclasses.dataclass(frozen=True, eq=False)
class ArchSpec(SimpleViewMixin):
    """Network of the homogeneous class: sparse and shared layer weights.

    `layers[l]` holds 0-based triples (i, j, k): entry (i, j) of the
    l-th weight matrix takes the value of the k-th free parameter of that
    layer. The JSON view uses 1-based triples.
    """

    depth: int
    dims: tuple[int, ...]
    layers: tuple[tuple[tuple[int, int, int], ...], ...]
    activation: c.Activation = c.Activation.RELU
    relu_zero_slope: float = c.DEFAULT_RELU_ZERO_SLOPE

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(
            self,
            "layers",
            tuple(
                tuple(tuple(int(v) for v in t) for t in layer)
                for layer in self.layers
            ),
        )
        object.__setattr__(self, "activation", c.Activation(self.activation))
        object.__setattr__(self, "relu_zero_slope", float(self.relu_zero_slope))
        self._validate()

    def _validate(self) -> None:
        if self.depth < 2:
            raise StructuralError(reason=f"depth {self.depth} < 2")
        if len(self.dims) != self.depth + 1:
            raise StructuralError(
                reason=f"{len(self.dims)} dims for depth {self.depth}"
            )
        if self.dims[-1] != 1:
            raise StructuralError(reason="output dimension must be 1")
        if any(d < 1 for d in self.dims):
            raise StructuralError(reason="layer dimensions must be positive")
        if len(self.layers) != self.depth:
            raise StructuralError(
                reason=f"{len(self.layers)} sharing sets for depth {self.depth}"
            )
        if not 0.0 <= self.relu_zero_slope <= 1.0:
            raise StructuralError(
                reason=f"relu_zero_slope {self.relu_zero_slope} not in [0, 1]"
            )

        for l, layer in enumerate(self.layers):
            rows, cols = self.dims[l + 1], self.dims[l]
            if not layer:
                raise StructuralError(reason=f"layer {l + 1} has no weights")
            seen = set()
            for i, j, k in layer:
                if not (0 <= i < rows and 0 <= j < cols and k >= 0):
                    raise StructuralError(
                        reason=f"triple {(i + 1, j + 1, k + 1)} out of range "
                        f"in layer {l + 1}"
                    )
                if (i, j) in seen:
                    raise StructuralError(
                        reason=f"entry {(i + 1, j + 1)} repeated in layer {l + 1}"
                    )
                seen.add((i, j))
            used = {k for _, _, k in layer}
            if used != set(range(len(used))):
                raise StructuralError(reason=f"dead parameter in layer {l + 1}")

    @property
    def param_counts(self) -> tuple[int, ...]:
        return tuple(max(k for _, _, k in layer) + 1 for layer in self.layers)

    @property
    def n_params(self) -> int:
        return sum(self.param_counts)

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def is_relu(self) -> bool:
        return self.activation == c.Activation.RELU

    def no_share(self, layer: int) -> bool:
        """`layer` is 0-based."""
        ks = [k for _, _, k in self.layers[layer]]
        return len(ks) == len(set(ks))

    def is_fully_connected(self, layer: int) -> bool:
        return self.no_share(layer) and len(self.layers[layer]) == (
            self.dims[layer + 1] * self.dims[layer]
        )

    def with_activation(self, activation: c.Activation) -> "ArchSpec":
        return dataclasses.replace(self, activation=activation)

    @classmethod
    def fully_connected(
        cls,
        dims: tp.Sequence[int],
        activation: c.Activation = c.Activation.RELU,
        relu_zero_slope: float = c.DEFAULT_RELU_ZERO_SLOPE,
    ) -> "ArchSpec":
        """Dense layers, parameters numbered row by row."""
        layers = []
        for l in range(len(dims) - 1):
            rows, cols = dims[l + 1], dims[l]
            layers.append(
                tuple(
                    (i, j, i * cols + j) for i in range(rows) for j in range(cols)
                )
            )
        return cls(
            depth=len(dims) - 1,
            dims=tuple(dims),
            layers=tuple(layers),
            activation=activation,
            relu_zero_slope=relu_zero_slope,
        )

    @classmethod
    def diagonal(
        cls,
        dim: int,
        depth: int,
        activation: c.Activation = c.Activation.LINEAR,
    ) -> "ArchSpec":
        """Diagonal layers followed by a summing output vector."""
        layers = [tuple((i, i, i) for i in range(dim)) for _ in range(depth - 1)]
        layers.append(tuple((0, j, j) for j in range(dim)))
        return cls(
            depth=depth,
            dims=tuple([dim] * depth + [1]),
            layers=tuple(layers),
            activation=activation,
        )

    @classmethod
    def patch_conv(
        cls,
        patch: int,
        n_patches: int,
        activation: c.Activation = c.Activation.RELU,
        hidden_diagonal_layers: int = 0,
    ) -> "ArchSpec":
        """One filter shared over disjoint patches, then an output layer.

        Optional diagonal layers may sit between the filter and the output.
        """
        conv = tuple(
            (p, p * patch + j, j) for p in range(n_patches) for j in range(patch)
        )
        layers = [conv]
        for _ in range(hidden_diagonal_layers):
            layers.append(tuple((i, i, i) for i in range(n_patches)))
        layers.append(tuple((0, j, j) for j in range(n_patches)))
        depth = len(layers)
        return cls(
            depth=depth,
            dims=tuple([patch * n_patches] + [n_patches] * (depth - 1) + [1]),
            layers=tuple(layers),
            activation=activation,
        )

    def dump_to_simple_view(self) -> dict[str, tp.Any]:
        return {
            "depth": self.depth,
            "dims": list(self.dims),
            "activation": self.activation.value,
            "relu_zero_slope": self.relu_zero_slope,
            "param_counts": list(self.param_counts),
            "layers": [
                [[i + 1, j + 1, k + 1] for i, j, k in layer]
                for layer in self.layers
            ],
        }

    @classmethod
    def restore_from_simple_view(cls, **kwargs: tp.Any) -> "ArchSpec":
        param_counts = kwargs.pop("param_counts", None)
        layers = tuple(
            tuple((i - 1, j - 1, k - 1) for i, j, k in layer)
            for layer in kwargs.pop("layers")
        )
        arch = super().restore_from_simple_view(layers=layers, **kwargs)
        if param_counts is not None and tuple(param_counts) != arch.param_counts:
            raise StructuralError(
                reason=f"param_counts {param_counts} != {list(arch.param_counts)}"
            )
        return arch


@dataclasses.dataclass(frozen=True, eq=False)
class ParamVec(SimpleViewMixin):
    """Parameters [u^(1), ..., u^(m)], immutable."""

    layers: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "layers",
            tuple(_frozen_array(u).reshape(-1) for u in self.layers),
        )

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate(self.layers)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(u.size for u in self.layers)

    @property
    def sq_norm(self) -> float:
        return float(sum(float(u @ u) for u in self.layers))

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.sq_norm))

    def layer_sq_norms(self) -> np.ndarray:
        return np.array([float(u @ u) for u in self.layers])

    def scaled(self, alpha: float) -> "ParamVec":
        return ParamVec(tuple(alpha * u for u in self.layers))

    def unit(self) -> "ParamVec":
        return self.scaled(1.0 / self.norm)

    def replace_layer(self, layer: int, value: tp.Any) -> "ParamVec":
        layers = list(self.layers)
        layers[layer] = np.asarray(value, dtype=float)
        return ParamVec(tuple(layers))

    def check(self, arch: ArchSpec) -> "ParamVec":
        if self.sizes != arch.param_counts:
            raise DimensionMismatch(
                expected=list(arch.param_counts), actual=list(self.sizes)
            )
        return self

    def distance(self, other: "ParamVec") -> float:
        return float(np.linalg.norm(self.flat - other.flat))

    @classmethod
    def from_flat(cls, arch: ArchSpec, flat: tp.Any) -> "ParamVec":
        flat = np.asarray(flat, dtype=float).reshape(-1)
        if flat.size != arch.n_params:
            raise DimensionMismatch(expected=arch.n_params, actual=flat.size)
        offsets = np.cumsum((0,) + arch.param_counts)
        return cls(
            tuple(flat[offsets[l] : offsets[l + 1]] for l in range(arch.depth))
        )

    @classmethod
    def of(cls, *layers: tp.Any) -> "ParamVec":
        return cls(tuple(np.asarray(u, dtype=float) for u in layers))

    @classmethod
    def zeros(cls, arch: ArchSpec) -> "ParamVec":
        return cls(tuple(np.zeros(p) for p in arch.param_counts))

    def dump_to_simple_view(self) -> dict[str, tp.Any]:
        return {"layers": [u.tolist() for u in self.layers]}

    @classmethod
    def restore_from_simple_view(cls, **kwargs: tp.Any) -> "ParamVec":
        return cls.of(*kwargs["layers"])


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset(SimpleViewMixin):
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        X = _frozen_array(self.X)
        if X.ndim == 1:
            X = _frozen_array(X.reshape(1, -1))
        y = _frozen_array(self.y).reshape(-1)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DimensionMismatch(expected="n x d inputs, n >= 1", actual=X.shape)
        if y.size != X.shape[0]:
            raise DimensionMismatch(expected=X.shape[0], actual=y.size)
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise InvalidConfig(field="y", value=y.tolist(), reason="not in {-1,+1}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def permuted(self, order: tp.Sequence[int]) -> "Dataset":
        order = list(order)
        return Dataset(self.X[order], self.y[order])

    @classmethod
    def from_pairs(cls, pairs: tp.Iterable[tuple[tp.Any, float]]) -> "Dataset":
        pairs = list(pairs)
        return cls(
            X=np.array([p[0] for p in pairs], dtype=float),
            y=np.array([p[1] for p in pairs], dtype=float),
        )

    def dump_to_simple_view(self) -> dict[str, tp.Any]:
        return {
            "examples": [
                {"x": x.tolist(), "y": int(y)} for x, y in zip(self.X, self.y)
            ]
        }

    @classmethod
    def restore_from_simple_view(cls, **kwargs: tp.Any) -> "Dataset":
        return cls.from_pairs((e["x"], e["y"]) for e in kwargs["examples"])


@dataclasses.dataclass(frozen=True, eq=False)
class ActivationPattern(SimpleViewMixin):
    """Pre-activation signs, one n x d_l array per hidden layer."""

    signs: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "signs", tuple(_frozen_array(s, dtype=int) for s in self.signs)
        )

    @property
    def has_zero(self) -> bool:
        return any(bool(np.any(s == 0)) for s in self.signs)

    def zero_entries(self, from_layer: int = 0) -> list[tuple[int, int, int]]:
        """(hidden layer, example, neuron), all 0-based."""
        entries = []
        for l, s in enumerate(self.signs):
            if l < from_layer:
                continue
            for i, j in zip(*np.nonzero(s == 0)):
                entries.append((l, int(i), int(j)))
        return entries

    def gates(self, layer: int) -> np.ndarray:
        return (self.signs[layer] >= 0).astype(int)

    def same_as(self, other: "ActivationPattern") -> bool:
        return len(self.signs) == len(other.signs) and all(
            np.array_equal(a, b) for a, b in zip(self.signs, other.signs)
        )

    def dump_to_simple_view(self) -> dict[str, tp.Any]:
        return {"signs": [s.tolist() for s in self.signs]}


@dataclasses.dataclass
class FlowConfig(SimpleViewMixin):
    loss_kind: c.LossKind = c.LossKind.EXPONENTIAL
    reparam: c.Reparam = c.Reparam.UNIT_SPEED
    rtol: float = c.FLOW_RTOL
    atol: float = c.FLOW_ATOL
    s_budget: float = c.FLOW_S_BUDGET
    loss_target: float = c.FLOW_LOSS_TARGET
    direction_tolerance: float = c.FLOW_DIRECTION_TOL
    direction_window: int = c.FLOW_DIRECTION_WINDOW
    checkpoint_stride: float = c.FLOW_CHECKPOINT_STRIDE
    initial_step: float = c.FLOW_INITIAL_STEP
    min_step: float = c.FLOW_MIN_STEP
    kink_min_step: float = c.FLOW_KINK_MIN_STEP
    max_steps: int = c.FLOW_MAX_STEPS
    locate_loss_target: bool = False

    def __post_init__(self) -> None:
        self.loss_kind = c.LossKind(self.loss_kind)
        self.reparam = c.Reparam(self.reparam)
        for name in (
            "rtol",
            "atol",
            "s_budget",
            "loss_target",
            "direction_tolerance",
            "checkpoint_stride",
            "initial_step",
            "min_step",
            "kink_min_step",
        ):
            value = float(getattr(self, name))
            if not (value > 0 and np.isfinite(value)):
                raise InvalidConfig(
                    field=name, value=value, reason="must be positive and finite"
                )
            setattr(self, name, value)
        if int(self.direction_window) < 1:
            raise InvalidConfig(
                field="direction_window",
                value=self.direction_window,
                reason="must be >= 1",
            )
        self.direction_window = int(self.direction_window)


@dataclasses.dataclass(frozen=True, eq=False)
class Checkpoint(SimpleViewMixin):
    s: float
    theta: np.ndarray
    loss: float
    norm: float
    direction: np.ndarray
    margins: np.ndarray
    layer_balance: np.ndarray
    neuron_balance: np.ndarray

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins))


@dataclasses.dataclass
class Trajectory(SimpleViewMixin):
    arch: ArchSpec
    config: FlowConfig
    checkpoints: list[Checkpoint] = dataclasses.field(default_factory=list)
    status: c.FlowStatus = c.FlowStatus.BUDGET_EXHAUSTED
    accepted_steps: int = 0
    rejected_steps: int = 0

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]

    def __len__(self) -> int:
        return len(self.checkpoints)

    def summary(self) -> dict[str, tp.Any]:
        final = self.final
        return {
            "status": self.status.value,
            "checkpoints": len(self.checkpoints),
            "accepted_steps": self.accepted_steps,
            "rejected_steps": self.rejected_steps,
            "final_s": final.s,
            "final_loss": final.loss,
            "final_norm": final.norm,
            "final_min_margin": final.min_margin,
        }

    def csv_header(self) -> list[str]:
        first = self.checkpoints[0]
        header = ["s", "loss", "norm", "min_margin"]
        header += [f"dir_{p}" for p in range(first.direction.size)]
        header += [f"layer_balance_{j}" for j in range(first.layer_balance.size)]
        header += [f"neuron_balance_{j}" for j in range(first.neuron_balance.size)]
        return header

    def csv_rows(self) -> tp.Iterator[list[float]]:
        first = self.checkpoints[0]
        for cp in self.checkpoints:
            row = [cp.s, cp.loss, cp.norm, cp.min_margin]
            row += [float(v) for v in cp.direction]
            row += [float(v) for v in np.abs(cp.layer_balance - first.layer_balance)]
            row += [
                float(v) for v in np.abs(cp.neuron_balance - first.neuron_balance)
            ]
            yield row

    def to_csv(self, path: str) -> None:
        utils.save_csv(self.csv_header(), self.csv_rows(), path)

    def dump_to_simple_view(self) -> dict[str, tp.Any]:
        return self.summary()


@dataclasses.dataclass
class BalanceReport(SimpleViewMixin):
    layer_drift: list[float]
    neuron_drift: list[float] | None = None
    limit_gap: list[float] | None = None

    @property
    def max_layer_drift(self) -> float:
        return max(self.layer_drift, default=0.0)

    @property
    def max_neuron_drift(self) -> float:
        return max(self.neuron_drift or [], default=0.0)

    @property
    def max_limit_gap(self) -> float:
        return max(self.limit_gap or [], default=0.0)


@dataclasses.dataclass
class KktTolerances(SimpleViewMixin):
    tau_act: float = c.KKT_TAU_ACT
    tau_feas: float = c.KKT_TAU_FEAS
    tau_stat: float = c.KKT_TAU_STAT
    tau_comp: float = c.KKT_TAU_COMP


@dataclasses.dataclass
class ProbeConfig(SimpleViewMixin):
    eps: float = c.PROBE_EPS
    budget: int = c.PROBE_BUDGET
    seed: int = c.DEFAULT_SEED
    tau_feas: float = c.KKT_TAU_FEAS
    tau_imp_rel: float = c.PROBE_TAU_IMP_REL
    near_feasible_slack: float = c.PROBE_NEAR_FEASIBLE_SLACK
    refine_passes: int = c.PROBE_REFINE_PASSES

    def __post_init__(self) -> None:
        if not self.eps >= 0:
            raise InvalidConfig(field="eps", value=self.eps, reason="must be >= 0")
        if self.budget < 0:
            raise InvalidConfig(
                field="budget", value=self.budget, reason="must be >= 0"
            )
        if not 0 < self.near_feasible_slack < 1:
            raise InvalidConfig(
                field="near_feasible_slack",
                value=self.near_feasible_slack,
                reason="not in (0, 1)",
            )


@dataclasses.dataclass
class KktCertificate(SimpleViewMixin):
    theta: ParamVec
    scale: float
    margins: np.ndarray
    active_set: list[int]
    multipliers: np.ndarray
    residual: float
    relative_residual: float
    complementarity: float
    nnls_residual: float
    kink_contact: bool
    verdict: c.KktVerdict
    tolerances: KktTolerances


@dataclasses.dataclass
class QpSolution(SimpleViewMixin):
    problem: str
    optimizer: np.ndarray
    objective: float
    active_set: list[int]
    multipliers: np.ndarray
    kkt_residual: float

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.optimizer))


@dataclasses.dataclass
class GroupSolution(SimpleViewMixin):
    groups: list[np.ndarray]
    objective: float
    multipliers: np.ndarray
    kkt_residual: float
    zero_groups: list[int]
    certified: bool
    iterations: int

    @property
    def group_norms(self) -> list[float]:
        return [float(np.linalg.norm(u)) for u in self.groups]


@dataclasses.dataclass
class WitnessReport(SimpleViewMixin):
    eps: float
    theta_prime: ParamVec | None
    distance: float
    margins: np.ndarray
    delta: float
    verdict: c.WitnessVerdict
    source: str = "explicit"
    iteration: int | None = None

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins)) if self.margins.size else float("nan")


@dataclasses.dataclass
class GapReport(SimpleViewMixin):
    theta_sq_norm: float
    reference: float
    ratio: float
    reference_kind: c.ReferenceKind
    verdict: c.GlobalVerdict
    label: str = ""


@dataclasses.dataclass
class LayerResult(SimpleViewMixin):
    layer: int
    verdict: c.LayerVerdict
    solution: QpSolution | None = None
    deviation: float | None = None
    reason: str = ""


@dataclasses.dataclass
class RunReport(SimpleViewMixin):
    scenario: str
    loss: c.LossKind
    trajectory: dict[str, tp.Any]
    direction_status: str
    probe_point: str = "flow"
    limit_deviation: float | None = None
    certificate: KktCertificate | None = None
    witnesses: list[WitnessReport] = dataclasses.field(default_factory=list)
    gap: GapReport | None = None
    per_layer: list[LayerResult] = dataclasses.field(default_factory=list)
    balance: BalanceReport | None = None
    verdicts: dict[str, tp.Any] = dataclasses.field(default_factory=dict)
    mismatches: list[str] = dataclasses.field(default_factory=list)
    passed: bool = False
    duration: float = 0.0

    def save(self, path: str) -> None:
        utils.save_json(self.dump_to_simple_view(), path)

    def reproducible_view(self) -> dict[str, tp.Any]:
        view = self.dump_to_simple_view()
        view.pop("duration", None)
        return view
