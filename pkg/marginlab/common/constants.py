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

GLOBAL_SERVICE_NAME = "marginlab"

ENV_SEED = "MARGINLAB_SEED"
DEFAULT_SEED = 0

# Float precision used in CSV exports
CSV_FLOAT_FORMAT = ".17g"

# netcore
DEFAULT_RELU_ZERO_SLOPE = 0.0
ZERO_PREACTIVATION_TOL = 1e-8

# flowsim
FLOW_RTOL = 1e-8
FLOW_ATOL = 1e-12
FLOW_S_BUDGET = 1e4
FLOW_LOSS_TARGET = 1e-10
FLOW_DIRECTION_TOL = 1e-6
FLOW_DIRECTION_WINDOW = 10
FLOW_CHECKPOINT_STRIDE = 1.0
FLOW_INITIAL_STEP = 1e-2
FLOW_MIN_STEP = 1e-12
FLOW_KINK_MIN_STEP = 1e-9
FLOW_MAX_STEPS = 10**6
GRADIENT_UNDERFLOW = 1e-300

# kktcert
KKT_TAU_ACT = 1e-4
KKT_TAU_FEAS = 1e-8
KKT_TAU_STAT = 1e-3
KKT_TAU_COMP = 1e-6
# Polishing a numerical flow limit onto the nearest KKT point
KKT_REFINE_BAND = 1e-2
KKT_REFINE_MAX_MOVE = 1e-2
KKT_REFINE_TOL = 1e-10
KKT_REFINE_MAX_NFEV = 500

# convexref
QP_KKT_TOL = 1e-10
GROUP_KKT_TOL = 1e-6
GROUP_ZERO_REL = 1e-9
GROUP_SUBGRADIENT_ITERS = 200
GROUP_REWEIGHT_ITERS = 2000
LP_MAX_BASES = 200000
PER_LAYER_MATCH_TOL = 1e-3

# optprobe
PROBE_EPS = 0.05
PROBE_BUDGET = 2000
PROBE_TAU_IMP_REL = 1e-9
PROBE_NEAR_FEASIBLE_SLACK = 1e-2
PROBE_REFINE_PASSES = 20
WITNESS_EPS = 0.1
GAP_TOL = 1e-2

# scenarios
SCENARIO_LIMIT_TOL = 1e-2
NONZERO_NEURON_REL = 1e-6


class Activation(str, enum.Enum):
    LINEAR = "linear"
    RELU = "relu"


class LossKind(str, enum.Enum):
    EXPONENTIAL = "exp"
    LOGISTIC = "log"


class Reparam(str, enum.Enum):
    UNIT_SPEED = "unit_speed"
    RAW = "raw"


class FlowStatus(str, enum.Enum):
    CONVERGED = "CONVERGED"
    LOSS_TARGET = "LOSS_TARGET"
    BUDGET_EXHAUSTED = "BUDGET_EXHAUSTED"


class KktVerdict(str, enum.Enum):
    KKT = "KKT"
    NOT_KKT = "NOT_KKT"
    INFEASIBLE = "INFEASIBLE"


class WitnessVerdict(str, enum.Enum):
    NOT_LOCAL = "NOT_LOCAL"
    NO_WITNESS_FOUND = "NO_WITNESS_FOUND"
    INVALID_WITNESS = "INVALID_WITNESS"


class LocalExpectation(str, enum.Enum):
    NOT_LOCAL = "NOT_LOCAL"
    LOCAL_EXPECTED = "LOCAL_EXPECTED"


class GlobalVerdict(str, enum.Enum):
    GLOBAL = "GLOBAL"
    NOT_GLOBAL = "NOT_GLOBAL"
    UNDETERMINED = "UNDETERMINED"


class GlobalExpectation(str, enum.Enum):
    NOT_GLOBAL = "NOT_GLOBAL"
    GLOBAL_EXPECTED = "GLOBAL_EXPECTED"


class LayerVerdict(str, enum.Enum):
    GLOBAL = "GLOBAL"
    LOCAL = "LOCAL"
    NOT_LOCAL = "NOT_LOCAL"
    UNDETERMINED = "UNDETERMINED"


class ReferenceKind(str, enum.Enum):
    LOWER_BOUND = "LOWER_BOUND"
    CANDIDATE = "CANDIDATE"


class ReferenceProblem(str, enum.Enum):
    LINEAR_DEEP = "linear_deep"
    L1 = "l1"
    GROUP = "group"


class ExitCode(enum.IntEnum):
    OK = 0
    LOAD_FAILURE = 2
    NOT_CONVERGED = 3
    VERDICT_MISMATCH = 4
