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
import logging
import typing as tp

import numpy as np

from marginlab.common import constants as c
from marginlab.common import exceptions
from marginlab.dm import models
from marginlab.flowsim import balance
from marginlab.netcore import losses
from marginlab.netcore import network

LOG = logging.getLogger(__name__)


class DivergedNumerically(exceptions.MarginLabException):
    message = "Flow diverged numerically at s=%(s)s"

    @property
    def trajectory(self) -> models.Trajectory:
        return self.kwargs["trajectory"]


class StalledAtCriticalPoint(exceptions.MarginLabException):
    message = "Flow stalled at a critical point at s=%(s)s"

    @property
    def trajectory(self) -> models.Trajectory:
        return self.kwargs["trajectory"]


class NotConverged(exceptions.MarginLabException):
    message = (
        "Direction did not stabilize: deviation %(deviation)s over the last "
        "%(window)s checkpoints (tolerance %(tolerance)s)"
    )


class EmptyTrajectory(exceptions.MarginLabException):
    message = "Trajectory has no checkpoints"


class _Stall(Exception):
    pass


class _NonFinite(Exception):
    pass


class FlowIntegrator:
    """RK4 with step doubling on the (reparameterized) gradient flow.

    Unit speed follows dtheta/ds = -grad L / ||grad L||, raw mode follows
    dtheta/dt = -grad L. Checkpoints sit on multiples of
    `checkpoint_stride` and no step runs past the next one.
    """

    def __init__(
        self,
        arch: models.ArchSpec,
        dataset: models.Dataset,
        config: models.FlowConfig,
    ):
        if dataset.dim != arch.input_dim:
            raise models.DimensionMismatch(
                expected=arch.input_dim, actual=dataset.dim
            )
        self._arch = arch
        self._dataset = dataset
        self._config = config

    def _params(self, flat: np.ndarray) -> models.ParamVec:
        return models.ParamVec.from_flat(self._arch, flat)

    def _field(self, flat: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(flat)):
            raise _NonFinite()
        params = self._params(flat)

        if self._config.reparam == c.Reparam.RAW:
            _, gradient = network.loss_and_grad(
                self._arch, params, self._dataset, self._config.loss_kind
            )
            velocity = -gradient.flat
            speed = float(np.linalg.norm(velocity))
        else:
            descent = network.descent_direction(
                self._arch, params, self._dataset, self._config.loss_kind
            )
            speed = float(np.linalg.norm(descent.vector))
            velocity = descent.vector / speed if speed > 0 else descent.vector

        if not np.isfinite(speed):
            raise _NonFinite()
        if speed < c.GRADIENT_UNDERFLOW:
            raise _Stall()
        return velocity

    def _rk4(self, y: np.ndarray, h: float) -> np.ndarray:
        k1 = self._field(y)
        k2 = self._field(y + 0.5 * h * k1)
        k3 = self._field(y + 0.5 * h * k2)
        k4 = self._field(y + h * k3)
        return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def _loss(self, flat: np.ndarray) -> float:
        q = network.margins(self._arch, self._params(flat), self._dataset)
        return float(np.sum(losses.loss_values(q, self._config.loss_kind)))

    def _checkpoint(self, s: float, flat: np.ndarray) -> models.Checkpoint:
        params = self._params(flat)
        q = network.margins(self._arch, params, self._dataset)
        norm = float(np.linalg.norm(flat))
        direction = flat / norm if norm > 0 else np.zeros_like(flat)
        return models.Checkpoint(
            s=float(s),
            theta=flat.copy(),
            loss=float(np.sum(losses.loss_values(q, self._config.loss_kind))),
            norm=norm,
            direction=direction,
            margins=q,
            layer_balance=balance.layer_balance(params),
            neuron_balance=balance.neuron_balance(self._arch, params),
        )

    def _kink_crossed(self, before: np.ndarray, after: np.ndarray) -> bool:
        if not self._arch.is_relu:
            return False
        signs_before = network.strict_signs(
            self._arch, self._params(before), self._dataset.X
        )
        signs_after = network.strict_signs(
            self._arch, self._params(after), self._dataset.X
        )
        return any(
            not np.array_equal(a, b) for a, b in zip(signs_before, signs_after)
        )

    def _loss_reached(self, checkpoint: models.Checkpoint) -> bool:
        # Compared in log space, the exp loss reads 0.0 long before the end
        log_loss = losses.log_total_loss(checkpoint.margins, self._config.loss_kind)
        return log_loss <= np.log(self._config.loss_target)

    def _direction_settled(self, traj: models.Trajectory) -> bool:
        """Window stable and the projected remaining drift below tolerance.

        The direction approaches its limit like s^-L for a degree-L network,
        so the drift still ahead of the last checkpoint is about
        deviation * s / (L * span).
        """
        window = self._config.direction_window
        tolerance = self._config.direction_tolerance
        if len(traj) < window:
            return False
        recent = traj.checkpoints[-window:]
        deviation = max_pairwise_deviation([cp.direction for cp in recent])
        if deviation > tolerance:
            return False
        span = recent[-1].s - recent[0].s
        if span <= 0:
            return deviation == 0.0
        degree = network.homogeneity_degree(self._arch)
        return deviation * recent[-1].s / (degree * span) <= tolerance

    def _locate_target(self, y: np.ndarray, h: float) -> tuple[float, np.ndarray]:
        """Shorten the step so the loss lands on `loss_target`."""
        target = self._config.loss_target
        lo, hi = 0.0, h
        y_hi = self._rk4(y, hi)
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            y_mid = self._rk4(y, mid)
            if self._loss(y_mid) <= target:
                hi, y_hi = mid, y_mid
            else:
                lo = mid
            if hi - lo <= 1e-15 * max(1.0, hi):
                break
        return hi, y_hi

    def run(self, params0: models.ParamVec) -> models.Trajectory:
        cfg = self._config
        y = params0.check(self._arch).flat.astype(float)
        traj = models.Trajectory(arch=self._arch, config=cfg)
        s = 0.0
        h = cfg.initial_step
        next_checkpoint = cfg.checkpoint_stride
        traj.checkpoints.append(self._checkpoint(s, y))

        LOG.debug(
            "Integrating %s flow from loss %.6g", cfg.reparam.value, traj.final.loss
        )

        try:
            with np.errstate(over="ignore", invalid="ignore", under="ignore"):
                while True:
                    final = traj.final
                    if cfg.locate_loss_target and final.loss <= cfg.loss_target:
                        traj.status = c.FlowStatus.LOSS_TARGET
                        break
                    if not cfg.locate_loss_target and (
                        self._loss_reached(final) and self._direction_settled(traj)
                    ):
                        traj.status = c.FlowStatus.CONVERGED
                        break
                    if s >= cfg.s_budget:
                        traj.status = c.FlowStatus.BUDGET_EXHAUSTED
                        break
                    if traj.accepted_steps >= cfg.max_steps:
                        LOG.warning("Step limit %d reached at s=%g", cfg.max_steps, s)
                        traj.status = c.FlowStatus.BUDGET_EXHAUSTED
                        break

                    remaining = min(next_checkpoint, cfg.s_budget) - s
                    step = min(h, remaining)

                    y_full = self._rk4(y, step)
                    y_half = self._rk4(self._rk4(y, 0.5 * step), 0.5 * step)
                    finite = np.all(np.isfinite(y_full)) and np.all(
                        np.isfinite(y_half)
                    )
                    if not finite:
                        raise _NonFinite()

                    error = float(np.linalg.norm(y_half - y_full)) / 15.0
                    scale = cfg.atol + cfg.rtol * max(
                        float(np.linalg.norm(y)), float(np.linalg.norm(y_half))
                    )
                    if error > scale and step > cfg.min_step:
                        h = max(0.5 * step, cfg.min_step)
                        traj.rejected_steps += 1
                        continue
                    if self._kink_crossed(y, y_half):
                        if step > cfg.kink_min_step:
                            h = max(0.5 * step, cfg.kink_min_step)
                            traj.rejected_steps += 1
                            continue
                        LOG.warning(
                            "Crossing an activation kink at s=%g with step %g",
                            s,
                            step,
                        )

                    if (
                        cfg.locate_loss_target
                        and self._loss(y_half) <= cfg.loss_target
                    ):
                        step, y_half = self._locate_target(y, step)
                        s += step
                        y = y_half
                        traj.accepted_steps += 1
                        traj.checkpoints.append(self._checkpoint(s, y))
                        continue

                    y = y_half
                    traj.accepted_steps += 1
                    if step == remaining:
                        s = min(next_checkpoint, cfg.s_budget)
                        next_checkpoint += cfg.checkpoint_stride
                        traj.checkpoints.append(self._checkpoint(s, y))
                    else:
                        s += step
                    if error <= scale / 32.0:
                        h = 2.0 * h
        except _Stall:
            LOG.warning("Gradient vanished at s=%g", s)
            raise StalledAtCriticalPoint(s=s, trajectory=traj)
        except _NonFinite:
            LOG.warning("Non-finite state after s=%g", s)
            raise DivergedNumerically(s=s, trajectory=traj)

        LOG.debug(
            "Flow finished: status=%s s=%g loss=%.6g norm=%.6g steps=%d/%d",
            traj.status.value,
            s,
            traj.final.loss,
            traj.final.norm,
            traj.accepted_steps,
            traj.rejected_steps,
        )
        return traj


def max_pairwise_deviation(directions: tp.Sequence[np.ndarray]) -> float:
    stacked = np.vstack(directions)
    diffs = stacked[:, None, :] - stacked[None, :, :]
    return float(np.max(np.linalg.norm(diffs, axis=2)))


def integrate(
    arch: models.ArchSpec,
    params0: models.ParamVec,
    dataset: models.Dataset,
    config: models.FlowConfig | None = None,
) -> models.Trajectory:
    return FlowIntegrator(arch, dataset, config or models.FlowConfig()).run(params0)


def direction_limit(
    traj: models.Trajectory,
    window: int | None = None,
    tolerance: float | None = None,
) -> models.ParamVec:
    """Final unit direction, once it has stopped moving."""
    if not traj.checkpoints:
        raise EmptyTrajectory()

    window = window or traj.config.direction_window
    tolerance = tolerance or traj.config.direction_tolerance
    final = traj.final
    if final.s == 0.0 or final.norm == 0.0 or len(traj) < window:
        raise NotConverged(deviation=float("inf"), window=window, tolerance=tolerance)

    deviation = max_pairwise_deviation(
        [cp.direction for cp in traj.checkpoints[-window:]]
    )
    if deviation > tolerance:
        raise NotConverged(deviation=deviation, window=window, tolerance=tolerance)

    return models.ParamVec.from_flat(traj.arch, final.direction)
