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

import abc
import logging
import signal
import typing as tp

LOG = logging.getLogger(__name__)


class AbstractService(abc.ABC):
    def __init__(self) -> None:
        super(AbstractService, self).__init__()
        self._setups: list[tp.Callable[[], None]] = []
        self._finishes: list[tp.Callable[[], None]] = []
        self._should_subscribe_signals = True
        self._previous_handlers: dict[int, tp.Any] = {}

    @property
    def should_subscribe_signals(self) -> bool:
        return self._should_subscribe_signals

    @should_subscribe_signals.setter
    def should_subscribe_signals(self, value: bool) -> None:
        LOG.debug("Set should_subscribe_signals=%r", value)
        self._should_subscribe_signals = value

    def start(self) -> None:
        """Run the loop until it drains or `stop` is called."""
        try:
            self._setup()
            if self.should_subscribe_signals:
                self._subscribe_signals(self._get_sig_handlers())
            LOG.debug("Start loop")
            self._loop()
            LOG.debug("Loop finished.")
        finally:
            self._finish()

    @abc.abstractmethod
    def _loop(self) -> None:
        """Implement your loop logic here"""
        raise NotImplementedError()

    @abc.abstractmethod
    def stop(self) -> None:
        """Implement stop logic here"""
        raise NotImplementedError()

    def add_setup(self, setup_func: tp.Callable[[], None]) -> None:
        self._setups.append(setup_func)

    def _setup(self) -> None:
        for setup_func in self._setups:
            setup_func()

    def add_finishes(self, finish_func: tp.Callable[[], None]) -> None:
        self._finishes.append(finish_func)

    def _finish(self) -> None:
        for finish_func in self._finishes:
            finish_func()
        for sig, handler in self._previous_handlers.items():
            signal.signal(sig, handler)
        self._previous_handlers.clear()

    def _get_sig_handlers(self) -> dict[int, tp.Callable[[int, tp.Any], None]]:
        def stop_callback(s: int, frame: tp.Any) -> None:
            LOG.warning("Got signal %d, stopping after the current job", s)
            self.stop()

        base_handlers = {
            signal.SIGINT: stop_callback,
            signal.SIGTERM: stop_callback,
        }

        return base_handlers

    def _subscribe_signals(
        self, handlers: dict[int, tp.Callable[[int, tp.Any], None]]
    ) -> None:
        for sig, handl in handlers.items():
            self._previous_handlers[sig] = signal.signal(sig, handl)
