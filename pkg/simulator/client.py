"""The workload side of a session: applies knobs, measures intervals, reports back.

The client never decides anything. It follows SetKnob/Chosen/NewPhase from
the server and reports one measurement per simulated interval.
"""

import logging
from typing import List, Optional, Tuple, Union

from protocol.messages import Bye, Hello, Monitor, Report, SetKnob, WireMessage, decode
from protocol.session import Action, SessionPhase, SessionState, Side, step
from simulator.scenario import Scenario, interval_rng, measure
from utils.errors import ProtocolError
from utils.models import KnobSetting, OptimizationSpec

logger = logging.getLogger(__name__)


class SimulatedClient:
    def __init__(self, scenario: Scenario, session_seed: int = 0, spec: Optional[OptimizationSpec] = None):
        self.scenario = scenario
        self.space = scenario.space
        self.spec = spec or scenario.optimization_spec()
        self.session_seed = session_seed
        self.state = SessionState(side=Side.client)
        self.knob: KnobSetting = self.space.default_setting
        self.interval = 0
        # (interval, knob) for every measured interval
        self.timeline: List[Tuple[int, KnobSetting]] = []
        self.trace: List[WireMessage] = []

    @property
    def closed(self) -> bool:
        return self.state.closed

    @property
    def finished(self) -> bool:
        """workload has run all of its intervals"""
        return self.interval >= self.scenario.total_intervals

    @property
    def expecting_reply(self) -> bool:
        """a SetKnob or Chosen is owed by the server"""
        return self.state.phase == SessionPhase.sampling

    def start(self) -> List[WireMessage]:
        return [self._send(Hello(spec=self.spec, space=self.space))]

    def handle_line(self, line: Union[bytes, str]) -> List[WireMessage]:
        if self.closed:
            return []
        try:
            msg = decode(line, self.space)
        except ProtocolError as e:
            logger.warning("session %s: dropping connection on bad line: %s", self.session_seed, e)
            return [self._send(Bye(reason=str(e)))]
        return self.handle(msg)

    def handle(self, msg: WireMessage) -> List[WireMessage]:
        if self.closed:
            return []
        self.trace.append(msg)
        self.state, actions = step(self.state, msg)
        if Action.reject in actions:
            bye = Bye(reason=self.state.reason)
            self.trace.append(bye)
            return [bye]
        if Action.close in actions:
            logger.debug("session %s: server closed (%s)", self.session_seed, msg.reason)
            return []
        if Action.apply_knob in actions:
            self.knob = msg.knob
            if self.finished:
                return [self._send(Bye(reason="workload finished"))]
            o, c = self._measure()
            return [self._send(Report(o=o, c=c, round=msg.round))]
        if Action.apply_chosen in actions:
            self.knob = msg.knob
            return self.tick()
        return []

    def tick(self) -> List[WireMessage]:
        """Run one monitoring interval with the applied knob, or say Bye at workload end."""
        if self.closed or self.state.phase != SessionPhase.monitoring:
            return []
        if self.finished:
            return [self._send(Bye(reason="workload finished"))]
        interval = self.interval
        o, c = self._measure()
        return [self._send(Monitor(o=o, c=c, interval=interval))]

    def give_up(self, reason: str) -> List[WireMessage]:
        if self.closed:
            return []
        return [self._send(Bye(reason=reason))]

    def _measure(self) -> Tuple[float, List[float]]:
        phase = self.scenario.phase_at(self.interval)
        rng = interval_rng(self.scenario, self.session_seed, self.interval)
        o, c = measure(self.scenario, phase, self.knob, rng)
        self.timeline.append((self.interval, self.knob))
        self.interval += 1
        return o, c

    def _send(self, msg: WireMessage) -> WireMessage:
        self.state, _ = step(self.state, msg)
        self.trace.append(msg)
        return msg
