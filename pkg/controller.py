"""Server-side control loop: sampling phases, the chosen knob, monitoring, re-sampling.

A Controller is purely reactive. It consumes one wire message at a time and
returns the replies it owes, so the same object runs behind a TCP
connection or inside the in-process `control_loop` pump.
"""

import logging
from typing import List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field

from protocol.messages import Bye, Chosen, Hello, Monitor, NewPhase, Report, SetKnob, WireMessage, decode
from protocol.session import Action, SessionPhase, SessionState, Side, step
from protocol.transport import queue_pair
from tuning.knobspace import KnobSpace
from tuning.phase_detector import DEFAULT_CONSECUTIVE, DEFAULT_DELTA, PhaseDecision, PhaseDetector
from tuning.sampler import Sampler, SamplingSchedule, Selection, Strategy
from utils.errors import ExhaustedError, KnobtuneError, ProtocolError, SessionError
from utils.models import ControllerEvent, EventKind, Measurement, OptimizationSpec

logger = logging.getLogger(__name__)

# a pump iteration with nothing to deliver on either side twice in a row means a stuck session
MAX_IDLE_SPINS = 2


class ControllerSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_rounds: int = Field(default=12, ge=2)
    init_rounds: Optional[int] = Field(default=None, ge=1)
    strategy: Strategy = Strategy.hybrid
    delta: float = Field(default=DEFAULT_DELTA, gt=0, lt=1)
    consecutive: int = Field(default=DEFAULT_CONSECUTIVE, ge=1)
    seed: int = 0

    def schedule(self) -> SamplingSchedule:
        return SamplingSchedule.for_budget(self.n_rounds, self.strategy, self.init_rounds)


class Controller:
    """One session's controller: owns the sampler and the phase detector."""

    def __init__(
        self,
        settings: Optional[ControllerSettings] = None,
        session_id: str = "",
        warm_start: Optional[Sequence[Measurement]] = None,
    ):
        self.settings = settings or ControllerSettings()
        self.schedule = self.settings.schedule()
        self.session_id = session_id
        self.warm_start: List[Measurement] = list(warm_start or [])
        self.state = SessionState(side=Side.server, n_rounds=self.settings.n_rounds)
        self.spec: Optional[OptimizationSpec] = None
        self.space: Optional[KnobSpace] = None
        self.sampler: Optional[Sampler] = None
        self.detector: Optional[PhaseDetector] = None
        self.selection: Optional[Selection] = None
        self.phase_index = -1
        self.interval = -1  # last measured interval
        self.timeouts = 0
        self.events: List[ControllerEvent] = []
        self.trace: List[WireMessage] = []
        self.phase_histories: List[List[Measurement]] = []
        self._phase_open = False

    @property
    def closed(self) -> bool:
        return self.state.closed

    # ------------------------------------------------------------ inbound

    def handle_line(self, line: Union[bytes, str]) -> List[WireMessage]:
        if self.closed:
            return []
        try:
            msg = decode(line, self.space)
        except ProtocolError as e:
            logger.warning("session %s: %s", self.session_id, e)
            self.state = self.state.model_copy(update={"phase": SessionPhase.closed, "reason": str(e)})
            return self._closed_with_bye(str(e))
        return self.handle(msg)

    def handle(self, msg: WireMessage) -> List[WireMessage]:
        if self.closed:
            return []
        self.state, actions = step(self.state, msg)
        if not actions:
            logger.debug("session %s: dropped stale %s", self.session_id, msg.kind)
            return []
        self.trace.append(msg)
        if Action.reject in actions:
            logger.warning("session %s: %s", self.session_id, self.state.reason)
            return self._closed_with_bye(self.state.reason)

        try:
            return self._dispatch(msg, actions)
        except (KnobtuneError, ValueError) as e:
            # ends this session only
            reason = f"{type(e).__name__}: {e}"
            logger.error("session %s: closing after %s", self.session_id, reason)
            self.state = self.state.model_copy(update={"phase": SessionPhase.closed, "reason": reason})
            return self._closed_with_bye(reason)

    def _dispatch(self, msg: WireMessage, actions: List[Action]) -> List[WireMessage]:
        if isinstance(msg, Hello):
            self.spec, self.space = msg.spec, msg.space
            logger.info("session %s: hello, %d settings, %d constraints",
                        self.session_id, msg.space.size, len(msg.spec.constraints))
            return self._start_phase()
        if isinstance(msg, Report):
            self.timeouts = 0
            self._record(msg)
            if Action.choose in actions:
                return self._choose()
            return self._request_sample()
        if isinstance(msg, Monitor):
            return self._monitor(msg)
        if isinstance(msg, Bye):
            self._finish(msg.reason or "client closed")
        return []

    def on_timeout(self) -> List[WireMessage]:
        """Called when the peer owes a message and none arrived in time."""
        if self.closed:
            return []
        if self._phase_open and self.sampler.pending is not None:
            self.timeouts += 1
            if self.timeouts == 1:
                logger.warning("session %s: no report for round %d, re-sending knob",
                               self.session_id, self.sampler.round + 1)
                return [self._send(SetKnob(knob=self.sampler.pending, round=self.sampler.round + 1))]
            self.timeouts = 0
            if self.sampler.history:
                logger.error("session %s: second timeout, aborting phase with best so far", self.session_id)
                return self._choose(truncated=True)
        return self._close("peer timed out")

    def abort(self, reason: str) -> None:
        """Tear down after a transport failure, keeping the partial event log."""
        if self.closed:
            return
        self.state = self.state.model_copy(update={"phase": SessionPhase.closed, "reason": reason})
        self._finish(reason)

    # ------------------------------------------------------------ phases

    def _start_phase(self) -> List[WireMessage]:
        self.phase_index += 1
        warm = self.warm_start if self.phase_index == 0 else None
        self.sampler = Sampler(self.schedule, self.space, self.spec,
                               seed=[self.settings.seed, self.phase_index], warm_start=warm)
        self.phase_histories.append(self.sampler.history)
        self.selection = None
        self.detector = None
        self._phase_open = True
        self._emit(EventKind.phase_started, self.interval + 1)
        logger.info("session %s: phase %d sampling starts at interval %d",
                    self.session_id, self.phase_index, self.interval + 1)
        return self._request_sample()

    def _request_sample(self) -> List[WireMessage]:
        try:
            knob = self.sampler.next_sample()
        except ExhaustedError:
            # every setting measured before the budget ran out
            logger.info("session %s: knob space exhausted after %d rounds", self.session_id, self.sampler.round)
            return self._choose(truncated=True)
        r = self.sampler.round + 1
        self._emit(EventKind.sample_requested, self.interval + 1, knob=knob, stage=self.sampler.stages[-1].value)
        return [self._send(SetKnob(knob=knob, round=r))]

    def _record(self, report: Report) -> Measurement:
        m = self.sampler.record(self.sampler.pending, report.o, report.c)
        self.interval += 1
        self._emit(EventKind.sample_measured, self.interval, knob=m.knob, measurement=m)
        logger.debug("session %s: round %d %s -> o=%.4g c=%s", self.session_id, m.round, m.knob, m.o, m.c)
        return m

    def _select(self, truncated: bool) -> Selection:
        sel = self.sampler.select_best()
        self.selection = sel
        self._phase_open = False
        self._emit(EventKind.knob_chosen, self.interval, knob=sel.knob, o_ref=sel.o_ref,
                   c_ref=sel.c_ref, infeasible=sel.infeasible, truncated=truncated)
        if sel.infeasible:
            logger.warning("session %s: no feasible sample in phase %d, least violating %s",
                           self.session_id, self.phase_index, sel.knob)
        else:
            logger.info("session %s: phase %d chose %s (o_ref=%.4g)",
                        self.session_id, self.phase_index, sel.knob, sel.o_ref)
        return sel

    def _choose(self, truncated: bool = False) -> List[WireMessage]:
        sel = self._select(truncated)
        self.detector = PhaseDetector(sel.o_ref, sel.c_ref, self.settings.delta, self.settings.consecutive)
        return [self._send(Chosen(knob=sel.knob, o_ref=sel.o_ref, c_ref=sel.c_ref))]

    def _monitor(self, msg: Monitor) -> List[WireMessage]:
        if len(msg.c) != len(self.spec.constraints):
            return self._close(f"monitor carries {len(msg.c)} constraint values, expected {len(self.spec.constraints)}")
        self.interval = msg.interval
        m = Measurement(knob=self.selection.knob, o=msg.o, c=msg.c)
        self._emit(EventKind.monitor_tick, msg.interval, knob=self.selection.knob, measurement=m)
        if self.detector.monitor_step(msg.o, msg.c) == PhaseDecision.stay:
            return []
        self._emit(EventKind.new_phase_detected, msg.interval, knob=self.selection.knob)
        logger.info("session %s: new phase detected at interval %d", self.session_id, msg.interval)
        return [self._send(NewPhase())] + self._start_phase()

    def _finish(self, reason: str) -> None:
        if self._phase_open and self.sampler.history:
            # workload ended mid-sampling: best so far stands
            self._select(truncated=True)
        self._phase_open = False
        self._emit(EventKind.finished, max(self.interval, 0), reason=reason)
        logger.info("session %s: finished (%s)", self.session_id, reason)

    def _close(self, reason: str) -> List[WireMessage]:
        bye = self._send(Bye(reason=reason))
        self._finish(reason)
        return [bye]

    def _closed_with_bye(self, reason: str) -> List[WireMessage]:
        # state is already Closed, so the Bye bypasses step()
        bye = Bye(reason=reason)
        self.trace.append(bye)
        self._finish(reason)
        return [bye]

    # ------------------------------------------------------------ plumbing

    def _send(self, msg: WireMessage) -> WireMessage:
        self.state, _ = step(self.state, msg)
        self.trace.append(msg)
        return msg

    def _emit(self, kind: EventKind, interval: int, **payload) -> None:
        self.events.append(ControllerEvent(
            kind=kind, interval_index=interval, session=self.session_id, phase=max(self.phase_index, 0), **payload
        ))


def control_loop(controller: Controller, client) -> List[ControllerEvent]:
    """Run one session end to end over the in-process queue pair.

    Single-threaded and deterministic: the server side drains its inbox
    first, then the client side; a client with nothing to read measures its
    next monitoring interval.
    """
    server_end, client_end = queue_pair()
    client_end.send_all(client.start())
    idle = 0
    try:
        while not controller.closed:
            lines = server_end.drain()
            for line in lines:
                server_end.send_all(controller.handle_line(line))
                if controller.closed:
                    break
            if controller.closed:
                break
            incoming = client_end.drain()
            if incoming:
                out = [m for line in incoming for m in client.handle_line(line)]
            else:
                out = client.tick()
            client_end.send_all(out)
            if lines or incoming or out:
                idle = 0
            else:
                idle += 1
                if idle >= MAX_IDLE_SPINS:
                    raise SessionError("session stalled: no side has anything to send")
    except SessionError as e:
        logger.error("session %s: %s", controller.session_id, e)
        controller.abort(str(e))
    # let the client see the server's last word (usually a Bye)
    for line in client_end.drain():
        client.handle_line(line)
    return controller.events
