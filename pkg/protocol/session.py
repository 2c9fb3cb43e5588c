"""Session state machine shared by both ends of a connection.

Both sides feed every message they send or receive through `step`; the
returned actions tell the receiving side what it owes the peer next. No
actions means the message is dropped.
"""

import re
from enum import Enum
from typing import List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from protocol.messages import Bye, Chosen, Hello, Monitor, NewPhase, Report, SetKnob, WireMessage
from utils.errors import ProtocolError


class Side(str, Enum):
    client = "client"
    server = "server"


class SessionPhase(str, Enum):
    await_hello = "AwaitHello"
    sampling = "Sampling"
    monitoring = "Monitoring"
    closed = "Closed"


class Action(str, Enum):
    pick_knob = "pick_knob"        # server: send the next SetKnob
    choose = "choose"              # server: select the best sample, send Chosen
    check_phase = "check_phase"    # server: run the phase detector on a Monitor
    apply_knob = "apply_knob"      # client: set knob, measure one interval, Report
    apply_chosen = "apply_chosen"  # client: set the chosen knob, start monitoring
    await_knob = "await_knob"      # client: new phase announced, SetKnob follows
    close = "close"                # peer said Bye
    reject = "reject"              # illegal message: answer Bye and tear down


class SessionState(BaseModel):
    model_config = ConfigDict(frozen=True)

    side: Side
    phase: SessionPhase = SessionPhase.await_hello
    round: int = 0
    awaiting_report: bool = False
    last_interval: int = -1
    # server only: Monitors sent before the client saw NewPhase may still arrive
    stale_monitors: bool = False
    # only the server knows N; the client leaves it unset
    n_rounds: Optional[int] = None
    reason: Optional[str] = None

    @property
    def closed(self) -> bool:
        return self.phase == SessionPhase.closed


def _illegal(state: SessionState, msg: WireMessage, why: str) -> Tuple[SessionState, List[Action]]:
    reason = f"unexpected {msg.kind} in {state.phase.value}: {why}"
    return state.model_copy(update={"phase": SessionPhase.closed, "reason": reason}), [Action.reject]


def step(state: SessionState, msg: WireMessage) -> Tuple[SessionState, List[Action]]:
    """Advance the session by one message, enforcing the transition table."""
    if state.closed:
        raise ProtocolError(f"session already closed ({state.reason})")

    if isinstance(msg, Bye):
        return state.model_copy(update={"phase": SessionPhase.closed, "reason": msg.reason}), [Action.close]

    phase = state.phase
    if phase == SessionPhase.await_hello:
        if isinstance(msg, Hello):
            return state.model_copy(update={"phase": SessionPhase.sampling, "round": 0}), [Action.pick_knob]
        return _illegal(state, msg, "expected hello")

    if phase == SessionPhase.sampling:
        if isinstance(msg, SetKnob):
            if state.awaiting_report and msg.round == state.round:
                # re-send of the outstanding knob after a timeout
                return state, [Action.apply_knob]
            if state.awaiting_report:
                return _illegal(state, msg, f"report for round {state.round} still outstanding")
            if msg.round != state.round + 1:
                return _illegal(state, msg, f"expected round {state.round + 1}, got {msg.round}")
            if state.n_rounds is not None and msg.round > state.n_rounds:
                return _illegal(state, msg, f"round {msg.round} beyond budget {state.n_rounds}")
            return state.model_copy(update={"round": msg.round, "awaiting_report": True}), [Action.apply_knob]
        if isinstance(msg, Report):
            if not state.awaiting_report or msg.round != state.round:
                return _illegal(state, msg, f"no knob outstanding for round {msg.round}")
            nxt = state.model_copy(update={"awaiting_report": False, "stale_monitors": False})
            if state.n_rounds is not None and msg.round >= state.n_rounds:
                return nxt, [Action.choose]
            return nxt, [Action.pick_knob]
        if isinstance(msg, Chosen):
            if state.round < 1:
                return _illegal(state, msg, "nothing sampled yet")
            return state.model_copy(
                update={"phase": SessionPhase.monitoring, "awaiting_report": False}
            ), [Action.apply_chosen]
        if isinstance(msg, Monitor) and state.stale_monitors and msg.interval > state.last_interval:
            return state.model_copy(update={"last_interval": msg.interval}), []
        return _illegal(state, msg, "sampling in progress")

    # monitoring
    if isinstance(msg, Monitor):
        if msg.interval <= state.last_interval:
            return _illegal(state, msg, f"interval {msg.interval} not after {state.last_interval}")
        return state.model_copy(update={"last_interval": msg.interval}), [Action.check_phase]
    if isinstance(msg, NewPhase):
        return state.model_copy(
            update={"phase": SessionPhase.sampling, "round": 0, "awaiting_report": False,
                    "stale_monitors": state.side == Side.server}
        ), [Action.await_knob]
    return _illegal(state, msg, "monitoring in progress")


_CODES = {"hello": "H", "set_knob": "S", "report": "R", "chosen": "C", "monitor": "M", "new_phase": "P", "bye": "B"}


def trace_signature(messages: Sequence[WireMessage]) -> str:
    """one letter per message kind, in order"""
    return "".join(_CODES[m.kind] for m in messages)


def trace_matches(messages: Sequence[WireMessage], n_rounds: int) -> bool:
    """Hello (SetKnob Report){N} Chosen (Monitor | NewPhase (SetKnob Report){N} Chosen)* Bye"""
    pattern = rf"H(SR){{{n_rounds}}}C(M|P(SR){{{n_rounds}}}C)*B"
    return re.fullmatch(pattern, trace_signature(messages)) is not None
