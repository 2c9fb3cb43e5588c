"""Wire messages exchanged between the workload (client) and the sampler (server).

One JSON object per line. Field names are part of the wire contract:
kind, spec, space, knob, round, o, c, o_ref, c_ref, interval, reason.
"""

import json
from typing import Dict, List, Literal, Optional, Type, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from tuning.knobspace import KnobSpace
from utils.errors import ProtocolError
from utils.models import KnobSetting, OptimizationSpec


class _Message(BaseModel):
    # metric values on the wire are always finite
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)


class Hello(_Message):
    """Connection setup: the optimization problem and the knob space."""
    kind: Literal["hello"] = "hello"
    spec: OptimizationSpec
    space: KnobSpace


class SetKnob(_Message):
    kind: Literal["set_knob"] = "set_knob"
    knob: KnobSetting
    round: int = Field(ge=1)


class Report(_Message):
    """Metrics of the knob set for `round`, measured over one interval."""
    kind: Literal["report"] = "report"
    o: float
    c: List[float] = Field(default_factory=list)
    round: int = Field(ge=1)


class Chosen(_Message):
    kind: Literal["chosen"] = "chosen"
    knob: KnobSetting
    o_ref: float
    c_ref: List[float] = Field(default_factory=list)


class Monitor(_Message):
    """Run-time metrics of the chosen knob for one monitoring interval."""
    kind: Literal["monitor"] = "monitor"
    o: float
    c: List[float] = Field(default_factory=list)
    interval: int = Field(ge=0)


class NewPhase(_Message):
    kind: Literal["new_phase"] = "new_phase"


class Bye(_Message):
    kind: Literal["bye"] = "bye"
    reason: str = ""


WireMessage = Union[Hello, SetKnob, Report, Chosen, Monitor, NewPhase, Bye]

MESSAGE_TYPES: Dict[str, Type[_Message]] = {
    cls.model_fields["kind"].default: cls
    for cls in (Hello, SetKnob, Report, Chosen, Monitor, NewPhase, Bye)
}


def encode(msg: WireMessage) -> bytes:
    """One compact JSON object terminated by a newline."""
    return (json.dumps(msg.model_dump(mode="json"), separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: Union[bytes, str], space: Optional[KnobSpace] = None) -> WireMessage:
    """Parse one line; anything malformed raises ProtocolError (never anything else).

    With `space` given, knobs in SetKnob/Chosen are range-checked too.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("line is not valid utf-8") from None
    text = line.strip()
    if not text:
        raise ProtocolError("empty line")
    try:
        data = json.loads(text)
    except (ValueError, RecursionError) as e:
        raise ProtocolError(f"malformed line: {e}") from None
    if not isinstance(data, dict):
        raise ProtocolError("message must be a JSON object")

    kind = data.get("kind")
    if kind is None:
        raise ProtocolError("missing field 'kind'", field="kind")
    if not isinstance(kind, str) or kind not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown kind {kind!r}", field="kind")

    try:
        msg = MESSAGE_TYPES[kind].model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(p) for p in err["loc"]) or kind
        if err["type"] == "missing":
            raise ProtocolError(f"{kind}: missing field '{loc}'", field=loc) from None
        raise ProtocolError(f"{kind}: invalid field '{loc}': {err['msg']}", field=loc) from None

    if space is not None and isinstance(msg, (SetKnob, Chosen)) and not space.contains(msg.knob):
        raise ProtocolError(f"{kind}: knob {msg.knob} out of range for space {space.counts}", field="knob")
    return msg
