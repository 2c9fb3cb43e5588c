from enum import Enum
from typing import List, Sequence

DEFAULT_DELTA = 0.10
DEFAULT_CONSECUTIVE = 2


class PhaseDecision(str, Enum):
    stay = "Stay"
    new_phase = "NewPhase"


class PhaseDetector:
    """Watches the chosen knob's run-time metrics against its sampling-phase reference.

    A new phase is declared once the largest relative deviation exceeds delta
    for `consecutive_required` intervals in a row.
    """

    def __init__(
        self,
        reference_o: float,
        reference_c: Sequence[float],
        threshold: float = DEFAULT_DELTA,
        consecutive_required: int = DEFAULT_CONSECUTIVE,
    ):
        if not 0 < threshold < 1:
            raise ValueError(f"threshold must be in (0, 1), got {threshold}")
        if consecutive_required < 1:
            raise ValueError("consecutive_required must be at least 1")
        self.reference_o = float(reference_o)
        self.reference_c: List[float] = [float(v) for v in reference_c]
        self.threshold = threshold
        self.consecutive_required = consecutive_required
        self.violation_streak = 0

    def distance(self, o: float, c: Sequence[float]) -> float:
        """max relative deviation over the objective and every constraint metric"""
        pairs = [(o, self.reference_o)] + list(zip(c, self.reference_c))
        return max(abs(v - ref) / max(abs(ref), 1e-9) for v, ref in pairs)

    def monitor_step(self, o: float, c: Sequence[float]) -> PhaseDecision:
        if self.distance(o, c) > self.threshold:
            self.violation_streak += 1
        else:
            self.violation_streak = 0
        if self.violation_streak >= self.consecutive_required:
            self.violation_streak = 0
            return PhaseDecision.new_phase
        return PhaseDecision.stay
