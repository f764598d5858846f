"""Controller-side interlock state machine.

Heartbeat timeout, tick-overrun watchdog, and e-stop all latch a fault that
only an explicit clear (with the e-stop released) can leave, dropping back
to IDLE — never straight to ENABLED.  The transition function is pure; the
controller actor owns the instance and feeds it events.
"""

import enum
from dataclasses import dataclass, replace


class SafetyState(enum.IntEnum):
    BOOT = 0
    IDLE = 1
    ENABLED = 2
    FAULT_LATCHED = 3


class FaultReason(enum.IntEnum):
    NONE = 0
    HB_TIMEOUT = 1
    ESTOP = 2
    WATCHDOG = 3
    CLUTCH_THERMAL = 4


class Action(enum.Enum):
    NONE = "none"
    ZERO_EFFORT_LATCH = "zero_effort_latch"
    ACK_REJECT = "ack_reject"


@dataclass(frozen=True)
class SafetyConfig:
    heartbeat_period_ns: int = 10_000_000
    heartbeat_timeout_ns: int = 50_000_000
    overrun_threshold: int = 2

    def __post_init__(self):
        if self.heartbeat_timeout_ns <= self.heartbeat_period_ns:
            raise ValueError("heartbeat timeout must exceed the period")


@dataclass(frozen=True)
class SafetyStatus:
    state: SafetyState = SafetyState.BOOT
    last_heartbeat_ns: int | None = None
    overrun_count: int = 0
    estop_pressed: bool = False
    fault_reason: FaultReason = FaultReason.NONE


# events: ("heartbeat", t) ("enable_req", t) ("disable_req", t)
# ("estop_press", t) ("estop_release", t) ("clear_fault", t)
# ("tick", t) ("tick_overrun", t) ("subsystem_fault", t, reason)

EVENT_NAMES = frozenset({
    "heartbeat", "enable_req", "disable_req", "estop_press", "estop_release",
    "clear_fault", "tick", "tick_overrun", "subsystem_fault",
})


def _latch(s: SafetyStatus, reason: FaultReason) -> tuple[SafetyStatus, list]:
    return (replace(s, state=SafetyState.FAULT_LATCHED, fault_reason=reason),
            [Action.ZERO_EFFORT_LATCH])


def _heartbeat_fresh(s: SafetyStatus, t: int, cfg: SafetyConfig) -> bool:
    return s.last_heartbeat_ns is not None and \
        t - s.last_heartbeat_ns <= cfg.heartbeat_timeout_ns


def on_event(s: SafetyStatus, event: tuple, cfg: SafetyConfig = SafetyConfig()
             ) -> tuple[SafetyStatus, list]:
    """Apply one timestamped event; returns (new status, actions)."""
    kind = event[0]
    t = event[1]
    if kind not in EVENT_NAMES:
        return s, [(Action.ACK_REJECT, f"unknown event {kind!r}")]

    if kind == "heartbeat":
        return replace(s, last_heartbeat_ns=t), [Action.NONE]

    if kind == "estop_press":
        if s.state == SafetyState.ENABLED:
            st, acts = _latch(replace(s, estop_pressed=True), FaultReason.ESTOP)
            return st, acts
        return replace(s, estop_pressed=True), [Action.NONE]

    if kind == "estop_release":
        return replace(s, estop_pressed=False), [Action.NONE]

    if kind == "enable_req":
        if s.state == SafetyState.FAULT_LATCHED:
            return s, [(Action.ACK_REJECT, f"fault latched: {s.fault_reason.name}")]
        if s.state != SafetyState.IDLE:
            return s, [(Action.ACK_REJECT, f"enable refused in {s.state.name}")]
        if s.estop_pressed:
            return s, [(Action.ACK_REJECT, "estop pressed")]
        if not _heartbeat_fresh(s, t, cfg):
            return s, [(Action.ACK_REJECT, "no fresh heartbeat")]
        return replace(s, state=SafetyState.ENABLED, overrun_count=0), [Action.NONE]

    if kind == "disable_req":
        if s.state == SafetyState.ENABLED:
            return replace(s, state=SafetyState.IDLE), [Action.NONE]
        return s, [Action.NONE]

    if kind == "clear_fault":
        if s.state != SafetyState.FAULT_LATCHED:
            return s, [(Action.ACK_REJECT, f"no fault to clear in {s.state.name}")]
        if s.estop_pressed:
            return s, [(Action.ACK_REJECT, "estop still pressed")]
        return (replace(s, state=SafetyState.IDLE, fault_reason=FaultReason.NONE,
                        overrun_count=0), [Action.NONE])

    if kind == "subsystem_fault":
        reason = event[2]
        if s.state == SafetyState.ENABLED:
            return _latch(s, reason)
        return s, [Action.NONE]

    if kind == "tick_overrun":
        if s.state == SafetyState.ENABLED:
            count = s.overrun_count + 1
            if count >= cfg.overrun_threshold:
                return _latch(replace(s, overrun_count=count), FaultReason.WATCHDOG)
            return replace(s, overrun_count=count), [Action.NONE]
        return s, [Action.NONE]

    # plain tick
    if s.state == SafetyState.BOOT:
        return replace(s, state=SafetyState.IDLE), [Action.NONE]
    if s.state == SafetyState.ENABLED:
        if not _heartbeat_fresh(s, t, cfg):
            return _latch(s, FaultReason.HB_TIMEOUT)
        if s.overrun_count:
            # the overrun counter tracks consecutive overruns only
            return replace(s, overrun_count=0), [Action.NONE]
    return s, [Action.NONE]


def is_motion_permitted(s: SafetyStatus) -> bool:
    return s.state == SafetyState.ENABLED
