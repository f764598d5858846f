"""SMA inchworm needle driver: two clutches, one short stage, infinite travel.

HOLD grounds the needle to the frame; DRIVE grips it to the moving stage.
A first-order thermal model gates every phase change: a clutch engages only
above T_engage and releases only below T_release, so cycle timing follows
the physics instead of fixed delays.  Depth targets are assigned exactly at
cycle completion, so a finished plan lands on its commanded depth with no
accumulation error.
"""

import enum
import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ThermalParams:
    heat_capacity: float = 0.05      # J/K
    thermal_resistance: float = 20.0  # K/W
    ambient_c: float = 22.0
    power_max: float = 5.0           # W
    engage_c: float = 70.0
    release_c: float = 45.0

    def __post_init__(self):
        if not (self.engage_c > self.release_c > self.ambient_c):
            raise ValueError("need engage > release > ambient temperatures")
        if min(self.heat_capacity, self.thermal_resistance, self.power_max) <= 0:
            raise ValueError("thermal constants must be > 0")

    @property
    def time_constant(self) -> float:
        return self.thermal_resistance * self.heat_capacity

    @property
    def max_temperature(self) -> float:
        return self.ambient_c + self.power_max * self.thermal_resistance


DEFAULT_THERMAL = ThermalParams()


def thermal_step(temp_c: float, power: float, dt: float,
                 params: ThermalParams = DEFAULT_THERMAL) -> float:
    """Explicit-Euler first-order heating: dT/dt = (P - (T - T_amb)/R) / C."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    if not 0.0 <= power <= params.power_max:
        raise ValueError("power outside [0, power_max]")
    return temp_c + dt * (power - (temp_c - params.ambient_c)
                          / params.thermal_resistance) / params.heat_capacity


def temp_control_step(temp_c: float, band_lo: float, band_hi: float,
                      prev_power: float,
                      params: ThermalParams = DEFAULT_THERMAL) -> float:
    """Bang-bang with hysteresis: full power below the band, none above."""
    if temp_c < band_lo:
        return params.power_max
    if temp_c > band_hi:
        return 0.0
    return prev_power


class ClutchPhase(enum.IntEnum):
    RELEASED = 0
    HEATING = 1
    ENGAGED = 2
    COOLING = 3


class ClutchRole(enum.Enum):
    HOLD = "hold"
    DRIVE = "drive"


class Clutch:
    """One SMA clutch: commanded engaged/released, thermally gated."""

    def __init__(self, role: ClutchRole, params: ThermalParams = DEFAULT_THERMAL,
                 engaged: bool = False):
        self.role = role
        self.params = params
        self.want_engaged = engaged
        if engaged:
            self.temp_c = params.engage_c + 2.5
            self.phase = ClutchPhase.ENGAGED
        else:
            self.temp_c = params.ambient_c
            self.phase = ClutchPhase.RELEASED
        self.power = 0.0
        self._command_age_s = 0.0

    def command(self, engaged: bool) -> None:
        if engaged != self.want_engaged:
            self.want_engaged = engaged
            self._command_age_s = 0.0

    def tick(self, dt: float) -> None:
        p = self.params
        if self.want_engaged:
            # hold band sits above the engage threshold so an engaged clutch
            # never cools through it while commanded on
            self.power = temp_control_step(self.temp_c, p.engage_c + 0.5,
                                           p.engage_c + 4.5, self.power, p)
        else:
            self.power = 0.0
        self.temp_c = thermal_step(self.temp_c, self.power, dt, p)
        self._command_age_s += dt

        if self.want_engaged:
            if self.temp_c >= p.engage_c:
                self.phase = ClutchPhase.ENGAGED
            elif self.phase != ClutchPhase.ENGAGED:
                self.phase = ClutchPhase.HEATING
        else:
            if self.temp_c <= p.release_c:
                self.phase = ClutchPhase.RELEASED
            elif self.phase != ClutchPhase.RELEASED:
                self.phase = ClutchPhase.COOLING

    @property
    def engaged(self) -> bool:
        return self.phase == ClutchPhase.ENGAGED

    @property
    def released(self) -> bool:
        return self.phase == ClutchPhase.RELEASED

    def settled(self) -> bool:
        return self.engaged if self.want_engaged else self.released

    def timed_out(self, timeout_s: float) -> bool:
        return not self.settled() and self._command_age_s > timeout_s


DEFAULT_STROKE = 0.05


@dataclass(frozen=True)
class CycleSpec:
    """One inchworm cycle: signed stage move and the exact depth after it."""

    move: float
    target_depth: float


@dataclass(frozen=True)
class InsertionPlan:
    delta: float
    stroke: float
    cycles: tuple[CycleSpec, ...]

    @property
    def final_depth_change(self) -> float:
        return self.delta


def plan_insertion(delta: float, stroke: float = DEFAULT_STROKE,
                   start_depth: float = 0.0) -> InsertionPlan:
    """Split a signed depth change into stage-stroke cycles.

    ceil(|delta|/stroke) cycles; the final (possibly partial) cycle's target
    is start_depth + delta exactly, so executed motion sums to delta with no
    rounding accumulation.
    """
    if stroke <= 0.0:
        raise ValueError("stroke must be > 0")
    mag = abs(delta)
    if mag <= 1e-12:
        return InsertionPlan(0.0, stroke, ())
    n = max(1, math.ceil(mag / stroke - 1e-12))
    sign = 1.0 if delta > 0 else -1.0
    cycles = []
    for k in range(1, n):
        cycles.append(CycleSpec(sign * stroke, start_depth + sign * stroke * k))
    last_move = delta - sign * stroke * (n - 1)
    cycles.append(CycleSpec(last_move, start_depth + delta))
    return InsertionPlan(delta, stroke, tuple(cycles))


class CycleStep(enum.IntEnum):
    ENGAGE_DRIVE = 0
    RELEASE_HOLD = 1
    MOVE = 2
    ENGAGE_HOLD = 3
    RELEASE_DRIVE = 4
    RETURN = 5


class ClutchFault(RuntimeError):
    pass


class InchwormDriver:
    """Cycle automaton advancing the logical needle depth via stage strokes.

    Owned by the controller actor and advanced once per controller tick.
    The stage is rate-limited toward its phase target; depth follows stage
    motion only while DRIVE is engaged, and snaps to the cycle's exact
    target depth when the move phase completes.
    """

    THERMAL_TIMEOUT_S = 30.0

    def __init__(self, thermal: ThermalParams = DEFAULT_THERMAL,
                 stroke: float = DEFAULT_STROKE, stage_speed: float = 0.02,
                 needle_loaded: bool = True):
        self.thermal = thermal
        self.stroke = stroke
        self.stage_speed = stage_speed
        self.needle_loaded = needle_loaded
        self.hold = Clutch(ClutchRole.HOLD, thermal, engaged=needle_loaded)
        self.drive = Clutch(ClutchRole.DRIVE, thermal, engaged=False)
        self.depth = 0.0
        self.stage_pos = 0.0
        self.stage_velocity = 0.0
        self.plan: InsertionPlan | None = None
        self.cycle_index = 0
        self.step = CycleStep.ENGAGE_DRIVE
        self.fault: str | None = None
        self._move_from_depth = 0.0
        self._move_from_stage = 0.0
        self._pending_target: float | None = None
        self._target = 0.0

    # -- commands ------------------------------------------------------------

    def set_target_depth(self, target: float) -> None:
        """(Re)plan toward a new absolute depth; applied at cycle boundaries."""
        target = max(0.0, target)
        self._target = target
        if self.plan is None:
            self._pending_target = None
            if abs(target - self.depth) > 1e-12:
                self.plan = plan_insertion(target - self.depth, self.stroke,
                                           start_depth=self.depth)
                self.cycle_index = 0
                self.step = CycleStep.ENGAGE_DRIVE
        elif abs(target - self._plan_final_depth()) > 1e-12:
            self._pending_target = target
        else:
            self._pending_target = None

    def _plan_final_depth(self) -> float:
        if self.plan is None or not self.plan.cycles:
            return self.depth
        return self.plan.cycles[-1].target_depth

    # -- per-tick advance ------------------------------------------------------

    def tick(self, dt: float) -> None:
        if self.fault is not None:
            self.hold.command(self.needle_loaded)
            self.drive.command(False)
            self._thermal_tick(dt)
            self.stage_velocity = 0.0
            return

        if self.plan is None:
            # idle: keep the needle gripped by HOLD
            self.hold.command(self.needle_loaded)
            self.drive.command(False)
            self._thermal_tick(dt)
            self.stage_velocity = 0.0
            self._maybe_start_pending()
            return

        cycle = self.plan.cycles[self.cycle_index]
        step = self.step
        moved = 0.0

        if step == CycleStep.ENGAGE_DRIVE:
            self.drive.command(True)
            self.hold.command(True)
            if self.drive.engaged:
                self.step = CycleStep.RELEASE_HOLD
        elif step == CycleStep.RELEASE_HOLD:
            self.drive.command(True)
            self.hold.command(False)
            if self.hold.released and self.drive.engaged:
                self.step = CycleStep.MOVE
                self._move_from_depth = self.depth
                self._move_from_stage = self.stage_pos
        elif step == CycleStep.MOVE:
            # needle moves with the stage: DRIVE engaged, HOLD released
            if not (self.drive.engaged and self.hold.released):
                self._trip("stage move without correct grip state")
                return
            target_stage = self._move_from_stage + cycle.move
            if self.stage_pos == target_stage:
                # arrived on a previous tick: snap to the exact cycle depth
                self.depth = cycle.target_depth
                self.step = CycleStep.ENGAGE_HOLD
            else:
                moved = self._stage_toward(target_stage, dt)
                self.depth = self._move_from_depth + (self.stage_pos - self._move_from_stage)
        elif step == CycleStep.ENGAGE_HOLD:
            self.drive.command(True)
            self.hold.command(True)
            if self.hold.engaged:
                self.step = CycleStep.RELEASE_DRIVE
        elif step == CycleStep.RELEASE_DRIVE:
            self.hold.command(True)
            self.drive.command(False)
            if self.drive.released and self.hold.engaged:
                self.step = CycleStep.RETURN
        elif step == CycleStep.RETURN:
            # stage re-centers with the needle grounded by HOLD
            if not (self.hold.engaged and self.drive.released):
                self._trip("stage return without correct grip state")
                return
            if self.stage_pos == 0.0:
                self.cycle_index += 1
                self.step = CycleStep.ENGAGE_DRIVE
                if self.cycle_index >= len(self.plan.cycles):
                    self.plan = None
                    self.cycle_index = 0
                    self._maybe_start_pending()
            else:
                moved = self._stage_toward(0.0, dt)

        self.stage_velocity = moved / dt if dt > 0 else 0.0
        self._thermal_tick(dt)

    def _maybe_start_pending(self) -> None:
        pending = getattr(self, "_pending_target", None)
        if pending is not None:
            self._pending_target = None
            if abs(pending - self.depth) > 1e-12:
                self.plan = plan_insertion(pending - self.depth, self.stroke,
                                           start_depth=self.depth)
                self.cycle_index = 0
                self.step = CycleStep.ENGAGE_DRIVE

    def _stage_toward(self, target: float, dt: float) -> float:
        max_step = self.stage_speed * dt
        delta = target - self.stage_pos
        if abs(delta) <= max_step:
            self.stage_pos = target
            return delta
        step = math.copysign(max_step, delta)
        self.stage_pos += step
        return step

    def _thermal_tick(self, dt: float) -> None:
        self.hold.tick(dt)
        self.drive.tick(dt)
        for clutch in (self.hold, self.drive):
            if clutch.timed_out(self.THERMAL_TIMEOUT_S):
                self._trip(f"{clutch.role.value} clutch thermal timeout")
                return

    def _trip(self, reason: str) -> None:
        self.fault = reason
        self.stage_velocity = 0.0

    # -- introspection ---------------------------------------------------------

    @property
    def busy(self) -> bool:
        return self.plan is not None

    def grip_ok(self) -> bool:
        """Grip invariant: moving needs exactly one (correct) engaged clutch;
        a loaded needle always needs at least one engaged clutch."""
        if self.stage_velocity != 0.0:
            if self.step == CycleStep.MOVE:
                return self.drive.engaged and not self.hold.engaged
            if self.step == CycleStep.RETURN:
                return self.hold.engaged and not self.drive.engaged
            return False
        if self.needle_loaded:
            return self.hold.engaged or self.drive.engaged
        return True

    def bitfield(self) -> int:
        """Wire encoding: bit0/1 HOLD engaged/released, bit2/3 DRIVE, bit4 busy,
        bit5 fault."""
        b = 0
        if self.hold.engaged:
            b |= 1
        if self.hold.released:
            b |= 2
        if self.drive.engaged:
            b |= 4
        if self.drive.released:
            b |= 8
        if self.busy:
            b |= 16
        if self.fault is not None:
            b |= 32
        return b
