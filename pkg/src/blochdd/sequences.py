"""Pulse-program representation, textual language, and sequence builders.

A program is an ordered tuple of events: ``Pulse``, ``Wait``, ``Acquire``
and ``Repeat`` (one nesting level of acquires inside repeats is allowed,
so decay curves can be read out once per cycle).

Textual form -- one statement per line or separated by ``;``, comments
start with ``#``::

    pulse area=pi/2 phase=0
    wait 1.2ms
    repeat 1000 {
      pulse area=pi phase=0
      wait 2ms
      pulse area=pi phase=180
      wait 2ms
    }
    acquire echo

Grammar (EBNF)::

    program    = { statement , { ";" | NEWLINE } } ;
    statement  = pulse | wait | repeat | acquire ;
    pulse      = "pulse" , param , { param } ;
    param      = ( "area" "=" angle ) | ( "phase" "=" angle )
               | ( "rabi" "=" freq ) | ( "duration" "=" time ) ;
    wait       = "wait" , time ;
    repeat     = "repeat" , INT , "{" , program , "}" ;
    acquire    = "acquire" , IDENT ;
    time       = NUMBER , [ "s" | "ms" | "us" ] ;          (* bare = s *)
    freq       = NUMBER , [ "Hz" | "kHz" | "MHz" ] ;       (* bare = Hz *)
    angle      = [ SIGN ] , [ NUMBER ] , "pi" , [ "/" NUMBER ]
               | NUMBER , [ "rad" | "deg" ] ;              (* bare = deg *)

Units are normalized internally to seconds, hertz and radians.  Bare
duration/frequency numbers are SI (s, Hz); bare angle numbers follow the
NMR convention and are read as degrees -- write ``rad`` or a pi-form for
radians.  A negative ``area`` is normalized to a positive area with the
phase advanced by pi (same axis, reversed sense).

``serialize`` emits the canonical form: seconds/hertz/radians with
explicit unit suffixes at 17 significant digits, so
``parse(serialize(p)) == p`` exactly.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Union

from .bloch import PulseEvent

__all__ = [
    "Pulse",
    "Wait",
    "Acquire",
    "Repeat",
    "PulseProgram",
    "SequenceError",
    "parse",
    "serialize",
    "PulseSpec",
    "HARD_PULSES",
    "BangBangParams",
    "BathCutoff",
    "BangBangCheck",
    "build_hahn_echo",
    "build_inversion_recovery",
    "build_bangbang",
    "build_bangbang_body",
    "validate_bangbang",
]


@dataclass(frozen=True)
class Pulse:
    event: PulseEvent


@dataclass(frozen=True)
class Wait:
    duration: float  # seconds, >= 0

    def __post_init__(self) -> None:
        if not self.duration >= 0:
            raise ValueError(f"wait duration must be non-negative, got {self.duration}")
        if not math.isfinite(self.duration):
            raise ValueError("wait duration must be finite")


@dataclass(frozen=True)
class Acquire:
    label: str


Event = Union[Pulse, Wait, Acquire, "Repeat"]


@dataclass(frozen=True)
class Repeat:
    count: int
    body: tuple  # tuple[Event, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.count, int) or self.count < 1:
            raise ValueError(f"repeat count must be a positive integer, got {self.count}")
        object.__setattr__(self, "body", tuple(self.body))


def _acquire_depth_ok(events, depth: int = 0) -> bool:
    for ev in events:
        if isinstance(ev, Acquire) and depth > 1:
            return False
        if isinstance(ev, Repeat) and not _acquire_depth_ok(ev.body, depth + 1):
            return False
    return True


@dataclass(frozen=True)
class PulseProgram:
    """Immutable executable pulse sequence."""

    events: tuple  # tuple[Event, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))
        if not _acquire_depth_ok(self.events):
            raise ValueError("acquire events may sit at most one repeat level deep")

    def expand(self) -> Iterator[Event]:
        """Yield primitive events (Pulse/Wait/Acquire) with repeats unrolled."""

        def walk(events):
            for ev in events:
                if isinstance(ev, Repeat):
                    for _ in range(ev.count):
                        yield from walk(ev.body)
                else:
                    yield ev

        return walk(self.events)

    def duration(self) -> float:
        """Total expanded duration in seconds (hard pulses take no time)."""
        total = 0.0
        for ev in self.expand():
            if isinstance(ev, Wait):
                total += ev.duration
            elif isinstance(ev, Pulse):
                total += ev.event.elapsed
        return total

    def expanded_count(self) -> int:
        return sum(1 for _ in self.expand())


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

class SequenceError(ValueError):
    """Syntax or validation error in sequence text, with line/column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


_TOKEN_RE = re.compile(
    r"""
    (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[{}=;/+-])
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<space>[ \t\r]+)
  | (?P<bad>.)
    """,
    re.VERBOSE,
)

_TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6}
_FREQ_UNITS = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6}


@dataclass
class _Token:
    kind: str  # number | ident | punct | newline | end
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        s = m.group()
        if kind == "bad":
            raise SequenceError(f"unexpected character {s!r}", line, col)
        if kind not in ("space", "comment"):
            tokens.append(_Token("newline" if kind == "newline" else kind, s, line, col))
        if kind == "newline":
            line += 1
            col = 1
        else:
            col += len(s)
    tokens.append(_Token("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.toks[self.pos]

    def next(self) -> _Token:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def skip_separators(self) -> None:
        while self.peek().kind == "newline" or self.peek().text == ";":
            self.next()

    def error(self, msg: str, tok: _Token | None = None):
        tok = tok or self.peek()
        raise SequenceError(msg, tok.line, tok.col)

    # -- value parsers ------------------------------------------------

    def parse_number(self) -> float:
        tok = self.next()
        if tok.kind != "number":
            self.error(f"expected a number, got {tok.text!r}", tok)
        return float(tok.text)

    def parse_time(self) -> float:
        tok = self.peek()
        value = self.parse_number()
        unit = 1.0
        if self.peek().kind == "ident":
            name = self.peek().text
            if name in _TIME_UNITS:
                unit = _TIME_UNITS[name]
                self.next()
            else:
                self.error(f"unknown time unit {name!r}")
        value *= unit
        if value < 0:
            self.error("negative duration", tok)
        return value

    def parse_freq(self) -> float:
        tok = self.peek()
        value = self.parse_number()
        unit = 1.0
        if self.peek().kind == "ident":
            name = self.peek().text
            if name in _FREQ_UNITS:
                unit = _FREQ_UNITS[name]
                self.next()
            else:
                self.error(f"unknown frequency unit {name!r}")
        value *= unit
        if value <= 0:
            self.error("frequency must be positive", tok)
        return value

    def parse_angle(self) -> float:
        # [sign] [coef] pi [/ divisor]  |  number [rad|deg]
        sign = 1.0
        tok = self.peek()
        if tok.text in ("+", "-"):
            sign = -1.0 if tok.text == "-" else 1.0
            self.next()
            tok = self.peek()
        coef = None
        if tok.kind == "number":
            coef = sign * self.parse_number()
            sign = 1.0
        if self.peek().kind == "ident" and self.peek().text == "pi":
            self.next()
            value = (coef if coef is not None else 1.0) * math.pi * sign
            if self.peek().text == "/":
                self.next()
                div = self.parse_number()
                if div == 0:
                    self.error("division by zero in angle")
                value /= div
            return value
        if coef is None:
            self.error(f"expected an angle, got {tok.text!r}", tok)
        # plain number: explicit rad/deg, bare defaults to degrees
        if self.peek().kind == "ident":
            name = self.peek().text
            if name == "rad":
                self.next()
                return coef
            if name == "deg":
                self.next()
                return math.radians(coef)
            self.error(f"unknown angle unit {name!r}")
        return math.radians(coef)

    # -- statements ----------------------------------------------------

    def parse_program(self, stop_at_brace: bool = False) -> tuple:
        events = []
        while True:
            self.skip_separators()
            tok = self.peek()
            if tok.kind == "end":
                if stop_at_brace:
                    self.error("missing closing '}'")
                break
            if tok.text == "}":
                if not stop_at_brace:
                    self.error("unmatched '}'")
                break
            events.append(self.parse_statement())
        return tuple(events)

    def parse_statement(self) -> Event:
        tok = self.next()
        if tok.kind != "ident":
            self.error(f"expected a statement, got {tok.text!r}", tok)
        if tok.text == "pulse":
            return self.parse_pulse(tok)
        if tok.text == "wait":
            return Wait(self.parse_time())
        if tok.text == "acquire":
            name = self.next()
            if name.kind != "ident":
                self.error("acquire needs a label", name)
            return Acquire(name.text)
        if tok.text == "repeat":
            count_tok = self.next()
            if count_tok.kind != "number" or not re.fullmatch(r"\d+", count_tok.text):
                self.error("repeat needs a positive integer count", count_tok)
            count = int(count_tok.text)
            if count < 1:
                self.error("repeat count must be >= 1", count_tok)
            brace = self.next()
            if brace.text != "{":
                self.error("expected '{' after repeat count", brace)
            body = self.parse_program(stop_at_brace=True)
            closing = self.next()
            if closing.text != "}":
                self.error("expected '}'", closing)
            return Repeat(count, body)
        self.error(f"unknown statement {tok.text!r}", tok)

    def parse_pulse(self, head: _Token) -> Pulse:
        params: dict[str, float] = {}
        while self.peek().kind == "ident" and self.peek().text in (
            "area",
            "phase",
            "rabi",
            "duration",
        ):
            key = self.next().text
            eq = self.next()
            if eq.text != "=":
                self.error(f"expected '=' after {key!r}", eq)
            if key in ("area", "phase"):
                params[key] = self.parse_angle()
            elif key == "rabi":
                params[key] = self.parse_freq()
            else:
                params[key] = self.parse_time()
        if not params:
            self.error("pulse needs parameters (area= or rabi=/duration=)", head)
        phase = params.pop("phase", 0.0)
        area = params.pop("area", None)
        rabi = params.pop("rabi", None)
        duration = params.pop("duration", None)
        if area is not None and (rabi is not None or duration is not None):
            self.error("pulse takes either area or rabi+duration, not both", head)
        if area is None and (rabi is None or duration is None):
            self.error("finite pulse needs both rabi and duration", head)
        if area is not None and area < 0:
            # reversed rotation: same axis area, phase advanced by pi
            area = -area
            phase = phase + math.pi
        try:
            event = PulseEvent(phase=phase, area=area, rabi=rabi, duration=duration)
        except ValueError as exc:
            self.error(str(exc), head)
        return Pulse(event)


def parse(text: str) -> PulseProgram:
    """Parse sequence-language source into a :class:`PulseProgram`."""
    parser = _Parser(text)
    events = parser.parse_program()
    return PulseProgram(events)


# ---------------------------------------------------------------------------
# serialization (canonical form)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    # 17 significant digits: exact float round-trip, well past the
    # 12-digit minimum the canonical form guarantees.
    return format(float(x), ".16e")


def _serialize_events(events, indent: int, lines: list[str]) -> None:
    pad = "  " * indent
    for ev in events:
        if isinstance(ev, Pulse):
            p = ev.event
            if p.mode == "hard":
                lines.append(f"{pad}pulse area={_fmt(p.area)}rad phase={_fmt(p.phase)}rad")
            else:
                lines.append(
                    f"{pad}pulse rabi={_fmt(p.rabi)}Hz duration={_fmt(p.duration)}s "
                    f"phase={_fmt(p.phase)}rad"
                )
        elif isinstance(ev, Wait):
            lines.append(f"{pad}wait {_fmt(ev.duration)}s")
        elif isinstance(ev, Acquire):
            lines.append(f"{pad}acquire {ev.label}")
        elif isinstance(ev, Repeat):
            lines.append(f"{pad}repeat {ev.count} {{")
            _serialize_events(ev.body, indent + 1, lines)
            lines.append(f"{pad}}}")
        else:
            raise TypeError(f"unknown event type {type(ev).__name__}")


def serialize(program: PulseProgram) -> str:
    """Canonical one-statement-per-line form; inverse of :func:`parse`."""
    lines: list[str] = []
    _serialize_events(program.events, 0, lines)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# canonical sequence builders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PulseSpec:
    """How builders realize nominal rotation angles.

    ``rabi=None`` produces ideal hard pulses; a finite Rabi frequency
    (Hz) produces square pulses of duration ``area / (2*pi*rabi)``.
    """

    rabi: float | None = None

    def make(self, area: float, phase: float) -> PulseEvent:
        if self.rabi is None:
            return PulseEvent(phase=phase, area=area)
        return PulseEvent(
            phase=phase, rabi=self.rabi, duration=area / (2.0 * math.pi * self.rabi)
        )


HARD_PULSES = PulseSpec()


@dataclass(frozen=True)
class BangBangParams:
    """Decoupling-train parameters.

    ``tau1`` is the delay between the initial (coherence-generating)
    pulse and the first decoupling pulse; ``tau_c`` the spacing of the
    pi,-pi train; ``n_cycles`` the number of pi,-pi pairs.
    ``initial_area`` defaults to pi/2 and may be ``None`` to omit the
    preparation pulse (used when the train is treated as a bare channel).
    """

    tau1: float
    tau_c: float
    n_cycles: int
    initial_area: float | None = math.pi / 2

    def __post_init__(self) -> None:
        if not self.tau1 > 0:
            raise ValueError(f"tau1 must be positive, got {self.tau1}")
        if not self.tau_c > 0:
            raise ValueError(f"tau_c must be positive, got {self.tau_c}")
        if self.n_cycles < 0:
            raise ValueError(f"n_cycles must be >= 0, got {self.n_cycles}")


@dataclass(frozen=True)
class BathCutoff:
    """Angular cutoff frequency of the dephasing bath, rad/s."""

    omega_c: float

    def __post_init__(self) -> None:
        if not self.omega_c > 0:
            raise ValueError(f"omega_c must be positive, got {self.omega_c}")


@dataclass(frozen=True)
class BangBangCheck:
    """Result of the decoupling-regime criterion ``omega_c * tau_c <= 1``."""

    passed: bool
    product: float


def validate_bangbang(cutoff: BathCutoff, tau_c: float) -> BangBangCheck:
    """Check the pulse train is fast compared to the bath cutoff.

    Decoupling rephases bath-induced dephasing when the product
    ``omega_c * tau_c`` is at most 1 (boundary inclusive); larger
    products are flagged, carrying the offending value.
    """
    product = cutoff.omega_c * tau_c
    return BangBangCheck(passed=product <= 1.0, product=product)


def build_hahn_echo(
    tau: float, pulse_spec: PulseSpec = HARD_PULSES, label: str = "echo"
) -> PulseProgram:
    """Two-pulse echo: pi/2 -- tau -- pi -- tau -- acquire.

    Static detuning refocuses exactly at the acquire (2*tau after the
    first pulse), so the ensemble echo amplitude isolates irreversible
    decay.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return PulseProgram(
        (
            Pulse(pulse_spec.make(math.pi / 2, 0.0)),
            Wait(tau),
            Pulse(pulse_spec.make(math.pi, 0.0)),
            Wait(tau),
            Acquire(label),
        )
    )


def build_inversion_recovery(
    delay: float, pulse_spec: PulseSpec = HARD_PULSES, label: str = "signal"
) -> PulseProgram:
    """Longitudinal-relaxation probe: pi -- delay -- pi/2 -- acquire.

    The readout pi/2 converts z into transverse signal; the signed
    amplitude is recovered from the acquire phase (reference -pi/2 for
    phase-0 pulses).
    """
    if not delay > 0:
        raise ValueError(f"delay must be positive, got {delay}")
    return PulseProgram(
        (
            Pulse(pulse_spec.make(math.pi, 0.0)),
            Wait(delay),
            Pulse(pulse_spec.make(math.pi / 2, 0.0)),
            Acquire(label),
        )
    )


def _bangbang_cycle(pulse_spec: PulseSpec, tau_c: float) -> tuple:
    return (
        Pulse(pulse_spec.make(math.pi, 0.0)),
        Wait(tau_c),
        Pulse(pulse_spec.make(math.pi, math.pi)),  # -pi as phase-advanced pi
        Wait(tau_c),
    )


def _bangbang_cycle_acquire(
    pulse_spec: PulseSpec, tau_c: float, tau1: float, label: str, trailing_wait: bool
) -> tuple:
    """One pi,-pi cycle with the acquire at the echo instant.

    With pulses every tau_c after an initial delay tau1 <= tau_c, the
    static-detuning phase integral returns to zero (tau_c - tau1) into
    the trailing wait of every cycle: the acquire sits there, and the
    remaining tau1 completes the period.
    """
    events = [
        Pulse(pulse_spec.make(math.pi, 0.0)),
        Wait(tau_c),
        Pulse(pulse_spec.make(math.pi, math.pi)),
    ]
    if tau1 <= tau_c:
        if tau_c - tau1 > 0:
            events.append(Wait(tau_c - tau1))
        events.append(Acquire(label))
        if trailing_wait and tau1 > 0:
            events.append(Wait(tau1))
    else:
        # No refocusing instant exists for tau1 > tau_c with this train;
        # read at the cycle end (documented limitation).
        if trailing_wait:
            events.append(Wait(tau_c))
        events.append(Acquire(label))
    return tuple(events)


def build_bangbang(
    p: BangBangParams,
    pulse_spec: PulseSpec = HARD_PULSES,
    label: str = "echo",
    acquire_every: int | None = None,
    trailing_wait: bool = True,
) -> PulseProgram:
    """Decoupling train: initial pulse -- tau1 -- N x (pi -- tau_c -- -pi -- tau_c).

    The acquire is placed at the nominal refocusing instant ``2*N*tau_c``
    after the initial pulse (inside the final trailing wait), which
    requires ``tau1 <= tau_c``; the full expanded duration is
    ``tau1 + 2*N*tau_c``.  ``acquire_every=m`` additionally reads the
    echo every m-th cycle so a single run yields a decay curve.
    ``trailing_wait=False`` drops the wait after the second pulse of each
    pair (the pairs then no longer tile periodically).
    """
    events: list[Event] = []
    if p.initial_area is not None:
        events.append(Pulse(pulse_spec.make(p.initial_area, 0.0)))
    events.append(Wait(p.tau1))
    n = p.n_cycles
    if n == 0:
        events.append(Acquire(label))
        return PulseProgram(tuple(events))

    plain = _bangbang_cycle(pulse_spec, p.tau_c)
    if not trailing_wait:
        plain = plain[:-1]
    acq = _bangbang_cycle_acquire(pulse_spec, p.tau_c, p.tau1, label, trailing_wait)

    if acquire_every is None:
        if n > 1:
            events.append(Repeat(n - 1, plain))
        events.extend(acq)
    else:
        if acquire_every < 1:
            raise ValueError(f"acquire_every must be >= 1, got {acquire_every}")
        m = acquire_every
        groups, rest = divmod(n, m)
        group = (Repeat(m - 1, plain),) + acq if m > 1 else acq
        if groups > 0:
            events.append(Repeat(groups, group))
        if rest > 0:
            if rest > 1:
                events.append(Repeat(rest - 1, plain))
            events.extend(acq)
    return PulseProgram(tuple(events))


def build_bangbang_body(p: BangBangParams, pulse_spec: PulseSpec = HARD_PULSES) -> PulseProgram:
    """The decoupling train as a bare channel: no preparation pulse, no
    acquire, ending at the refocusing instant ``2*N*tau_c``.

    This is the process that tomography characterizes; preparations are
    injected by the tomography driver.
    """
    events: list[Event] = [Wait(p.tau1)]
    n = p.n_cycles
    if n >= 1:
        if n > 1:
            events.append(Repeat(n - 1, _bangbang_cycle(pulse_spec, p.tau_c)))
        events.append(Pulse(pulse_spec.make(math.pi, 0.0)))
        events.append(Wait(p.tau_c))
        events.append(Pulse(pulse_spec.make(math.pi, math.pi)))
        if p.tau_c - p.tau1 > 0:
            events.append(Wait(p.tau_c - p.tau1))
    return PulseProgram(tuple(events))
