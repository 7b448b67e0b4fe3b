"""Fluid model of a dual-uplink gateway feeding a streaming client.

The gateway uses its primary link until an outage starts, carries nothing
for ``detection_delay`` seconds, then moves traffic to the secondary link.
The client buffer is measured in seconds of media: it fills at
``capacity / bitrate`` seconds per second and drains at one second per
second while playing.

Capacity is integrated exactly over each step (it is piecewise constant), so
the only discretisation error comes from the buffer clamp, the stall
transition and quality switches, which are evaluated once per step.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

EPS = 1e-9


@dataclass(frozen=True)
class LinkModel:
    name: str
    capacity: float  # bits/sec
    outages: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        prev_end = -math.inf
        for start, end in self.outages:
            if not start < end:
                raise ValueError(f"{self.name}: outage [{start}, {end}) is empty")
            if start < prev_end:
                raise ValueError(f"{self.name}: outages must be sorted and disjoint")
            prev_end = end

    def is_up(self, t: float) -> bool:
        return not any(s <= t < e for s, e in self.outages)


@dataclass(frozen=True)
class FailoverPolicy:
    detection_delay: float = 5.0
    switchback: bool = True
    switchback_delay: float = 0.0

    def __post_init__(self):
        if self.detection_delay < 0 or self.switchback_delay < 0:
            raise ValueError("delays must be non-negative")


@dataclass(frozen=True)
class Rung:
    label: str
    bitrate: float  # bits/sec


DEFAULT_LADDER = (Rung("480p", 1.5e6), Rung("720p", 3e6), Rung("1080p", 6e6))


@dataclass(frozen=True)
class AbrParams:
    low_watermark: float = 10.0
    high_watermark: float = 30.0
    upswitch_margin: float = 1.2
    resume_threshold: float = 5.0


@dataclass(frozen=True)
class StreamClient:
    buffer_s: float
    buffer_cap_s: float
    ladder: tuple[Rung, ...] = DEFAULT_LADDER
    quality: int = 0  # index into ladder
    stalled: bool = False

    def __post_init__(self):
        if not 0 <= self.buffer_s <= self.buffer_cap_s:
            raise ValueError("buffer must lie in [0, buffer_cap_s]")
        if not 0 <= self.quality < len(self.ladder):
            raise ValueError("quality index outside ladder")
        if any(b.bitrate <= a.bitrate for a, b in zip(self.ladder, self.ladder[1:])):
            raise ValueError("ladder bitrates must increase")

    @property
    def bitrate(self) -> float:
        return self.ladder[self.quality].bitrate

    @property
    def label(self) -> str:
        return self.ladder[self.quality].label


# -- capacity ---------------------------------------------------------------


def _on_secondary(t: float, primary: LinkModel, policy: FailoverPolicy) -> Optional[bool]:
    """True: traffic on secondary; False: on primary; None: blackout (failure not yet detected)."""
    for s, e in primary.outages:
        if s <= t < e:
            return None if t < s + policy.detection_delay else True
    failed_over = [(s, e) for s, e in primary.outages if e <= t and e - s > policy.detection_delay]
    if not failed_over:
        return False
    if not policy.switchback:
        return True
    _, last_end = failed_over[-1]
    return t < last_end + policy.switchback_delay


def effective_capacity(
    t: float, primary: LinkModel, secondary: Optional[LinkModel], policy: FailoverPolicy
) -> float:
    """Capacity available to the LAN at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if secondary is None:
        return primary.capacity if primary.is_up(t) else 0.0
    state = _on_secondary(t, primary, policy)
    if state is None:
        return 0.0
    if state:
        return secondary.capacity if secondary.is_up(t) else 0.0
    return primary.capacity if primary.is_up(t) else 0.0


def _breakpoints(primary: LinkModel, secondary: Optional[LinkModel], policy: FailoverPolicy) -> list[float]:
    pts = set()
    for s, e in primary.outages:
        pts.update((s, e, s + policy.detection_delay, e + policy.switchback_delay))
    if secondary is not None:
        for s, e in secondary.outages:
            pts.update((s, e))
    return sorted(pts)


def mean_capacity(
    t0: float,
    dt: float,
    primary: LinkModel,
    secondary: Optional[LinkModel],
    policy: FailoverPolicy,
    breakpoints: Optional[Sequence[float]] = None,
) -> float:
    """Average of :func:`effective_capacity` over ``[t0, t0 + dt)``."""
    if breakpoints is None:
        breakpoints = _breakpoints(primary, secondary, policy)
    t1 = t0 + dt
    edges = [t0] + [b for b in breakpoints if t0 < b < t1] + [t1]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        total += effective_capacity(a, primary, secondary, policy) * (b - a)
    return total / dt


# -- client dynamics --------------------------------------------------------


@dataclass(frozen=True)
class StepResult:
    client: StreamClient
    downloaded_s: float
    played_s: float


def step_stream(client: StreamClient, capacity: float, dt: float, abr: AbrParams = AbrParams()) -> StepResult:
    """Advance the client by ``dt`` seconds at constant ``capacity``.

    Downloaded media is capped by the free buffer space. A buffer that runs
    dry mid-step stalls playback until it refills to ``abr.resume_threshold``.
    Afterwards one ABR decision is made: drop a rung below the low
    watermark, climb one above the high watermark if capacity covers the
    next rung with margin.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    fill = capacity / client.bitrate  # media seconds per second
    buf = client.buffer_s
    stalled = client.stalled
    if stalled:
        downloaded = min(fill * dt, client.buffer_cap_s - buf)
        played = 0.0
        buf += downloaded
        if buf >= min(abr.resume_threshold, client.buffer_cap_s) - EPS:
            stalled = False
    else:
        net = (fill - 1.0) * dt
        if buf + net <= EPS and fill < 1.0:
            # runs dry inside the step: play out what is buffered plus what arrives
            downloaded = fill * dt
            played = buf + downloaded
            buf = 0.0
            stalled = True
        else:
            downloaded = min(fill * dt, client.buffer_cap_s - buf + dt)
            played = dt
            buf = buf + downloaded - played
    buf = min(max(buf, 0.0), client.buffer_cap_s)

    q = client.quality
    if not stalled:
        if buf < abr.low_watermark and q > 0:
            q -= 1
        elif (
            buf > abr.high_watermark
            and q + 1 < len(client.ladder)
            and capacity >= abr.upswitch_margin * client.ladder[q + 1].bitrate
        ):
            q += 1
    return StepResult(replace(client, buffer_s=buf, quality=q, stalled=stalled), downloaded, played)


# -- scenarios --------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    t: float
    capacity: float
    buffer_s: float
    quality: str
    stalled: bool


@dataclass
class Trajectory:
    samples: list[Sample]
    stalls: int
    stall_seconds: float
    quality_seconds: dict
    stall_times: list = field(default_factory=list)
    conservation_error: float = 0.0

    def summary(self) -> dict:
        return {
            "quality_seconds": {k: round(v, 6) for k, v in sorted(self.quality_seconds.items())},
            "stall_seconds": round(self.stall_seconds, 6),
            "stall_times": [round(t, 6) for t in self.stall_times],
            "stalls": self.stalls,
        }


def run_scenario(
    primary: LinkModel,
    secondary: Optional[LinkModel],
    policy: FailoverPolicy,
    client: StreamClient,
    duration: float,
    dt: float = 0.1,
    abr: AbrParams = AbrParams(),
) -> Trajectory:
    """Simulate ``duration`` seconds; sample 0 is the initial state.

    A stall is a transition from playing to stalled; the start time recorded
    for it is the end of the step in which the buffer ran dry.
    """
    if dt <= 0 or duration <= 0:
        raise ValueError("duration and dt must be positive")
    steps = round(duration / dt)
    if abs(steps * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"dt {dt} does not divide duration {duration}")
    bps = _breakpoints(primary, secondary, policy)
    samples = [Sample(0.0, effective_capacity(0.0, primary, secondary, policy), client.buffer_s, client.label, client.stalled)]
    stalls = 0
    stall_times = []
    stall_seconds = 0.0
    quality_seconds: Counter = Counter()
    worst = 0.0
    for i in range(steps):
        t = i * dt
        cap = mean_capacity(t, dt, primary, secondary, policy, bps)
        before = client
        res = step_stream(client, cap, dt, abr)
        client = res.client
        worst = max(worst, abs((client.buffer_s - before.buffer_s) - (res.downloaded_s - res.played_s)))
        if before.stalled:
            stall_seconds += dt
        else:
            quality_seconds[before.label] += res.played_s
            if client.stalled:
                stalls += 1
                stall_times.append((i + 1) * dt)
                stall_seconds += dt - res.played_s
        samples.append(Sample((i + 1) * dt, cap, client.buffer_s, client.label, client.stalled))
    return Trajectory(samples, stalls, stall_seconds, dict(quality_seconds), stall_times, worst)


# -- scenario files ---------------------------------------------------------


@dataclass
class Scenario:
    primary: LinkModel
    secondary: Optional[LinkModel]
    policy: FailoverPolicy
    client: StreamClient
    duration: float
    dt: float = 0.1
    abr: AbrParams = AbrParams()

    def run(self) -> Trajectory:
        return run_scenario(self.primary, self.secondary, self.policy, self.client, self.duration, self.dt, self.abr)


def _link(d) -> Optional[LinkModel]:
    if d is None:
        return None
    return LinkModel(d.get("name", ""), float(d["capacity"]), tuple(tuple(map(float, o)) for o in d.get("outages", [])))


def scenario_from_dict(d) -> Scenario:
    c = d.get("client", {})
    ladder = tuple(Rung(r["label"], float(r["bitrate"])) for r in c["ladder"]) if "ladder" in c else DEFAULT_LADDER
    quality = c.get("quality", 0)
    if isinstance(quality, str):
        quality = [r.label for r in ladder].index(quality)
    client = StreamClient(
        buffer_s=float(c.get("buffer_s", 0.0)),
        buffer_cap_s=float(c.get("buffer_cap_s", 240.0)),
        ladder=ladder,
        quality=quality,
        stalled=bool(c.get("stalled", float(c.get("buffer_s", 0.0)) == 0.0)),
    )
    p = d.get("policy", {})
    policy = FailoverPolicy(
        float(p.get("detection_delay", 5.0)), bool(p.get("switchback", True)), float(p.get("switchback_delay", 0.0))
    )
    a = d.get("abr", {})
    abr = AbrParams(**{k: float(v) for k, v in a.items()})
    return Scenario(_link(d["primary"]), _link(d.get("secondary")), policy, client,
                    float(d["duration"]), float(d.get("dt", 0.1)), abr)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def write_trajectory(path, traj: Trajectory) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "capacity", "buffer", "quality", "stalled"])
        for s in traj.samples:
            w.writerow([f"{s.t:.6g}", f"{s.capacity:.6g}", f"{s.buffer_s:.6g}", s.quality, int(s.stalled)])
