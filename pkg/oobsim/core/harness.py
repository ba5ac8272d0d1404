"""
End-to-end initialization batches.

A scenario runs the wireless phase, shows every ready node's SAS on its LEDs,
captures and decodes the frames, matches the extracted values against the
sink's computed list and lets a simulated administrator turn off the failed
nodes. Everything runs on a virtual clock and is deterministic for a seed.
"""
import io
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw
from pydantic import BaseModel, Field
from rich.console import Console
from rich.table import Table
from scipy.stats import binomtest

from oobsim.core.decoder import DecodeResult, capture_plan, decode_session, verdict_for
from oobsim.core.encoder import (FrameSchedule, FrameStates, LedLayout, NodeDisplay,
                                 apply_faults, build_schedule, frame_count,
                                 grid_layout, render_frame, schedule_duration)
from oobsim.core.errors import (BatchAborted, CaptureAborted, ClusterInvalid,
                                ConfigError, DetectionIncomplete, KeyUnwrapError,
                                LengthMismatch, OutOfBounds)
from oobsim.core.framestore import ScheduleSidecar, write_frames, write_ppm
from oobsim.core.protocol import (AdversaryPolicy, BatchRun, NodeSession,
                                  finalize_session, honest_pair, node_end_transmission,
                                  node_round1, node_round3, node_start_transmission,
                                  run_batch, session_rng, sink_expected_sas,
                                  sink_link_key, sink_round2)
from oobsim.core.sas_crypto import (KEY_BYTES, MAX_HASH_BITS, NONCE_BYTES, BitString,
                                    SasValue, keygen, unwrap_keying_material,
                                    wrap_keying_material)
from oobsim.core.taxonomy import (AttackStrategy, FailureCause, FaultKind,
                                  MatchStatus, ProtocolFailure, ScenarioConfig,
                                  SessionState, SinkState, SyncStatus, Verdict)
from oobsim.core.transcript import ChallengePayload, WirelessMessage, write_transcript

console = Console(stderr=True)

REPORT_VERSION = 1
ADMIN_STREAM = 4
ATTACK_KEY_STREAM = 5
MAX_EXHAUSTIVE_BITS = 16
PASS_COLOR = (0, 255, 0)
FAIL_COLOR = (255, 0, 0)
CAMERA_FAILURES = (DetectionIncomplete, ClusterInvalid, OutOfBounds)


@dataclass
class MatchOutcome:
    """Statuses of extracted and computed SAS values after matching."""
    extracted: List[MatchStatus]
    computed: List[MatchStatus]
    bindings: List[Optional[int]]


def match_sas(
    extracted: Sequence[Union[BitString, SasValue]],
    computed: Sequence[Union[BitString, SasValue]],
) -> MatchOutcome:
    """
    Mark computed values Used as extracted values claim them.

    Identical extractions are all Mismatched, together with every computed
    value equal to them. A unique extraction claims the first Free computed
    value it equals; without one it is Mismatched.
    """
    ext = [v.value if isinstance(v, SasValue) else v for v in extracted]
    comp = [v.value if isinstance(v, SasValue) else v for v in computed]
    lengths = {v.length for v in ext + comp}
    if len(lengths) > 1:
        raise LengthMismatch(f"SAS lengths differ: {sorted(lengths)}")

    counts = Counter(ext)
    duplicates = {v for v, c in counts.items() if c > 1}
    comp_status = [
        MatchStatus.MISMATCHED if v in duplicates else MatchStatus.FREE for v in comp
    ]
    ext_status = []
    bindings: List[Optional[int]] = []
    for value in ext:
        if value in duplicates:
            ext_status.append(MatchStatus.MISMATCHED)
            bindings.append(None)
            continue
        slot = next(
            (j for j, v in enumerate(comp) if v == value and comp_status[j] == MatchStatus.FREE),
            None,
        )
        if slot is None:
            ext_status.append(MatchStatus.MISMATCHED)
            bindings.append(None)
        else:
            comp_status[slot] = MatchStatus.USED
            ext_status.append(MatchStatus.USED)
            bindings.append(slot)
    return MatchOutcome(ext_status, comp_status, bindings)


class NodeReport(BaseModel):
    """Outcome for one physical node."""
    node: int
    session_state: SinkState = Field(..., description="Sink side after the wireless phase")
    extracted_sas: Optional[str] = None
    status: Optional[MatchStatus] = None
    bound_session: Optional[int] = None
    sync_ok: Optional[bool] = None
    verdict: Verdict
    cause: Optional[FailureCause] = None
    protocol_failure: Optional[ProtocolFailure] = None
    node_outcome: SessionState
    key_delivered: bool = False


class Tallies(BaseModel):
    """Error counts by category."""
    passed: int = 0
    failed: int = 0
    sas_mismatch: int = 0
    sync_error: int = 0
    both: int = 0
    protocol_error: int = 0
    camera_adjustment_error: int = 0
    camera_attempts_failed: int = Field(0, description="Failed capture attempts")
    sink_misreads: int = Field(0, description="Failures on nodes with nothing injected")
    user_errors: int = Field(0, description="Passed nodes turned off by the administrator")
    keys_delivered: int = 0


class BatchReport(BaseModel):
    """Result of one initialization batch."""
    version: int = REPORT_VERSION
    status: str = "completed"
    config: dict = Field(default_factory=dict)
    frame_count: int = 0
    duration_ms: int = 0
    clock_ms: int = 0
    attempts: int = 0
    per_node: List[NodeReport] = Field(default_factory=list)
    tallies: Tallies = Field(default_factory=Tallies)

    def verdicts(self) -> List[Verdict]:
        return [entry.verdict for entry in self.per_node]


@dataclass
class ScenarioRun:
    """Everything a scenario produced, for inspection and for writing artifacts."""
    config: ScenarioConfig
    batch: BatchRun
    layout: LedLayout
    view: Optional[LedLayout]
    schedule: Optional[FrameSchedule]
    frames: List[np.ndarray]
    decoded: Optional[DecodeResult]
    report: BatchReport
    wrapped_keys: Dict[int, bytes] = field(default_factory=dict)


def _distance_factor(config: ScenarioConfig) -> float:
    factor = 1.0
    for fault in config.faults:
        if fault.kind == FaultKind.DISTANCE_SCALE:
            factor *= fault.factor
    return factor


def _unplugged_after(config: ScenarioConfig) -> Optional[int]:
    frames = [f.frame for f in config.faults if f.kind == FaultKind.CAMERA_UNPLUGGED]
    return min(frames) if frames else None


def _displaced_noise(config: ScenarioConfig, count: int):
    shifts = [(0, 0)] * count
    for fault in config.faults:
        if fault.kind != FaultKind.DISPLACEMENT:
            continue
        lo, hi = fault.frame_range or (0, count - 1)
        for i in range(max(lo, 0), min(hi, count - 1) + 1):
            shifts[i] = (shifts[i][0] + fault.dx, shifts[i][1] + fault.dy)
    if not any(dx or dy for dx, dy in shifts):
        return config.noise
    base = list(config.noise.displacement) + [(0, 0)] * count
    merged = [(base[i][0] + dx, base[i][1] + dy) for i, (dx, dy) in enumerate(shifts)]
    return config.noise.model_copy(update={"displacement": merged})


def _nearest_display(view: LedLayout, center: Tuple[float, float]) -> int:
    distances = [
        math.hypot(node.sync_led.center[0] - center[0], node.sync_led.center[1] - center[1])
        for node in view.nodes
    ]
    return int(np.argmin(distances))


class Scenario:
    """One initialization batch: wireless phase, SAS display and decisions."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.hold = config.hold_time_ms
        try:
            self.layout = grid_layout(config.n, config.data_leds, config.layout)
        except OutOfBounds as e:
            raise ConfigError(str(e)) from e

    def capture(
        self,
        schedule: FrameSchedule,
        view: LedLayout,
        st_time: int,
        attempt: int,
    ) -> List[np.ndarray]:
        """Grab one frame per capture timestamp, showing whatever the LEDs display then."""
        cfg = self.config
        plan = capture_plan(st_time, self.hold, schedule.frame_count)
        start = st_time + cfg.latency_ms
        noise = _displaced_noise(cfg, schedule.frame_count)
        unplugged = _unplugged_after(cfg)
        nodes, N = len(view.nodes), view.data_leds

        frames = []
        for i, t in enumerate(plan.timestamps):
            if unplugged is not None and i > unplugged:
                raise CaptureAborted(f"Camera stopped delivering frames after frame {unplugged}")
            shown = schedule.frame_at(t - start)
            if shown is not None:
                states = schedule.frames[shown]
            elif t < start:
                states = FrameStates.ready(nodes, N)
            else:
                states = FrameStates.dark(nodes, N)
            frames.append(render_frame(view, states, noise, [cfg.seed, attempt, i], i))
        return frames

    def run(self) -> ScenarioRun:
        cfg = self.config
        policy = AdversaryPolicy(cfg.adversary, cfg.seed)
        batch = run_batch(cfg.n, cfg.k, policy, cfg.seed, self.hold, cfg.latency_ms)
        ready = batch.ready()
        computed = batch.computed()
        N = cfg.data_leds
        duration = schedule_duration(cfg.k, N, self.hold)
        count = frame_count(cfg.k, N)

        view = schedule = decoded = None
        frames: List[np.ndarray] = []
        attempts = camera_errors = 0
        clock = batch.clock
        if ready:
            view = self.layout.subset(ready)
            factor = _distance_factor(cfg)
            if factor != 1.0:
                view = view.scaled(factor)
            position = {node: pos for pos, node in enumerate(ready)}
            faults = [
                f.model_copy(update={"node": position[f.node]})
                for f in cfg.faults
                if f.node is not None and f.node in position
            ]
            schedule = apply_faults(
                build_schedule([batch.nodes[i].sas for i in ready], view, self.hold), faults
            )
            for i in ready:
                node_start_transmission(batch.nodes[i])

            for attempt in range(cfg.retries + 1):
                attempts += 1
                st_time = clock
                clock = st_time + cfg.latency_ms + duration
                try:
                    frames = self.capture(schedule, view, st_time, attempt)
                    decoded = decode_session(
                        frames, (N + 1) * len(ready), cfg.detection, cfg.k, N
                    )
                    break
                except CaptureAborted as e:
                    console.print(f"[red]Batch aborted:[/] {e}")
                    raise BatchAborted(str(e)) from e
                except CAMERA_FAILURES as e:
                    camera_errors += 1
                    decoded = None
                    console.print(f"[yellow]Camera adjustment error (attempt {attempt + 1}):[/] {e}")
                    clock += self.hold

            for i in ready:
                node_end_transmission(batch.nodes[i], clock, cfg.delta_ms)

        per_node = self._judge(batch, ready, computed, view, decoded)
        tallies = Tallies(camera_attempts_failed=camera_errors)
        self._decide(batch, per_node, clock, tallies)
        wrapped = self._deliver_keys(batch, per_node, tallies)
        self._tally(batch, policy, per_node, tallies)

        end = clock + max(cfg.delta_ms, cfg.admin_delay_ms)
        report = BatchReport(
            config=cfg.model_dump(mode="json"),
            frame_count=count,
            duration_ms=duration,
            clock_ms=end,
            attempts=attempts,
            per_node=per_node,
            tallies=tallies,
        )
        return ScenarioRun(cfg, batch, self.layout, view, schedule, frames, decoded, report, wrapped)

    def _judge(self, batch, ready, computed, view, decoded) -> List[NodeReport]:
        outcome = None
        by_node: Dict[int, List[int]] = {}
        if decoded is not None:
            outcome = match_sas([r.sas for r in decoded.readings], [s.expected_sas for s in computed])
            for sink, status in zip(computed, outcome.computed):
                if status != MatchStatus.FREE:
                    sink.mark(status)
            for reading in decoded.readings:
                node = ready[_nearest_display(view, reading.center)]
                by_node.setdefault(node, []).append(reading.cluster)
                decoded.clusters[reading.cluster].binding = outcome.bindings[reading.cluster]

        reports = []
        for i, (node, sink) in enumerate(zip(batch.nodes, batch.sinks)):
            entry = dict(
                node=i,
                session_state=sink.state,
                protocol_failure=node.failure or sink.failure,
                node_outcome=node.state,
            )
            if i not in ready:
                entry.update(verdict=Verdict.FAILED, cause=FailureCause.PROTOCOL_ERROR)
            elif decoded is None:
                entry.update(verdict=Verdict.FAILED, cause=FailureCause.CAMERA_ERROR)
            elif len(by_node.get(i, [])) != 1:
                entry.update(verdict=Verdict.FAILED, cause=FailureCause.SAS_MISMATCH)
            else:
                reading = decoded.readings[by_node[i][0]]
                status = outcome.extracted[reading.cluster]
                slot = outcome.bindings[reading.cluster]
                verdict, cause = verdict_for(status == MatchStatus.USED, reading.sync_ok)
                if slot is not None:
                    computed[slot].sync_status = SyncStatus.OK if reading.sync_ok else SyncStatus.ERROR
                entry.update(
                    extracted_sas=reading.sas.to_hex(),
                    status=status,
                    bound_session=computed[slot].session_id if slot is not None else None,
                    sync_ok=reading.sync_ok,
                    verdict=verdict,
                    cause=cause,
                )
            reports.append(NodeReport(**entry))
        return reports

    def _decide(self, batch: BatchRun, per_node: List[NodeReport], end: int, tallies: Tallies) -> None:
        """The administrator turns off the failed nodes (and, by mistake, some passed ones)."""
        cfg = self.config
        turnoff = {r.node for r in per_node if r.verdict == Verdict.FAILED}
        if cfg.admin.misclick_probability > 0:
            rng = session_rng(cfg.seed, 0, ADMIN_STREAM)
            for r in per_node:
                if r.verdict == Verdict.PASSED and rng.random() < cfg.admin.misclick_probability:
                    turnoff.add(r.node)
                    tallies.user_errors += 1
        turnoff_at = end + cfg.admin_delay_ms

        for r in per_node:
            node = batch.nodes[r.node]
            if node.state != SessionState.AWAITING_DECISION:
                continue
            if r.node in turnoff:
                # A turn-off after the deadline comes too late and the node accepts
                finalize_session(node, True, turnoff_at)
            else:
                finalize_session(node, False, node.deadline)
            r.node_outcome = node.state

    def _deliver_keys(self, batch: BatchRun, per_node: List[NodeReport], tallies: Tallies) -> Dict[int, bytes]:
        """Wrap bootstrap keying material for every session bound to a passed display."""
        wrapped = {}
        for r in per_node:
            if r.verdict != Verdict.PASSED or r.bound_session is None:
                continue
            sink = batch.sinks[r.bound_session]
            material = sink.rng.bytes(KEY_BYTES)
            nonce = sink.rng.bytes(NONCE_BYTES)
            aad = struct.pack(">H", sink.session_id)
            wrapped[sink.session_id] = wrap_keying_material(sink_link_key(sink), material, nonce, aad)

        for r in per_node:
            node = batch.nodes[r.node]
            blob = wrapped.get(node.session_id)
            if blob is None or node.state != SessionState.ACCEPTED:
                continue
            try:
                unwrap_keying_material(node.link_key, blob, struct.pack(">H", node.session_id))
            except KeyUnwrapError:
                console.print(f"[red]Node {r.node}:[/] keying material failed authentication")
                continue
            r.key_delivered = True
            tallies.keys_delivered += 1
        return wrapped

    def _tally(self, batch, policy: AdversaryPolicy, per_node: List[NodeReport], tallies: Tallies) -> None:
        faulted = {f.node for f in self.config.faults if f.node is not None}
        for r in per_node:
            if r.verdict == Verdict.PASSED:
                tallies.passed += 1
                continue
            tallies.failed += 1
            name = r.cause.value.replace("-", "_")
            setattr(tallies, name, getattr(tallies, name) + 1)
            if (
                r.cause in (FailureCause.SAS_MISMATCH, FailureCause.SYNC_ERROR, FailureCause.BOTH)
                and r.node not in faulted
                and not policy.targets(r.node)
            ):
                tallies.sink_misreads += 1


def simulate(config: ScenarioConfig) -> ScenarioRun:
    """Run one scenario and keep every intermediate artifact."""
    return Scenario(config).run()


def run_scenario(config: ScenarioConfig) -> BatchReport:
    """Run one scenario and return its report."""
    return simulate(config).report


def node_bounds(display: NodeDisplay, margin: int = 4) -> Tuple[int, int, int, int]:
    """Bounding box (x0, y0, x1, y1) around a node display."""
    xs = [led.center[0] for led in display.leds]
    ys = [led.center[1] for led in display.leds]
    r = max(led.radius for led in display.leds) + margin
    return min(xs) - r, min(ys) - r, max(xs) + r, max(ys) + r


def report_table(report: BatchReport) -> Table:
    table = Table(title="Batch report")
    for column in ("Node", "SAS", "Status", "Sync", "Verdict", "Cause", "Outcome", "Key"):
        table.add_column(column)
    for r in report.per_node:
        table.add_row(
            str(r.node),
            r.extracted_sas or "-",
            r.status.value if r.status else "-",
            "-" if r.sync_ok is None else ("ok" if r.sync_ok else "error"),
            r.verdict.value,
            r.cause.value if r.cause else "",
            r.node_outcome.value,
            "yes" if r.key_delivered else "no",
        )
    return table


def render_report(report: BatchReport, layout: LedLayout) -> Tuple[np.ndarray, str]:
    """
    Overlay for the administrator plus a text table.

    Passed displays get a green rectangle and failed ones a red cross, drawn on
    the layout with every LED off.
    """
    if layout.nodes:
        base = render_frame(layout, FrameStates.dark(len(layout.nodes), layout.data_leds))
    else:
        base = np.empty((layout.height, layout.width, 3), dtype=np.uint8)
        base[:] = layout.ambient
    image = Image.fromarray(base)
    draw = ImageDraw.Draw(image)
    for r in report.per_node:
        if r.node >= len(layout.nodes):
            continue
        x0, y0, x1, y1 = node_bounds(layout.nodes[r.node])
        if r.verdict == Verdict.PASSED:
            draw.rectangle((x0, y0, x1, y1), outline=PASS_COLOR, width=2)
        else:
            draw.line((x0, y0, x1, y1), fill=FAIL_COLOR, width=2)
            draw.line((x0, y1, x1, y0), fill=FAIL_COLOR, width=2)

    buffer = Console(file=io.StringIO(), width=120, color_system=None)
    buffer.print(report_table(report))
    return np.asarray(image, dtype=np.uint8).copy(), buffer.file.getvalue()


def write_artifacts(run: ScenarioRun, out: Path) -> Dict[str, Path]:
    """Write frames, sidecar, report, overlay, transcript and text table under `out`."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if run.schedule is not None:
        sidecar = ScheduleSidecar(
            hold_time_ms=run.schedule.hold_time_ms,
            frame_kinds=run.schedule.frame_kinds,
            k=run.schedule.k,
            N=run.schedule.data_leds,
            expected_leds=run.view.led_count,
        )
        write_frames(out / "frames", run.frames, sidecar)
        paths["frames"] = out / "frames"

    overlay, table = render_report(run.report, run.layout)
    paths["report"] = out / "report.json"
    paths["report"].write_text(run.report.model_dump_json(indent=2) + "\n")
    paths["overlay"] = out / "overlay.ppm"
    write_ppm(paths["overlay"], overlay)
    paths["transcript"] = out / "transcript.bin"
    write_transcript(paths["transcript"], run.batch.transcript)
    paths["table"] = out / "report.txt"
    paths["table"].write_text(table)
    return paths


@dataclass(frozen=True)
class PowerEstimate:
    joules: float
    battery_fraction: float

    @property
    def battery_percent(self) -> float:
        return self.battery_fraction * 100


def power_estimate(
    volts: float,
    amps: float,
    seconds: float,
    led_count: int = 3,
    battery_joules: float = 30_780.0,
) -> PowerEstimate:
    """LED energy for one transmission, E = leds * V * I * t, and its share of the battery."""
    if min(volts, amps, seconds, led_count) < 0:
        raise ValueError("Power inputs must be non-negative")
    if battery_joules <= 0:
        raise ValueError("Battery energy must be positive")
    joules = led_count * volts * amps * seconds
    return PowerEstimate(joules, joules / battery_joules)


def timing_estimate(k: int, data_leds: int, hold_time_ms: int = 250) -> int:
    """Transmission time of one batch in milliseconds."""
    return schedule_duration(k, data_leds, hold_time_ms)


@dataclass(frozen=True)
class AttackResult:
    """Empirical success rate of a wireless-channel adversary."""
    n: int
    k: int
    strategy: AttackStrategy
    trials: int
    successes: int
    ci_low: float
    ci_high: float

    @property
    def rate(self) -> float:
        return self.successes / self.trials

    @property
    def bound(self) -> float:
        return self.n * 2.0 ** -self.k

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "strategy": self.strategy.value,
            "trials": self.trials,
            "successes": self.successes,
            "rate": self.rate,
            "ci99": [self.ci_low, self.ci_high],
            "bound": self.bound,
        }


def _attack_trial(
    rng: np.random.Generator,
    node_keys: Sequence,
    sink_keys,
    adversary_keys,
    k: int,
    guess: Optional[int] = None,
) -> bool:
    """
    One batch with a man-in-the-middle on a single random session.

    The adversary runs the protocol with the sink under its own key and sends the
    node a forged (pk_B, R_B). It succeeds when the sink marks the target's
    computed SAS Used.
    """
    n = len(node_keys)
    target = int(rng.integers(n))
    extracted = []
    sinks = []
    for i in range(n):
        node, sink = honest_pair(i, node_keys[i], sink_keys, k, rng)
        commitment = node_round1(node)
        if i != target:
            opening, sas = node_round3(node, sink_round2(sink, commitment))
            sink_expected_sas(sink, opening)
        else:
            impostor = NodeSession(i, adversary_keys, k, rng)
            challenge = sink_round2(sink, node_round1(impostor))
            forged_rb = BitString.random(rng, k)
            if guess is not None:
                forged_rb = BitString(guess, k)
            forged = WirelessMessage(i, 2, ChallengePayload(adversary_keys.public_key, forged_rb))
            _, sas = node_round3(node, forged)
            impostor_opening, _ = node_round3(impostor, challenge)
            sink_expected_sas(sink, impostor_opening)
        extracted.append(sas)
        sinks.append(sink)
    outcome = match_sas(extracted, [s.expected_sas for s in sinks])
    return outcome.computed[target] == MatchStatus.USED


def attack_experiment(
    n: int,
    k: int,
    trials: int,
    strategy: AttackStrategy = AttackStrategy.RANDOM_GUESS,
    seed: int = 0,
) -> AttackResult:
    """
    Estimate how often a substitution adversary gets a forged session accepted.

    `random-guess` draws a fresh forged R_B per trial. `exhaustive` groups trials
    in blocks of 2^k that share all other randomness and enumerates R_B within
    the block, so the trial count is rounded up to whole blocks. The camera
    channel is lossless here.
    """
    strategy = AttackStrategy(strategy)
    if n < 1:
        raise ConfigError("n must be at least 1")
    if not 1 <= k <= MAX_HASH_BITS:
        raise ConfigError(f"k must be between 1 and {MAX_HASH_BITS}, got {k}")
    if trials < 1:
        raise ConfigError("At least one trial is required")
    if strategy == AttackStrategy.EXHAUSTIVE and k > MAX_EXHAUSTIVE_BITS:
        raise ConfigError(f"Exhaustive search is limited to k <= {MAX_EXHAUSTIVE_BITS}")

    key_rng = session_rng(seed, 0, ATTACK_KEY_STREAM)
    node_keys = [keygen(key_rng.bytes(KEY_BYTES)) for _ in range(n)]
    sink_keys = keygen(key_rng.bytes(KEY_BYTES))
    adversary_keys = keygen(key_rng.bytes(KEY_BYTES))

    if strategy == AttackStrategy.EXHAUSTIVE:
        block = 1 << k
        trials = math.ceil(trials / block) * block
    successes = 0
    for trial in range(trials):
        if strategy == AttackStrategy.EXHAUSTIVE:
            rng = np.random.default_rng([seed, trial // block])
            guess = trial % block
        else:
            rng = np.random.default_rng([seed, trial])
            guess = None
        successes += _attack_trial(rng, node_keys, sink_keys, adversary_keys, k, guess)

    ci = binomtest(successes, trials).proportion_ci(confidence_level=0.99)
    return AttackResult(n, k, strategy, trials, successes, float(ci.low), float(ci.high))
