"""
LED displays, frame schedules and synthetic camera frames.

Every node shows its SAS on one red sync LED and N data LEDs. A batch transmits
an All-ON frame, an All-OFF frame, ceil(k/N) bitframes and a final sync frame,
each held for the hold time. Frames are rendered as numpy RGB arrays of shape
(height, width, 3) and dtype uint8.
"""
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from oobsim.core.errors import EmptyLayout, LengthMismatch, OutOfBounds
from oobsim.core.sas_crypto import SasValue
from oobsim.core.taxonomy import FaultKind, FaultSpec, FrameKind, LayoutConfig, NoiseModel

Color = Tuple[int, int, int]
Seed = Union[int, Sequence[int]]


@dataclass(frozen=True)
class LedSpec:
    """One LED disc in camera coordinates."""
    center: Tuple[int, int]
    radius: int
    on_color: Color
    off_color: Color

    def fits(self, width: int, height: int) -> bool:
        x, y = self.center
        r = self.radius
        return r <= x < width - r and r <= y < height - r

    def moved(self, dx: int, dy: int, scale: float = 1.0, origin: Tuple[float, float] = (0, 0)) -> "LedSpec":
        ox, oy = origin
        x = round(ox + (self.center[0] - ox) * scale) + dx
        y = round(oy + (self.center[1] - oy) * scale) + dy
        return replace(self, center=(x, y), radius=max(1, round(self.radius * scale)))


@dataclass(frozen=True)
class NodeDisplay:
    """The sync LED and ordered data LEDs of one sensor node."""
    sync_led: LedSpec
    data_leds: Tuple[LedSpec, ...]

    @property
    def leds(self) -> Tuple[LedSpec, ...]:
        return (self.sync_led,) + tuple(self.data_leds)


@dataclass(frozen=True)
class LedLayout:
    """All node displays in the camera view."""
    width: int
    height: int
    nodes: Tuple[NodeDisplay, ...]
    ambient: Color = (10, 10, 10)

    def __post_init__(self):
        counts = {len(node.data_leds) for node in self.nodes}
        if len(counts) > 1:
            raise ValueError("Every node must have the same number of data LEDs")
        if 0 in counts:
            raise ValueError("Every node needs at least one data LED")
        for node in self.nodes:
            r, g, b = node.sync_led.on_color
            if not (r > g and r > b):
                raise ValueError("Sync LED must be red-dominant")
            if any(led.on_color == node.sync_led.on_color for led in node.data_leds):
                raise ValueError("Data LEDs must differ in color from the sync LED")

    @property
    def data_leds(self) -> int:
        return len(self.nodes[0].data_leds) if self.nodes else 0

    @property
    def led_count(self) -> int:
        return sum(len(node.leds) for node in self.nodes)

    def check_bounds(self) -> None:
        for i, node in enumerate(self.nodes):
            for led in node.leds:
                if not led.fits(self.width, self.height):
                    raise OutOfBounds(
                        f"LED at {led.center} of node {i} leaves the "
                        f"{self.width}x{self.height} frame"
                    )

    def subset(self, indices: Sequence[int]) -> "LedLayout":
        return replace(self, nodes=tuple(self.nodes[i] for i in indices))

    def scaled(self, factor: float) -> "LedLayout":
        """The view from `factor` times the nominal camera distance."""
        origin = (self.width / 2, self.height / 2)
        scale = 1.0 / factor
        nodes = tuple(
            NodeDisplay(
                node.sync_led.moved(0, 0, scale, origin),
                tuple(led.moved(0, 0, scale, origin) for led in node.data_leds),
            )
            for node in self.nodes
        )
        return replace(self, nodes=nodes)

    def shifted(self, dx: int, dy: int) -> "LedLayout":
        """The view after the camera moved by (dx, dy) pixels."""
        if not dx and not dy:
            return self
        nodes = tuple(
            NodeDisplay(node.sync_led.moved(dx, dy), tuple(led.moved(dx, dy) for led in node.data_leds))
            for node in self.nodes
        )
        return replace(self, nodes=nodes)


def grid_layout(n: int, data_leds: int, config: Optional[LayoutConfig] = None) -> LedLayout:
    """
    Place n node displays on a centered grid.

    Within a node the LEDs sit in a row `intra_spacing` apart, sync LED first;
    neighbouring nodes are `inter_spacing` apart in both directions.
    """
    config = config or LayoutConfig()
    r = config.radius
    node_span = data_leds * config.intra_spacing
    pitch_x = node_span + config.inter_spacing
    usable = config.width - 4 * r

    fit = (usable - node_span) // pitch_x + 1 if usable >= node_span else 0
    if fit < 1:
        raise OutOfBounds(f"A node display does not fit in {config.width} px")
    columns = min(n, config.columns or fit, fit) if n else 1
    rows = math.ceil(n / columns) if n else 0
    if rows and (rows - 1) * config.inter_spacing + 4 * r > config.height:
        raise OutOfBounds(f"{n} node displays do not fit in {config.height} px")

    x0 = (config.width - ((columns - 1) * pitch_x + node_span)) // 2
    y0 = (config.height - (max(rows, 1) - 1) * config.inter_spacing) // 2

    def led(x: int, y: int, on: Color) -> LedSpec:
        return LedSpec((x, y), r, on, config.off)

    nodes = []
    for i in range(n):
        x = x0 + (i % columns) * pitch_x
        y = y0 + (i // columns) * config.inter_spacing
        nodes.append(NodeDisplay(
            led(x, y, config.sync_on),
            tuple(led(x + (m + 1) * config.intra_spacing, y, config.data_on) for m in range(data_leds)),
        ))
    layout = LedLayout(config.width, config.height, tuple(nodes), config.ambient)
    layout.check_bounds()
    return layout


@dataclass(frozen=True)
class FrameStates:
    """ON/OFF state of every LED during one frame."""
    kind: FrameKind
    sync: Tuple[bool, ...]
    data: Tuple[Tuple[bool, ...], ...]
    index: Optional[int] = None

    @classmethod
    def uniform(
        cls, kind: FrameKind, nodes: int, data_leds: int, sync_on: bool, data_on: bool,
        index: Optional[int] = None,
    ) -> "FrameStates":
        return cls(
            kind=kind,
            sync=(sync_on,) * nodes,
            data=((data_on,) * data_leds,) * nodes,
            index=index,
        )

    @classmethod
    def ready(cls, nodes: int, data_leds: int) -> "FrameStates":
        """Sync LED lit while waiting for Start Transmission."""
        return cls.uniform(FrameKind.IDLE, nodes, data_leds, True, False)

    @classmethod
    def dark(cls, nodes: int, data_leds: int) -> "FrameStates":
        return cls.uniform(FrameKind.IDLE, nodes, data_leds, False, False)

    def node(self, i: int) -> Tuple[bool, ...]:
        return (self.sync[i],) + self.data[i]

    @property
    def any_on(self) -> bool:
        return any(self.sync) or any(any(d) for d in self.data)


@dataclass(frozen=True)
class FrameSchedule:
    """Ordered frames of one batch transmission."""
    frames: Tuple[FrameStates, ...]
    hold_time_ms: int
    k: int
    data_leds: int

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def duration_ms(self) -> int:
        return self.frame_count * self.hold_time_ms

    @property
    def timestamps(self) -> List[int]:
        return [i * self.hold_time_ms for i in range(self.frame_count)]

    @property
    def bitframe_count(self) -> int:
        return self.frame_count - 3

    @property
    def frame_kinds(self) -> List[str]:
        return [f.kind.value for f in self.frames]

    def frame_at(self, offset_ms: float) -> Optional[int]:
        """Index of the frame shown `offset_ms` after the schedule starts."""
        if offset_ms < 0 or self.hold_time_ms <= 0:
            return None
        index = int(offset_ms // self.hold_time_ms)
        return index if index < self.frame_count else None


def frame_count(k: int, data_leds: int) -> int:
    return math.ceil(k / data_leds) + 3


def schedule_duration(k: int, data_leds: int, hold_time_ms: int) -> int:
    """(ceil(k/N) + 3) * HT."""
    if data_leds < 1:
        raise ValueError("At least one data LED is required")
    return frame_count(k, data_leds) * hold_time_ms


def build_schedule(
    sas_per_node: Sequence[SasValue], layout: LedLayout, hold_time_ms: int = 250
) -> FrameSchedule:
    """
    Lay every node's SAS out over the bitframes.

    In bitframe j, data LED m of a node shows SAS bit j*N + m. Positions past
    the last bit stay OFF.
    """
    if not layout.nodes:
        raise EmptyLayout("Cannot build a schedule without node displays")
    if len(sas_per_node) != len(layout.nodes):
        raise LengthMismatch(
            f"{len(sas_per_node)} SAS values for {len(layout.nodes)} node displays"
        )
    lengths = {sas.k for sas in sas_per_node}
    if len(lengths) != 1:
        raise LengthMismatch(f"SAS lengths differ within the batch: {sorted(lengths)}")
    k = lengths.pop()
    n = len(layout.nodes)
    N = layout.data_leds

    frames = [
        FrameStates.uniform(FrameKind.ALL_ON, n, N, True, True),
        FrameStates.uniform(FrameKind.ALL_OFF, n, N, False, False),
    ]
    for j in range(math.ceil(k / N)):
        data = tuple(
            tuple(bool(sas.value[j * N + m]) if j * N + m < k else False for m in range(N))
            for sas in sas_per_node
        )
        frames.append(FrameStates(FrameKind.BIT, (False,) * n, data, index=j))
    frames.append(FrameStates.uniform(FrameKind.FINAL_SYNC, n, N, True, False))
    return FrameSchedule(tuple(frames), hold_time_ms, k, N)


def _set_sync(frame: FrameStates, node: int, on: bool) -> FrameStates:
    sync = list(frame.sync)
    sync[node] = on
    return replace(frame, sync=tuple(sync))


def apply_faults(schedule: FrameSchedule, faults: Sequence[FaultSpec]) -> FrameSchedule:
    """
    Inject node misbehavior into a schedule.

    Fault node indices refer to schedule positions. Layout, capture and noise
    faults are ignored here.
    """
    frames = list(schedule.frames)
    n = len(frames[0].sync)
    N = schedule.data_leds
    last = len(frames) - 1
    for fault in faults:
        if fault.node is not None and fault.node >= n:
            raise ValueError(f"Fault targets display {fault.node} of {n}")
        if fault.kind == FaultKind.SAS_BIT_FLIP:
            for bit in fault.bits:
                if not 0 <= bit < schedule.k:
                    raise ValueError(f"Bit {bit} outside the {schedule.k}-bit SAS")
                position = 2 + bit // N
                frame = frames[position]
                data = [list(d) for d in frame.data]
                data[fault.node][bit % N] = not data[fault.node][bit % N]
                frames[position] = replace(frame, data=tuple(tuple(d) for d in data))
        elif fault.kind in (FaultKind.SYNC_MISSING, FaultKind.SYNC_DELAYED):
            # A delayed sync LED lights after the last captured frame
            frames[last] = _set_sync(frames[last], fault.node, False)
        elif fault.kind == FaultKind.SYNC_PREMATURE:
            if fault.frame >= schedule.bitframe_count:
                raise ValueError(f"Bitframe {fault.frame} outside the schedule")
            for position in range(2 + fault.frame, last):
                frames[position] = _set_sync(frames[position], fault.node, True)
    return replace(schedule, frames=tuple(frames))


def _draw_disc(img: np.ndarray, center: Tuple[int, int], radius: int, color: Color) -> None:
    h, w = img.shape[:2]
    cx, cy = center
    x_lo, x_hi = max(cx - radius, 0), min(cx + radius + 1, w)
    y_lo, y_hi = max(cy - radius, 0), min(cy + radius + 1, h)
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    yy, xx = np.ogrid[y_lo:y_hi, x_lo:x_hi]
    mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    img[y_lo:y_hi, x_lo:x_hi][mask] = color


def render_frame(
    layout: LedLayout,
    states: FrameStates,
    noise: Optional[NoiseModel] = None,
    seed: Seed = 0,
    frame_index: int = 0,
) -> np.ndarray:
    """Draw one camera frame; deterministic for a fixed seed."""
    noise = noise or NoiseModel()
    dx, dy = noise.offset_for(frame_index)
    view = layout.shifted(dx, dy)
    view.check_bounds()
    img = np.empty((layout.height, layout.width, 3), dtype=np.float64)
    img[:] = layout.ambient

    if states.any_on:
        for spot in noise.reflections:
            _draw_disc(img, (spot.center[0] + dx, spot.center[1] + dy), spot.radius, spot.color)
    for i, display in enumerate(view.nodes):
        for led, on in zip(display.leds, states.node(i)):
            _draw_disc(img, led.center, led.radius, led.on_color if on else led.off_color)

    img += noise.ambient_offset
    if noise.sigma > 0:
        img += np.random.default_rng(seed).normal(0.0, noise.sigma, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_schedule(
    layout: LedLayout,
    schedule: FrameSchedule,
    noise: Optional[NoiseModel] = None,
    seed: int = 0,
) -> List[np.ndarray]:
    """One image per frame, each with its own seed-derived noise."""
    return [
        render_frame(layout, states, noise, [seed, i], i)
        for i, states in enumerate(schedule.frames)
    ]
