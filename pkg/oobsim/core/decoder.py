"""
Sink-side pipeline for the camera channel.

Capture timing, LED detection on the All-OFF/All-ON difference map, proximity
clustering into node displays, bit extraction against the calibrated ON/OFF
colors and validation of the sync LED pattern.
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from oobsim.core.encoder import frame_count as schedule_frame_count
from oobsim.core.errors import ClusterInvalid, DetectionIncomplete, DimensionMismatch
from oobsim.core.sas_crypto import BitString
from oobsim.core.taxonomy import DetectionConfig, FailureCause, LedRole, Verdict

Point = Tuple[float, float]
ColorMean = Tuple[float, float, float]


@dataclass(frozen=True)
class CapturePlan:
    """When the camera grabs each frame, relative to the virtual clock."""
    st_time_ms: int
    hold_time_ms: int
    timestamps: Tuple[float, ...]

    @property
    def initial_wait_ms(self) -> float:
        return self.hold_time_ms * 3 / 5


def capture_plan(st_time_ms: int, hold_time_ms: int, frame_count: int) -> CapturePlan:
    """First capture 0.6 hold times after Start Transmission, then one per hold time."""
    if frame_count < 1:
        raise ValueError("A capture plan needs at least one frame")
    wait = hold_time_ms * 3 / 5
    return CapturePlan(
        st_time_ms,
        hold_time_ms,
        tuple(st_time_ms + wait + i * hold_time_ms for i in range(frame_count)),
    )


def pixel_delta(all_off: np.ndarray, all_on: np.ndarray) -> np.ndarray:
    """Per-pixel max(dR, dG, dB) between the calibration frames."""
    if all_off.shape != all_on.shape:
        raise DimensionMismatch(f"Frame sizes differ: {all_off.shape} vs {all_on.shape}")
    diff = np.abs(all_on.astype(np.int16) - all_off.astype(np.int16))
    return diff.max(axis=2).astype(np.uint8)


@dataclass(frozen=True)
class DetectedLed:
    """An LED found in the difference map."""
    center: Point
    length: int
    width: int
    on_rgb: Optional[ColorMean] = None
    off_rgb: Optional[ColorMean] = None
    role: Optional[LedRole] = None

    def distance(self, point: Point) -> float:
        return float(np.hypot(self.center[0] - point[0], self.center[1] - point[1]))


@dataclass
class NodeCluster:
    """One node display as seen by the camera."""
    sync_led: DetectedLed
    data_leds: Tuple[DetectedLed, ...]
    binding: Optional[int] = None

    @property
    def center(self) -> Point:
        return self.sync_led.center

    @property
    def leds(self) -> Tuple[DetectedLed, ...]:
        return (self.sync_led,) + self.data_leds


@dataclass(frozen=True)
class ClusterReading:
    """What one cluster transmitted."""
    cluster: int
    center: Point
    sas: BitString
    sync_ok: bool


@dataclass
class DecodeResult:
    clusters: List[NodeCluster]
    readings: List[ClusterReading]
    frame_count: int
    leds: List[DetectedLed] = field(default_factory=list)


def verdict_for(sas_matched: bool, sync_ok: bool) -> Tuple[Verdict, Optional[FailureCause]]:
    """Passed iff the SAS matched and the sync pattern was right."""
    if sas_matched and sync_ok:
        return Verdict.PASSED, None
    if not sas_matched and not sync_ok:
        return Verdict.FAILED, FailureCause.BOTH
    if not sas_matched:
        return Verdict.FAILED, FailureCause.SAS_MISMATCH
    return Verdict.FAILED, FailureCause.SYNC_ERROR


def _row_runs(binary: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Maximal horizontal runs of 1s as (row, start, end) with exclusive end."""
    h, w = binary.shape
    padded = np.zeros((h, w + 2), dtype=np.int8)
    padded[:, 1:-1] = binary
    edges = np.diff(padded, axis=1)
    rows, starts = np.nonzero(edges == 1)
    _, ends = np.nonzero(edges == -1)
    return rows, starts, ends


def _extent(line: np.ndarray, at: int) -> Tuple[int, int]:
    lo = hi = at
    while lo > 0 and line[lo - 1]:
        lo -= 1
    while hi < len(line) - 1 and line[hi + 1]:
        hi += 1
    return lo, hi


def _measured_radius(led: DetectedLed) -> float:
    return (max(led.length, led.width) - 1) / 2


def _near_any(point: Point, accepted: List[DetectedLed], factor: float) -> bool:
    """Inside the exclusion zone of an accepted LED, sized by that LED's measured radius."""
    return any(led.distance(point) < factor * max(_measured_radius(led), 1.0) for led in accepted)


def _locate(binary: np.ndarray, y: int, x: int) -> DetectedLed:
    top, bottom = _extent(binary[:, x], y)
    row = (top + bottom) // 2
    left, right = _extent(binary[row], x)
    return DetectedLed(
        center=((left + right) / 2, (top + bottom) / 2),
        length=bottom - top + 1,
        width=right - left + 1,
    )


def _is_centered(binary: np.ndarray, center: Point, half: int) -> bool:
    x, y = int(round(center[0])), int(round(center[1]))
    window = binary[max(y - half, 0):y + half + 1, max(x - half, 0):x + half + 1]
    return window.size > 0 and window.mean() > 0.5


def detect_leds(
    delta: np.ndarray,
    config: Optional[DetectionConfig] = None,
    expected: Optional[int] = None,
) -> List[DetectedLed]:
    """
    Find LED centers by sweeping a threshold down over the difference map.

    Each pass binarizes the map at the current threshold and walks the row runs
    of at least `min_run` pixels. A run yields a new LED when its center is not
    within the exclusion zone of an accepted LED and a window of half its own
    measured radius is mostly set. Exclusion zones scale with the measured LED
    size, so displays seen from further away still separate. The sweep stops
    after the pass that reaches `expected`.
    """
    config = config or DetectionConfig()
    factor = config.exclusion_factor
    accepted: List[DetectedLed] = []

    threshold = config.start
    while threshold >= config.floor:
        binary = delta > threshold
        rows, starts, ends = _row_runs(binary)
        for y, start, end in zip(rows, starts, ends):
            if end - start < config.min_run:
                continue
            x_mid = int((start + end - 1) // 2)
            if _near_any((x_mid, int(y)), accepted, factor):
                continue
            led = _locate(binary, int(y), x_mid)
            if _near_any(led.center, accepted, factor):
                continue
            half = max(1, int(_measured_radius(led)) // 2)
            if _is_centered(binary, led.center, half):
                accepted.append(led)
        if expected is not None and len(accepted) >= expected:
            return accepted
        threshold -= config.step

    if expected is not None and len(accepted) < expected:
        raise DetectionIncomplete(len(accepted), expected)
    return accepted


def _disc_mean(img: np.ndarray, center: Point, radius: int) -> ColorMean:
    h, w = img.shape[:2]
    cx, cy = int(round(center[0])), int(round(center[1]))
    y_lo, y_hi = max(cy - radius, 0), min(cy + radius + 1, h)
    x_lo, x_hi = max(cx - radius, 0), min(cx + radius + 1, w)
    yy, xx = np.ogrid[y_lo:y_hi, x_lo:x_hi]
    mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    pixels = img[y_lo:y_hi, x_lo:x_hi][mask]
    if pixels.size == 0:
        return (0.0, 0.0, 0.0)
    mean = pixels.astype(np.float64).mean(axis=0)
    return (float(mean[0]), float(mean[1]), float(mean[2]))


def led_diameter(leds: Sequence[DetectedLed]) -> float:
    """Median measured LED diameter, or 0 without LEDs."""
    if not leds:
        return 0.0
    return float(np.median([max(led.length, led.width) for led in leds]))


def _sample_radius(led: DetectedLed) -> int:
    return max(1, min(led.length, led.width) // 2 - 1)


def sample_led(img: np.ndarray, led: DetectedLed) -> ColorMean:
    """Average color inside the LED's sampling disc."""
    return _disc_mean(img, led.center, _sample_radius(led))


def calibrate(
    leds: Sequence[DetectedLed],
    all_off: np.ndarray,
    all_on: np.ndarray,
    red_margin: int = 32,
) -> List[DetectedLed]:
    """Record ON/OFF reference colors and classify red-dominant LEDs as sync."""
    calibrated = []
    for led in leds:
        on = sample_led(all_on, led)
        role = LedRole.SYNC if on[0] - max(on[1], on[2]) >= red_margin else LedRole.DATA
        calibrated.append(replace(led, on_rgb=on, off_rgb=sample_led(all_off, led), role=role))
    return calibrated


def cluster_nodes(
    leds: Sequence[DetectedLed],
    proximity: float,
    data_leds: Optional[int] = None,
) -> List[NodeCluster]:
    """
    Group LEDs by single linkage at the proximity threshold.

    Clusters come out in reading order of their sync LEDs; data LEDs within a
    cluster are ordered left-to-right, then top-to-bottom.
    """
    if not leds:
        return []
    if any(led.role is None for led in leds):
        raise ValueError("LED roles must be assigned before clustering")

    points = np.array([led.center for led in leds], dtype=np.float64)
    adjacency = squareform(pdist(points)) < proximity
    count, labels = connected_components(csr_matrix(adjacency), directed=False)

    clusters = []
    for label in range(count):
        members = [led for led, lab in zip(leds, labels) if lab == label]
        syncs = [led for led in members if led.role == LedRole.SYNC]
        data = sorted(
            (led for led in members if led.role == LedRole.DATA),
            key=lambda led: (led.center[0], led.center[1]),
        )
        where = members[0].center
        if len(syncs) != 1:
            raise ClusterInvalid(f"Cluster near {where} has {len(syncs)} sync LEDs")
        if data_leds is not None and len(data) != data_leds:
            raise ClusterInvalid(
                f"Cluster near {where} has {len(data)} data LEDs, expected {data_leds}"
            )
        clusters.append(NodeCluster(syncs[0], tuple(data)))
    clusters.sort(key=lambda c: (c.center[1], c.center[0]))
    return clusters


def _is_on(img: np.ndarray, led: DetectedLed) -> bool:
    sample = np.array(sample_led(img, led))
    return bool(
        np.linalg.norm(sample - np.array(led.on_rgb)) < np.linalg.norm(sample - np.array(led.off_rgb))
    )


def extract_bits(
    bitframes: Sequence[np.ndarray], clusters: Sequence[NodeCluster], k: int
) -> List[BitString]:
    """
    Read every cluster's SAS from the bitframes.

    Data LED m in bitframe j carries bit j*N + m; pad positions are dropped and
    bits of missing frames read as 0.
    """
    results = []
    for cluster in clusters:
        N = len(cluster.data_leds)
        bits = [0] * k
        for j, frame in enumerate(bitframes):
            for m, led in enumerate(cluster.data_leds):
                position = j * N + m
                if position < k:
                    bits[position] = int(_is_on(frame, led))
        results.append(BitString.from_bits(bits))
    return results


def check_sync(
    frames: Sequence[np.ndarray], clusters: Sequence[NodeCluster], frame_count: int
) -> List[bool]:
    """
    Sync LED OFF in every bitframe, then ON with all data LEDs OFF in the last frame.

    `frames` is the whole capture, calibration frames included.
    """
    bitframes = list(frames[2:frame_count - 1])
    final = frames[frame_count - 1] if len(frames) >= frame_count else None
    complete = final is not None and len(bitframes) == frame_count - 3
    results = []
    for cluster in clusters:
        if not complete:
            results.append(False)
            continue
        quiet = not any(_is_on(frame, cluster.sync_led) for frame in bitframes)
        closing = _is_on(final, cluster.sync_led) and not any(
            _is_on(final, led) for led in cluster.data_leds
        )
        results.append(quiet and closing)
    return results


def decode_session(
    frames: Sequence[np.ndarray],
    expected_led_count: Optional[int],
    config: Optional[DetectionConfig] = None,
    k: int = 20,
    data_leds: int = 2,
) -> DecodeResult:
    """Run the full pipeline over an ordered capture."""
    config = config or DetectionConfig()
    if len(frames) < 2:
        raise DetectionIncomplete(0, expected_led_count, "Calibration frames are missing")
    all_on, all_off = frames[0], frames[1]
    leds = detect_leds(pixel_delta(all_off, all_on), config, expected_led_count)
    leds = calibrate(leds, all_off, all_on, config.red_margin)
    clusters = cluster_nodes(leds, config.proximity_for(led_diameter(leds)), data_leds)

    count = schedule_frame_count(k, data_leds)
    sas = extract_bits(list(frames[2:count - 1]), clusters, k)
    sync = check_sync(frames, clusters, count)
    readings = [
        ClusterReading(i, cluster.center, bits, ok)
        for i, (cluster, bits, ok) in enumerate(zip(clusters, sas, sync))
    ]
    return DecodeResult(clusters, readings, count, leds=leds)
