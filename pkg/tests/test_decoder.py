"""
Tests for the camera-side decoding pipeline.
"""
import numpy as np
import pytest

from oobsim.core.decoder import (calibrate, capture_plan, check_sync, cluster_nodes,
                                 decode_session, detect_leds, extract_bits, pixel_delta,
                                 verdict_for)
from oobsim.core.encoder import apply_faults, build_schedule, grid_layout, render_schedule
from oobsim.core.errors import ClusterInvalid, DetectionIncomplete, DimensionMismatch
from oobsim.core.sas_crypto import BitString, SasValue
from oobsim.core.taxonomy import (DetectionConfig, FailureCause, FaultKind, FaultSpec,
                                  LayoutConfig, LedRole, NoiseModel, Verdict)


def random_sas(n: int, k: int = 20, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [SasValue(BitString.random(rng, k)) for _ in range(n)]


@pytest.fixture(scope="module")
def layout():
    return grid_layout(16, 2)


@pytest.fixture(scope="module")
def values():
    return random_sas(16)


@pytest.fixture(scope="module")
def frames(layout, values):
    """Noise-free frames of a 16-node, 20-bit batch."""
    return render_schedule(layout, build_schedule(values, layout))


@pytest.fixture(scope="module")
def calibrated(layout, frames):
    leds = detect_leds(pixel_delta(frames[1], frames[0]), DetectionConfig(), layout.led_count)
    return calibrate(leds, frames[1], frames[0])


class TestCapturePlan:
    """Tests for capture timing."""

    def test_initial_wait(self):
        """First capture 150 ms after Start Transmission, then every 250 ms."""
        plan = capture_plan(0, 250, 13)
        assert plan.timestamps[0] == 150
        assert plan.timestamps[1] - plan.timestamps[0] == 250
        assert len(plan.timestamps) == 13
        assert plan.initial_wait_ms == 150

    def test_offset_start(self):
        assert capture_plan(1000, 250, 3).timestamps == (1150, 1400, 1650)

    def test_needs_frames(self):
        with pytest.raises(ValueError):
            capture_plan(0, 250, 0)


class TestDetection:
    """Tests for LED detection and calibration."""

    def test_pixel_delta(self):
        off = np.zeros((4, 4, 3), dtype=np.uint8)
        on = off.copy()
        on[1, 2] = (30, 200, 10)
        delta = pixel_delta(off, on)
        assert delta[1, 2] == 200
        assert delta.sum() == 200

    def test_pixel_delta_shapes(self):
        with pytest.raises(DimensionMismatch):
            pixel_delta(np.zeros((4, 4, 3), np.uint8), np.zeros((4, 5, 3), np.uint8))

    def test_finds_every_led(self, layout, calibrated):
        """48 LEDs, each located at its true center."""
        assert len(calibrated) == 48
        truth = {led.center for node in layout.nodes for led in node.leds}
        found = {(int(led.center[0]), int(led.center[1])) for led in calibrated}
        assert found == truth
        assert all(led.length == 13 and led.width == 13 for led in calibrated)

    def test_roles(self, calibrated):
        roles = [led.role for led in calibrated]
        assert roles.count(LedRole.SYNC) == 16
        assert roles.count(LedRole.DATA) == 32

    def test_reference_colors(self, calibrated):
        sync = next(led for led in calibrated if led.role == LedRole.SYNC)
        assert sync.on_rgb == pytest.approx((255, 0, 0))
        assert sync.off_rgb == pytest.approx((20, 20, 20))

    def test_incomplete(self, frames):
        """Asking for more LEDs than exist fails at the floor threshold."""
        with pytest.raises(DetectionIncomplete) as info:
            detect_leds(pixel_delta(frames[1], frames[0]), DetectionConfig(), 49)
        assert info.value.found == 48
        assert info.value.expected == 49

    def test_no_expectation_returns_all(self, frames):
        assert len(detect_leds(pixel_delta(frames[1], frames[0]))) == 48


class TestClustering:
    """Tests for grouping LEDs into node displays."""

    def test_clusters_in_reading_order(self, layout, calibrated):
        clusters = cluster_nodes(calibrated, DetectionConfig().proximity, 2)
        assert len(clusters) == 16
        centers = [tuple(int(c) for c in cluster.center) for cluster in clusters]
        assert centers == [node.sync_led.center for node in layout.nodes]
        for cluster, node in zip(clusters, layout.nodes):
            assert [tuple(int(c) for c in led.center) for led in cluster.data_leds] == [
                led.center for led in node.data_leds
            ]

    def test_wide_proximity_merges_nodes(self, calibrated):
        with pytest.raises(ClusterInvalid):
            cluster_nodes(calibrated, 100.0, 2)

    def test_wrong_data_count(self, calibrated):
        with pytest.raises(ClusterInvalid):
            cluster_nodes(calibrated, DetectionConfig().proximity, 3)

    def test_roles_required(self, frames):
        leds = detect_leds(pixel_delta(frames[1], frames[0]), DetectionConfig(), 48)
        with pytest.raises(ValueError):
            cluster_nodes(leds, 27.0)


class TestDecodeSession:
    """Tests for the full decoding pipeline."""

    def test_roundtrip(self, frames, values):
        """Every node's SAS comes back exactly, with a clean sync pattern."""
        result = decode_session(frames, 48, DetectionConfig(), 20, 2)
        assert result.frame_count == 13
        assert [r.sas for r in result.readings] == [v.value for v in values]
        assert all(r.sync_ok for r in result.readings)

    def test_exhaustive_k8(self):
        """All 256 8-bit values on a single node survive encode and decode."""
        layout = grid_layout(1, 2, LayoutConfig(width=160, height=120))
        for value in range(256):
            schedule = build_schedule([SasValue(BitString(value, 8))], layout)
            result = decode_session(render_schedule(layout, schedule), 3, DetectionConfig(), 8, 2)
            assert result.readings[0].sas.value == value
            assert result.readings[0].sync_ok

    def test_noise_robustness(self, layout, values):
        """Sigma 8 noise changes nothing."""
        schedule = build_schedule(values, layout)
        noisy = render_schedule(layout, schedule, NoiseModel(sigma=8.0), seed=3)
        result = decode_session(noisy, 48, DetectionConfig(), 20, 2)
        assert [r.sas for r in result.readings] == [v.value for v in values]
        assert all(r.sync_ok for r in result.readings)

    def test_missing_final_frame(self, frames, values):
        """A truncated capture keeps the bits but fails the sync check."""
        result = decode_session(frames[:-1], 48, DetectionConfig(), 20, 2)
        assert [r.sas for r in result.readings] == [v.value for v in values]
        assert not any(r.sync_ok for r in result.readings)

    def test_premature_sync(self, layout, values):
        schedule = apply_faults(
            build_schedule(values, layout), [FaultSpec(kind=FaultKind.SYNC_PREMATURE, node=4, frame=2)]
        )
        result = decode_session(render_schedule(layout, schedule), 48, DetectionConfig(), 20, 2)
        assert [r.sync_ok for r in result.readings] == [i != 4 for i in range(16)]
        assert result.readings[4].sas == values[4].value

    def test_bit_flip(self, layout, values):
        schedule = apply_faults(
            build_schedule(values, layout), [FaultSpec(kind=FaultKind.SAS_BIT_FLIP, node=9, bits=[0, 19])]
        )
        result = decode_session(render_schedule(layout, schedule), 48, DetectionConfig(), 20, 2)
        assert result.readings[9].sas == values[9].value.flip(0, 19)
        assert result.readings[8].sas == values[8].value

    @pytest.mark.parametrize("N", [1, 2, 3, 4])
    @pytest.mark.parametrize("k", [8, 13, 20, 31, 32])
    def test_roundtrip_any_length(self, k, N):
        """Short and long SAS values, one to four data LEDs, come back exactly."""
        layout = grid_layout(4, N, LayoutConfig(width=320, height=240))
        expected = random_sas(4, k, seed=k * 10 + N)
        schedule = build_schedule(expected, layout)
        result = decode_session(render_schedule(layout, schedule), 4 * (N + 1), DetectionConfig(), k, N)
        assert result.frame_count == -(-k // N) + 3
        assert [r.sas for r in result.readings] == [v.value for v in expected]
        assert all(r.sync_ok for r in result.readings)

    def test_far_displays_decode(self, layout, values):
        """At twice the distance the LEDs are 7 px wide and 9 px apart."""
        far = layout.scaled(2.0)
        frames = render_schedule(far, build_schedule(values, far))
        result = decode_session(frames, 48, DetectionConfig(), 20, 2)
        assert len(result.clusters) == 16
        assert [r.sas for r in result.readings] == [v.value for v in values]

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_noise_below_margin_is_harmless(self, layout, values, calibrated, seed):
        """
        Bit errors stay at zero across a sweep of noise well under the ON/OFF
        decision margin of the calibrated data LEDs.
        """
        data = [led for led in calibrated if led.role == LedRole.DATA]
        margin = min(np.linalg.norm(np.subtract(led.on_rgb, led.off_rgb)) for led in data) / 2
        sweep = [0.0, 4.0, 8.0, 16.0, 24.0]
        assert max(sweep) < margin / 4

        schedule = build_schedule(values, layout)
        errors = []
        for sigma in sweep:
            frames = render_schedule(layout, schedule, NoiseModel(sigma=sigma), seed=seed)
            result = decode_session(frames, 48, DetectionConfig(), 20, 2)
            wrong = sum(
                bin(r.sas.value ^ v.value.value).count("1") for r, v in zip(result.readings, values)
            )
            errors.append(wrong + sum(not r.sync_ok for r in result.readings))
        assert errors == [0] * len(sweep)
    def test_calibration_frames_required(self, frames):
        with pytest.raises(DetectionIncomplete):
            decode_session(frames[:1], 48)

    def test_extract_bits(self, frames, values, calibrated):
        clusters = cluster_nodes(calibrated, DetectionConfig().proximity, 2)
        assert extract_bits(frames[2:12], clusters, 20) == [v.value for v in values]

    def test_missing_bitframes_read_as_zero(self, frames, values, calibrated):
        clusters = cluster_nodes(calibrated, DetectionConfig().proximity, 2)
        first = extract_bits(frames[2:3], clusters, 20)[0]
        assert first.bits[:2] == values[0].value.bits[:2]
        assert first.bits[2:] == (0,) * 18

    def test_check_sync_needs_complete_capture(self, layout, frames, calibrated):
        clusters = cluster_nodes(calibrated, DetectionConfig().proximity, 2)
        assert all(check_sync(frames, clusters, 13))
        assert not any(check_sync(frames[:5], clusters, 13))


class TestVerdict:
    """Tests for the per-node verdict table."""

    @pytest.mark.parametrize("sas_ok,sync_ok,verdict,cause", [
        (True, True, Verdict.PASSED, None),
        (False, True, Verdict.FAILED, FailureCause.SAS_MISMATCH),
        (True, False, Verdict.FAILED, FailureCause.SYNC_ERROR),
        (False, False, Verdict.FAILED, FailureCause.BOTH),
    ])
    def test_verdict_for(self, sas_ok, sync_ok, verdict, cause):
        assert verdict_for(sas_ok, sync_ok) == (verdict, cause)
