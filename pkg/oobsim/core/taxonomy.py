"""
Enumerations and configuration models for oobsim.
"""
from enum import Enum
from typing import Annotated, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Channel = Annotated[int, Field(ge=0, le=255)]
RGB = Tuple[Channel, Channel, Channel]

MIN_BATCH_SAS_BITS = 8
MAX_BATCH_SAS_BITS = 32


class SessionState(str, Enum):
    """Node-side (device A) session states, in protocol order."""
    IDLE = "idle"
    COMMITTED = "committed"  # Round 1 sent
    AWAITING_START = "awaiting-start"  # SAS computed, ready LED lit
    SAS_EMITTED = "sas-emitted"  # Blinking the SAS
    AWAITING_DECISION = "awaiting-decision"  # Inside the default-acceptance window
    ACCEPTED = "accepted"
    REJECTED = "rejected"


class SinkState(str, Enum):
    """Sink-side (device B) session states."""
    IDLE = "idle"
    CHALLENGED = "challenged"  # Round 2 sent
    OPENED = "opened"  # Commitment opened, expected SAS known
    FAILED = "failed"


class MatchStatus(str, Enum):
    """Bookkeeping of computed and extracted SAS values."""
    FREE = "free"
    USED = "used"
    MISMATCHED = "mismatched"


class SyncStatus(str, Enum):
    """Outcome of the sync LED pattern check."""
    UNKNOWN = "unknown"
    OK = "ok"
    ERROR = "error"


class FrameKind(str, Enum):
    """Kinds of frames in a transmission schedule."""
    ALL_ON = "all-on"
    ALL_OFF = "all-off"
    BIT = "bit"
    FINAL_SYNC = "final-sync"
    IDLE = "idle"  # Display outside the schedule (ready or dark)


class LedRole(str, Enum):
    """Role of a detected LED, from its calibrated ON color."""
    SYNC = "sync"
    DATA = "data"


class Verdict(str, Enum):
    """Sink verdict for one node display."""
    PASSED = "passed"
    FAILED = "failed"


class FailureCause(str, Enum):
    """Why a node failed."""
    SAS_MISMATCH = "sas-mismatch"
    SYNC_ERROR = "sync-error"
    BOTH = "both"
    PROTOCOL_ERROR = "protocol-error"  # Wireless phase never completed
    CAMERA_ERROR = "camera-adjustment-error"


class ProtocolFailure(str, Enum):
    """Why a session stopped during the wireless phase."""
    TIMEOUT = "timeout"
    COMMITMENT_MISMATCH = "commitment-mismatch"
    LENGTH_MISMATCH = "length-mismatch"
    MALFORMED_MESSAGE = "malformed-message"


class FaultKind(str, Enum):
    """Faults injected into the out-of-band channel."""
    SAS_BIT_FLIP = "sas-bit-flip"
    SYNC_MISSING = "sync-missing"
    SYNC_PREMATURE = "sync-premature"
    SYNC_DELAYED = "sync-delayed"
    DISTANCE_SCALE = "distance-scale"
    DISPLACEMENT = "displacement"
    CAMERA_UNPLUGGED = "camera-unplugged"


class AdversaryAction(str, Enum):
    """What the adversary does with a wireless message."""
    PASS = "pass"
    DROP = "drop"
    DELAY = "delay"
    REPLAY = "replay"
    SUBSTITUTE = "substitute"


class PayloadField(str, Enum):
    """Wireless payload fields an adversary may substitute."""
    PK_A = "pk_a"  # Round 1
    C_A = "c_a"  # Round 1
    PK_B = "pk_b"  # Round 2
    R_B = "r_b"  # Round 2
    D_A = "d_a"  # Round 3, committed nonce
    SALT = "salt"  # Round 3, commitment salt


FIELD_ROUND = {
    PayloadField.PK_A: 1,
    PayloadField.C_A: 1,
    PayloadField.PK_B: 2,
    PayloadField.R_B: 2,
    PayloadField.D_A: 3,
    PayloadField.SALT: 3,
}


class Direction(str, Enum):
    """Direction of a wireless message."""
    TO_SINK = "node-to-sink"
    TO_NODE = "sink-to-node"


class TranscriptEvent(str, Enum):
    """What the channel did with a message."""
    SENT = "sent"
    DELIVERED = "delivered"
    DROPPED = "dropped"


class AttackStrategy(str, Enum):
    """Substitution strategies for the attack experiment."""
    RANDOM_GUESS = "random-guess"
    EXHAUSTIVE = "exhaustive"


class Reflection(BaseModel):
    """A spot of reflected LED light on the table."""
    model_config = ConfigDict(extra="forbid")

    center: Tuple[int, int]
    radius: int = Field(..., ge=1)
    color: RGB


class NoiseModel(BaseModel):
    """
    Camera noise knobs applied to rendered frames.

    Gaussian noise is zero-mean per channel; the ambient offset is added to every
    pixel; reflections appear only while at least one LED is lit; displacement
    holds one (dx, dy) shift per frame index (missing entries mean no shift).
    """
    model_config = ConfigDict(extra="forbid")

    sigma: float = Field(default=0.0, ge=0.0, description="Per-channel Gaussian sigma")
    ambient_offset: Tuple[int, int, int] = Field(default=(0, 0, 0), description="RGB offset added everywhere")
    reflections: List[Reflection] = Field(default_factory=list)
    displacement: List[Tuple[int, int]] = Field(default_factory=list, description="Per-frame (dx, dy) in pixels")

    def offset_for(self, frame_index: int) -> Tuple[int, int]:
        """Displacement of the given frame."""
        if 0 <= frame_index < len(self.displacement):
            return self.displacement[frame_index]
        return (0, 0)


class LayoutConfig(BaseModel):
    """Geometry and colors of the node displays on the table."""
    model_config = ConfigDict(extra="forbid")

    width: int = Field(default=640, ge=16)
    height: int = Field(default=480, ge=16)
    radius: int = Field(default=6, ge=1, description="LED disc radius in pixels")
    intra_spacing: int = Field(default=18, description="Center distance between LEDs of one node")
    inter_spacing: int = Field(default=48, description="Center distance between neighbouring nodes")
    columns: Optional[int] = Field(default=None, ge=1, description="Node displays per grid row")
    sync_on: RGB = (255, 0, 0)
    data_on: RGB = (0, 255, 0)
    off: RGB = (20, 20, 20)
    ambient: RGB = (10, 10, 10)

    @model_validator(mode="after")
    def check_spacing(self) -> "LayoutConfig":
        """LED discs must not touch and nodes must sit further apart than LEDs."""
        if self.intra_spacing <= 2 * self.radius:
            raise ValueError("intra_spacing must exceed the LED diameter")
        if self.inter_spacing < self.intra_spacing:
            raise ValueError("inter_spacing must be at least intra_spacing")
        return self


class DetectionConfig(BaseModel):
    """Threshold sweep and clustering parameters of the LED detector."""
    model_config = ConfigDict(extra="forbid")

    start: int = Field(default=200, ge=0, le=255)
    step: int = Field(default=16, ge=1)
    floor: int = Field(default=48, ge=0, le=255)
    min_run: int = Field(default=3, ge=1)
    expected_radius: int = Field(default=6, ge=1, description="LED radius at the nominal camera distance")
    exclusion_factor: float = Field(default=2.0, gt=0.0, description="Exclusion zone in measured LED radii")
    proximity: float = Field(
        default=27.0, gt=0.0,
        description="Single-linkage distance between LEDs of one node, at the nominal LED size"
    )
    red_margin: int = Field(default=32, ge=0, description="Margin by which R must dominate for a sync LED")

    def proximity_for(self, diameter: float) -> float:
        """Linkage distance for LEDs measured `diameter` pixels across."""
        return self.proximity * diameter / (2 * self.expected_radius + 1)


class FaultSpec(BaseModel):
    """
    One fault applied to the out-of-band channel.

    Examples:
        FaultSpec(kind=FaultKind.SAS_BIT_FLIP, node=3, bits=[0, 7])
        FaultSpec(kind=FaultKind.SYNC_PREMATURE, node=5, frame=3)
        FaultSpec(kind=FaultKind.DISPLACEMENT, dx=9, dy=0, frame_range=(4, 8))
    """
    model_config = ConfigDict(extra="forbid")

    kind: FaultKind
    node: Optional[int] = Field(default=None, ge=0)
    bits: List[int] = Field(default_factory=list, description="SAS bit indices to flip")
    frame: Optional[int] = Field(default=None, ge=0, description="Bitframe index for premature sync")
    factor: float = Field(default=1.0, gt=0.0, description="Relative camera distance")
    dx: int = 0
    dy: int = 0
    frame_range: Optional[Tuple[int, int]] = Field(default=None, description="Inclusive frame range")

    @model_validator(mode="after")
    def check_fields(self) -> "FaultSpec":
        """Each node-level fault names its node and its own parameters."""
        node_faults = {
            FaultKind.SAS_BIT_FLIP,
            FaultKind.SYNC_MISSING,
            FaultKind.SYNC_PREMATURE,
            FaultKind.SYNC_DELAYED,
        }
        if self.kind in node_faults and self.node is None:
            raise ValueError(f"Fault '{self.kind.value}' requires a node")
        if self.kind == FaultKind.SAS_BIT_FLIP and not self.bits:
            raise ValueError("Fault 'sas-bit-flip' requires at least one bit index")
        if self.kind == FaultKind.SYNC_PREMATURE and self.frame is None:
            raise ValueError("Fault 'sync-premature' requires a bitframe index")
        if self.kind == FaultKind.CAMERA_UNPLUGGED and self.frame is None:
            raise ValueError("Fault 'camera-unplugged' requires a frame index")
        if self.frame_range is not None and self.frame_range[0] > self.frame_range[1]:
            raise ValueError("frame_range must be ordered")
        return self


class AdversaryRule(BaseModel):
    """
    One wireless-channel action of the adversary.

    A rule matches a session (or every session when `session` is None) and a
    protocol round. Substitution names the payload field to replace; replay
    either duplicates the message or, with `source_session`, swaps in the
    payload seen on another session.
    """
    model_config = ConfigDict(extra="forbid")

    session: Optional[int] = Field(default=None, ge=0)
    round: int = Field(..., ge=1, le=3)
    action: AdversaryAction
    delay_ms: int = Field(default=0, ge=0)
    field: Optional[PayloadField] = None
    source_session: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def check_action(self) -> "AdversaryRule":
        if self.action == AdversaryAction.SUBSTITUTE:
            if self.field is None:
                raise ValueError("substitute requires a payload field")
            if FIELD_ROUND[self.field] != self.round:
                raise ValueError(
                    f"Field '{self.field.value}' is not carried in round {self.round}"
                )
        if self.action == AdversaryAction.DELAY and self.delay_ms == 0:
            raise ValueError("delay requires delay_ms > 0")
        return self


class AdminPolicy(BaseModel):
    """Simulated administrator of the result screen."""
    model_config = ConfigDict(extra="forbid")

    misclick_probability: float = Field(
        default=0.0, ge=0.0, le=1.0,
        description="Chance of also turning off a passed node"
    )


class ScenarioConfig(BaseModel):
    """
    Everything needed to replay one initialization batch.

    Examples:
        # 16 nodes, 20-bit SAS, two data LEDs
        config = ScenarioConfig(n=16, k=20, data_leds=2)

        # A bit flip on node 3 and a late sync LED on node 5
        config = ScenarioConfig(faults=[
            {"kind": "sas-bit-flip", "node": 3, "bits": [4]},
            {"kind": "sync-delayed", "node": 5},
        ])
    """
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "n": 16,
                "k": 20,
                "data_leds": 2,
                "hold_time_ms": 250,
                "seed": 7,
                "noise": {"sigma": 8.0},
                "faults": [{"kind": "sas-bit-flip", "node": 3, "bits": [4]}],
            }
        },
    )

    n: int = Field(default=16, ge=1, description="Nodes in the batch")
    k: int = Field(default=20, description="SAS bits")
    data_leds: int = Field(default=2, ge=1, le=4, description="Data LEDs per node (N)")
    hold_time_ms: int = Field(default=250, ge=1)
    latency_ms: int = Field(default=5, ge=0, description="Wireless and Start-Transmission delay")
    delta_ms: int = Field(default=120_000, ge=0, description="Default-acceptance window")
    admin_delay_ms: int = Field(default=30_000, ge=0, description="Time the administrator needs to act")
    retries: int = Field(default=1, ge=0, description="Repetitions of the SAS transmission on camera errors")
    override_k: bool = Field(default=False, description="Allow k below the recommended length for n")
    seed: int = Field(default=0, ge=0)
    battery_joules: float = Field(default=30_780.0, gt=0.0)
    volts: float = Field(default=2.9, ge=0.0)
    amps: float = Field(default=0.0022, ge=0.0)
    layout: LayoutConfig = Field(default_factory=LayoutConfig)
    noise: NoiseModel = Field(default_factory=NoiseModel)
    detection: DetectionConfig = Field(default_factory=DetectionConfig)
    faults: List[FaultSpec] = Field(default_factory=list)
    adversary: List[AdversaryRule] = Field(default_factory=list)
    admin: AdminPolicy = Field(default_factory=AdminPolicy)

    @field_validator("k")
    @classmethod
    def validate_k(cls, v: int) -> int:
        """Batches run with 8 to 32 SAS bits."""
        if not MIN_BATCH_SAS_BITS <= v <= MAX_BATCH_SAS_BITS:
            raise ValueError(
                f"k must be between {MIN_BATCH_SAS_BITS} and {MAX_BATCH_SAS_BITS}"
            )
        return v

    @model_validator(mode="after")
    def check_sas_length(self) -> "ScenarioConfig":
        """k must reach 15 + log2(n) unless explicitly overridden."""
        from oobsim.core.sas_crypto import sas_length

        if not self.override_k and self.k < sas_length(self.n):
            raise ValueError(
                f"k={self.k} is below the recommended {sas_length(self.n)} bits for "
                f"n={self.n}; set override_k to force it"
            )
        for fault in self.faults:
            if fault.node is not None and fault.node >= self.n:
                raise ValueError(f"Fault targets node {fault.node} outside the batch")
            if fault.kind == FaultKind.SAS_BIT_FLIP and any(b < 0 or b >= self.k for b in fault.bits):
                raise ValueError("Bit flip index outside the SAS")
        for rule in self.adversary:
            if rule.session is not None and rule.session >= self.n:
                raise ValueError(f"Adversary rule targets session {rule.session} outside the batch")
        return self
