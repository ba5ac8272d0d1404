"""
oobsim - Secure initialization of sensor node batches over an LED-to-camera channel.

This package simulates the many-to-one SAS pairing of n sensor nodes with a
camera-equipped sink: a three-round commitment protocol over an insecure
wireless channel, followed by every node blinking its short authenticated
string on its LEDs while the sink films and decodes the whole batch at once.

Key Components:
    - Scenario / simulate: Run one batch end to end on a virtual clock
    - run_batch: The wireless phase of a batch, with an optional adversary
    - build_schedule / render_frame: LED frames and the synthetic camera view
    - decode_session: Detect, calibrate, cluster and read the node displays
    - attack_experiment: Monte Carlo success rate of a wireless adversary

Type System:
    - ScenarioConfig: Everything needed to replay a batch
    - FaultSpec: Faults injected into the out-of-band channel
    - AdversaryRule: Actions of the wireless adversary
    - Verdict / FailureCause: What the sink decided for each node

Example:
    >>> from oobsim import ScenarioConfig, run_scenario
    >>> report = run_scenario(ScenarioConfig(n=16, k=20, seed=7))
    >>> report.tallies.passed
    16
"""

from typing import List

from oobsim.core.decoder import DecodeResult, decode_session
from oobsim.core.encoder import FrameSchedule, LedLayout, build_schedule, grid_layout, render_frame
from oobsim.core.errors import (BatchAborted, ConfigError, DetectionIncomplete,
                                OobsimError)
from oobsim.core.harness import (AttackResult, BatchReport, Scenario, ScenarioRun,
                                 attack_experiment, match_sas, power_estimate,
                                 run_scenario, simulate, timing_estimate)
from oobsim.core.protocol import AdversaryPolicy, BatchRun, run_batch
from oobsim.core.sas_crypto import BitString, SasValue, compute_sas, sas_length, uhash
from oobsim.core.taxonomy import (AdversaryAction, AdversaryRule, AttackStrategy,
                                  FailureCause, FaultKind, FaultSpec, NoiseModel,
                                  ScenarioConfig, Verdict)

__version__ = "0.1.0"

__all__: List[str] = [
    # Batches
    "Scenario",
    "ScenarioRun",
    "BatchReport",
    "simulate",
    "run_scenario",
    "run_batch",
    "BatchRun",
    "AdversaryPolicy",
    "match_sas",

    # Out-of-band channel
    "LedLayout",
    "FrameSchedule",
    "grid_layout",
    "build_schedule",
    "render_frame",
    "DecodeResult",
    "decode_session",

    # Primitives
    "BitString",
    "SasValue",
    "uhash",
    "compute_sas",
    "sas_length",

    # Experiments
    "AttackResult",
    "attack_experiment",
    "power_estimate",
    "timing_estimate",

    # Taxonomy models
    "ScenarioConfig",
    "FaultSpec",
    "FaultKind",
    "NoiseModel",
    "AdversaryRule",
    "AdversaryAction",
    "AttackStrategy",
    "Verdict",
    "FailureCause",

    # Errors
    "OobsimError",
    "ConfigError",
    "BatchAborted",
    "DetectionIncomplete",
]
