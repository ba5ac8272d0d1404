"""
Core functionality for oobsim.
"""

from oobsim.core.errors import (BatchAborted, CaptureAborted, ClusterInvalid,
                                CommitmentMismatch, ConfigError, DetectionIncomplete,
                                DimensionMismatch, EmptyLayout, InvalidState,
                                KeyUnwrapError, LengthMismatch, MalformedKey,
                                MalformedMessage, OobsimError, OutOfBounds)
from oobsim.core.harness import BatchReport, NodeReport, Scenario, Tallies
from oobsim.core.taxonomy import (AdminPolicy, DetectionConfig, LayoutConfig,
                                  MatchStatus, ScenarioConfig, SessionState,
                                  SinkState, SyncStatus)

__all__ = [
    # Harness
    "Scenario",
    "BatchReport",
    "NodeReport",
    "Tallies",

    # Taxonomy models
    "ScenarioConfig",
    "LayoutConfig",
    "DetectionConfig",
    "AdminPolicy",
    "SessionState",
    "SinkState",
    "MatchStatus",
    "SyncStatus",

    # Errors
    "OobsimError",
    "LengthMismatch",
    "CommitmentMismatch",
    "MalformedKey",
    "InvalidState",
    "MalformedMessage",
    "EmptyLayout",
    "OutOfBounds",
    "DimensionMismatch",
    "DetectionIncomplete",
    "ClusterInvalid",
    "CaptureAborted",
    "BatchAborted",
    "ConfigError",
    "KeyUnwrapError",
]
