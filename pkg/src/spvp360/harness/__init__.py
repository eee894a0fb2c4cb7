"""Data ingestion, synthetic scenes, multicast feedback simulation and persistence."""
from .traces import GazeTrace, TraceFormatError, ingest_traces, write_traces
from .synthetic import SyntheticScene, Scene, generate_scene
from .session import SessionConfig, simulate_session

__all__ = [
    "GazeTrace", "TraceFormatError", "ingest_traces", "write_traces",
    "SyntheticScene", "Scene", "generate_scene",
    "SessionConfig", "simulate_session",
]
