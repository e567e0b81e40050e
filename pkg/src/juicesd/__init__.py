"""Joint activity detection, channel estimation and data detection for
grant-free NOMA, with the rotationally invariant Gaussian-mixture
receiver, exact enumeration, baselines and state evolution."""

from .constellation import Constellation, build_constellation
from .receiver import Metrics, ReceiverConfig, ReceiverOutput, compute_metrics, run_receiver
from .scenario import FrameTruth, SystemConfig, generate_frame

__version__ = "0.1.0"

__all__ = [
    "Constellation", "build_constellation", "SystemConfig", "FrameTruth", "generate_frame",
    "ReceiverConfig", "ReceiverOutput", "Metrics", "run_receiver", "compute_metrics",
]
