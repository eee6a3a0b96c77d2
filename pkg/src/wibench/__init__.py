"""Network throughput benchmark with synchronized device telemetry and Pearson analysis."""

__version__ = "0.1.0"
