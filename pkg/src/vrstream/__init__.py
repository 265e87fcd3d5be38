"""Multi-stream 360-degree video streaming: view model, rate model, stream optimizer and session simulator."""

__version__ = "0.1.0"
