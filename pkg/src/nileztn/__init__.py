"""Intent-driven closed-loop bandwidth assurance on a simulated bottleneck link."""

__version__ = "0.1.0"
