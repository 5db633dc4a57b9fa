"""Desk-scale visual paired comparison eye-tracking system.

Measurement side: frame streams, cascade face/eye detection, gaze
calibration and estimation, pulse and heart-rate-variability extraction.
Management side: session protocol, scoring, persistence, wire protocol
between the two nodes, and a browser gateway for the dashboard.
"""

__version__ = "0.1.0"
