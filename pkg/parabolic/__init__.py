"""Minimal-time and sliding-mode control of semilinear parabolic equations."""
