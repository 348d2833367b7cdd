"""Online handwriting data incubation: synthesis, CTC recognition and diagnostics."""

__version__ = "0.1.0"
