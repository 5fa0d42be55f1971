"""Turn literature synthesis procedures into validated, simulated XDL."""
from __future__ import annotations

__version__ = "0.1.0"
