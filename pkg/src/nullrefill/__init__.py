"""Tank-based variable admittance control with null-space energy refill."""

from .engine import ideal_reference, passivity_check, run
from .scenario import Scenario, load_scenario

__all__ = ["Scenario", "ideal_reference", "load_scenario", "passivity_check", "run"]
__version__ = "0.1.0"
