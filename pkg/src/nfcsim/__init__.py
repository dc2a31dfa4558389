"""nfcsim: magnetoquasistatic simulation of wearable NFC links.

Pipeline: coil geometry (polylines) -> fields and inductances -> resonant
link budgets -> deterministic inventory / session protocol -> energy
accounting, driven by declarative scenario files.
"""

__version__ = "0.1.0"

from .errors import PhysicsError, ScenarioError

__all__ = ["PhysicsError", "ScenarioError", "__version__"]
