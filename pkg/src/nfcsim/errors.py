"""Exception types shared across the simulator.

The CLI maps these to exit codes: ScenarioError -> 2, PhysicsError -> 3.
"""


class ScenarioError(Exception):
    """Invalid scenario file or scenario-level constraint violation."""


class PhysicsError(Exception):
    """Physically inconsistent input detected during computation.

    Examples: field point on a conductor, touching coil paths,
    coupling coefficient of magnitude >= 1.
    """
