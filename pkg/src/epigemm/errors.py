"""Exception hierarchy shared by the simulator, kernels and BLAS layer."""


class ContractViolation(ValueError):
    """Caller passed arguments that break an operation's preconditions."""


class SimulationFault(RuntimeError):
    """An access or protocol error inside the simulated coprocessor."""


class CapacityExceeded(SimulationFault):
    pass


class NameCollision(SimulationFault):
    pass


class OutOfBounds(SimulationFault):
    pass


class DeadlockError(SimulationFault):
    pass


class DeviceFault(SimulationFault):
    pass


class CalibrationError(ValueError):
    pass


class ServiceError(RuntimeError):
    """Lifecycle misuse of the offload service (double start, submit while stopped)."""


class RequestRejected(ServiceError):
    """The single request slot is already occupied."""
