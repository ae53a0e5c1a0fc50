"""
Simulator exceptions with reason codes and CLI exit codes
"""


class SimulatorError(Exception):
    code = "SIMULATOR_ERROR"
    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class ConfigError(SimulatorError):
    code = "CONFIG_INVALID"
    exit_code = 2


class FeederDataError(ConfigError):
    code = "FEEDER_INVALID"


class DisconnectedGraphError(SimulatorError):
    code = "GRAPH_DISCONNECTED"
    exit_code = 3


class InfeasibleDispatchError(SimulatorError):
    code = "DISPATCH_INFEASIBLE"
    exit_code = 3


class IslandingError(SimulatorError):
    code = "SCHEDULE_ISLANDING"
    exit_code = 4
