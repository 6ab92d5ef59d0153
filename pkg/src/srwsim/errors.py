"""Exception types shared across the simulator."""


class SrwsimError(Exception):
    """Base class for all srwsim errors."""


class ConfigError(SrwsimError):
    """Invalid scene configuration (bad key, unit, geometry...).

    CLI maps this to exit code 2.
    """


class NumericalAbort(SrwsimError):
    """The simulation produced a non-finite or runaway state.

    Carries enough context (step, time, particle) to locate the blow-up.
    CLI maps this to exit code 3.
    """

    def __init__(self, message, step=None, time=None, particle=None):
        detail = message
        if step is not None:
            detail += f" [step={step}]"
        if time is not None:
            detail += f" [t={time:.6g} s]"
        if particle is not None:
            detail += f" [particle={particle}]"
        super().__init__(detail)
        self.step = step
        self.time = time
        self.particle = particle
