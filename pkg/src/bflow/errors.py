"""Exception hierarchy. Every class carries a machine-readable ``code`` used in CLI reports."""


class BFlowError(Exception):
    code = "bflow_error"


class DomainError(BFlowError, ValueError):
    """A point or stencil left the chart domain, or an input was malformed."""

    code = "domain_error"


class PreconditionError(BFlowError, ValueError):
    code = "precondition_violated"


class FlowError(BFlowError, RuntimeError):
    """Integration failed: domain exit, step underflow or boundary drift."""

    code = "flow_error"


class ConvergenceError(BFlowError, RuntimeError):
    code = "no_convergence"


class FieldSupportError(PreconditionError):
    code = "field_support"


class ConfigError(BFlowError, ValueError):
    code = "config_invalid"
