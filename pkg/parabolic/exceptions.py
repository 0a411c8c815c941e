"""
Error types raised by the numerical core.

Every error carries a ``detail`` dict so the command layer can serialize the
failing module's payload verbatim, the same way serializer errors are keyed
by field.
"""


class ToolkitError(Exception):
    default_message = 'Numerical toolkit error'
    module = 'parabolic'

    def __init__(self, message=None, **detail):
        self.message = message or self.default_message
        self.detail = detail
        super().__init__(self.message)

    def as_payload(self):
        return {
            'error': type(self).__name__,
            'module': self.module,
            'message': self.message,
            'detail': {key: _plain(value) for key, value in self.detail.items()},
        }


def _plain(value):
    # numpy scalars and tuples are not JSON friendly
    if hasattr(value, 'item'):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    return value


class ShapeError(ToolkitError):
    default_message = 'Field shapes do not match'
    module = 'hilbert_core'


class NonFiniteError(ToolkitError):
    default_message = 'Field values must be finite'
    module = 'hilbert_core'


class SingularityError(ToolkitError):
    default_message = 'Operator is singular for the requested power'
    module = 'hilbert_core'


class IndeterminacyError(ToolkitError):
    default_message = 'Normal-cone inverse is multivalued at zero'
    module = 'hilbert_core'


class HypothesisError(ToolkitError):
    default_message = 'Operator parameters violate a structural hypothesis'
    module = 'operators'


class AdmissibilityError(ToolkitError):
    default_message = 'Control leaves the admissible ball'
    module = 'forward_solver'


class StepFailure(ToolkitError):
    default_message = 'Newton iteration did not converge'
    module = 'forward_solver'


class SolverError(ToolkitError):
    default_message = 'Forward solve failed after maximal step refinement'
    module = 'forward_solver'


class AdjointSingularError(ToolkitError):
    default_message = 'Singular linear system in the backward sweep'
    module = 'adjoint_solver'


class SaturationError(ToolkitError):
    default_message = 'Equivalent control exceeds the control bound'
    module = 'sliding_control'
