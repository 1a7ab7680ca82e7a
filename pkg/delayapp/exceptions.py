import numpy as np
from django.core.exceptions import ValidationError


class DelayToolkitError(Exception):
    """Base class for every numerical error raised by the toolkit."""


class InvalidHorizon(DelayToolkitError):
    pass


class NonCommensurateDelay(DelayToolkitError):
    pass


class OutOfDomain(DelayToolkitError):
    pass


class NonFinite(DelayToolkitError):
    pass


class NoConvergence(DelayToolkitError):
    pass


class UnsupportedRegime(DelayToolkitError):
    pass


class IllConditionedRegression(DelayToolkitError):
    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class ZeroDenominator(DelayToolkitError):
    pass


class ConfigError(ValidationError):
    """Invalid experiment config; error_dict maps field names to messages."""


def check_finite(array, what, index=None):
    if not np.all(np.isfinite(array)):
        where = f' at grid index {index}' if index is not None else ''
        raise NonFinite(f'{what} became non-finite{where}')
    return array
