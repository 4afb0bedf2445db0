"""Root exceptions shared by every difflab module

Module-specific errors live next to the code that raises them and derive
from one of these, which is what the experiment runner maps onto exit codes.
"""


class DifflabError(Exception):
    """Base of every error difflab raises on purpose"""
    pass


class ConfigError(DifflabError):
    """The user asked for something invalid (exit status 2)"""
    pass


class NumericalFailure(DifflabError):
    """A computation could not honour its contract (exit status 3)"""
    pass
