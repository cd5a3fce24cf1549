from ._prba import *  # noqa: F401,F403
from ._prba import __doc__  # noqa: F401
