"""Python bindings for the hevrl core library."""

from ._core import *  # noqa: F401,F403
from ._core import HevrlError, __doc__  # noqa: F401
