from revlab._core import *  # noqa: F401,F403
from revlab._core import __version__  # noqa: F401
