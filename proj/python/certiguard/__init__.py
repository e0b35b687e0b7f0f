"""Python access to the certiguard core: conformal bounds, the corridor
world, perception maps, safety filtering and closed-loop rollouts."""

from ._certiguard import *  # noqa: F401,F403
from ._certiguard import __version__  # noqa: F401
