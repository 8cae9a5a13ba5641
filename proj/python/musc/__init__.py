from ._musc import *  # noqa: F401,F403
from ._musc import __version__  # noqa: F401
