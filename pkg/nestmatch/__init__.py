from .version import __version__, __versiondate__, __license__
from .settings import *
from .utils import *
from .defaults import *
from .base import *
from .parameters import *
from .nest import *
from .matcher import *
from .oracle import *
from .analysis import *
from .interventions import *
from .parallel import *
from .cli import *
