from .base import *
from .replica import *
