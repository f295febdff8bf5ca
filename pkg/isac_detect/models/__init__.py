from .base import *
from .conv_nets import *
