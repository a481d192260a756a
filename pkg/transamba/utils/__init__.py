from .modality import *
from .ui import *
