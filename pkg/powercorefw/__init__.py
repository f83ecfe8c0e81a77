"""
PowerCoreFW - Power Consumption Models from OS Resource Counters
================================================================

Collect resource counters alongside a power meter, select the variables
that carry information about power, and train, evaluate and deploy linear,
tree and neural-network power models.

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

# Import the main classes
from .core import PowerCoreFW, PowerCoreFWWrapper

# Import all functions from submodules to make them available at package level
from .security import *
from .types import *
from .utils import *
from .dataset import *
from .selection import *
from .mlr import *
from .ret import *
from .mlp import *
from .evaluation import *
from .collector import *
from .workload import *
from .models import *
from .manifest import *

__name__    = PowerCoreFW._name
__version__ = PowerCoreFW._version
__author__  = PowerCoreFW._author
__email__   = PowerCoreFW._email


def _(data):
    """
    Factory function to create a PowerCoreFWWrapper instance.

    Args:
        data: The dataset to wrap

    Returns:
        PowerCoreFWWrapper: A wrapped dataset
    """
    return PowerCoreFWWrapper(data)


# Attach static methods
for func_name in dir(PowerCoreFW):
    if callable(getattr(PowerCoreFW, func_name)) and not func_name.startswith("_"):
        setattr(_, func_name, getattr(PowerCoreFW, func_name))

__all__ = ['PowerCoreFW', 'PowerCoreFWWrapper', '_']
