"""
File: powercorefw/core.py
Core classes for PowerCoreFW - power consumption models from OS counters.

This module contains the PowerCoreFW facade and the PowerCoreFWWrapper that
chains pipeline functions over a wrapped Dataset:

    _(dataset).merge_with_arch_indicator(other).select_variables().selected

Copyright (C) 2024 PowerCoreFW contributors

This file is part of PowerCoreFW. You can redistribute it and/or modify
it under the terms of the [BSD-3-Clause] as published by
the Free Software Foundation.
"""

from __future__ import annotations

import functools
import inspect
from typing import Any, Callable, Dict, Tuple

from . import collector
from . import dataset
from . import evaluation
from . import mlp
from . import mlr
from . import models
from . import ret
from . import security
from . import selection
from . import types
from . import utils
from . import workload


_MODULES_IN_ORDER = [
    dataset,
    selection,
    mlr,
    ret,
    mlp,
    evaluation,
    models,
    collector,
    workload,
    utils,
    types,
    security,
]

# results of these types stay wrapped so the chain can continue
_CHAINABLE_RESULT_TYPES: Tuple[type, ...] = (dataset.Dataset,)

# First match wins according to _MODULES_IN_ORDER; built once at import time.
_FUNCTION_REGISTRY: Dict[str, Callable[..., Any]] = {}


class PowerCoreFW:
    """
    Static access to every pipeline function, plus chaining.

    Use:
      - Static calls: PowerCoreFW.fit_mlr(d, "power_w", ["cpu_user"])
      - Chaining: PowerCoreFW(d).take([0, 1, 2]).value()
    """

    _name = "PowerCoreFW"
    _author = "PowerCoreFW contributors"
    _email = "maintainers@powercorefw.org"
    _description = "Power consumption models from operating-system resource counters"
    _version = "0.3.0"

    def __init__(self, data: Any):
        self.wrapper = PowerCoreFWWrapper(data)

    def __getattribute__(self, item: str) -> Any:
        # instances resolve through the wrapper so static names do not shadow chaining
        if item == "wrapper" or item.startswith("_"):
            return object.__getattribute__(self, item)

        wrapper = object.__getattribute__(self, "wrapper")
        try:
            return getattr(wrapper, item)
        except AttributeError:
            return object.__getattribute__(self, item)

    def __call__(self, data: Any) -> "PowerCoreFWWrapper":
        return PowerCoreFWWrapper(data)

    @staticmethod
    def _create_wrapper_method(func: Callable[..., Any]) -> Callable[..., Any]:
        @functools.wraps(func)
        def wrapper_method(self: "PowerCoreFWWrapper", *args: Any, **kwargs: Any) -> Any:
            return self._apply_callable(func, *args, **kwargs)

        return wrapper_method


class PowerCoreFWWrapper:
    """
    Wraps a Dataset (or any value) and passes it as the first argument of
    each chained pipeline function.
    """

    def __init__(self, data: Any):
        self.data = data

    def _wrap_result(self, result: Any) -> Any:
        if isinstance(result, PowerCoreFWWrapper):
            return result
        if isinstance(result, _CHAINABLE_RESULT_TYPES):
            if result is self.data:
                return self
            return PowerCoreFWWrapper(result)
        return result

    def _apply_callable(self, func: Callable[..., Any], *args: Any, **kwargs: Any) -> Any:
        return self._wrap_result(func(self.data, *args, **kwargs))

    def _apply_function(self, function_name: str, *args: Any, **kwargs: Any) -> Any:
        """Apply a registered function, or a method of the wrapped value, by name."""
        func = _FUNCTION_REGISTRY.get(function_name)
        if func is not None:
            return self._apply_callable(func, *args, **kwargs)

        method = getattr(self.data, function_name, None)
        if callable(method):
            return self._wrap_result(method(*args, **kwargs))

        raise AttributeError(
            f"'powercorefw' has no pipeline function named '{function_name}'"
        )

    def __getattr__(self, name: str) -> Any:
        if name.startswith("_"):
            raise AttributeError(name)
        method = getattr(self.data, name, None)
        if callable(method):
            return lambda *args, **kwargs: self._apply_function(name, *args, **kwargs)
        if method is not None:
            return method
        raise AttributeError(f"'powercorefw' has no pipeline function named '{name}'")

    def value(self) -> Any:
        """Return the underlying wrapped value."""
        return self.data

    def chain(self) -> "PowerCoreFWWrapper":
        return self


def _build_function_registry() -> None:
    """
    Populate _FUNCTION_REGISTRY and attach module functions onto PowerCoreFW
    and PowerCoreFWWrapper. Only functions defined in a module are exported
    from it; wrapper methods such as ``value`` are never overridden.
    """
    for module in _MODULES_IN_ORDER:
        for name, func in inspect.getmembers(module, inspect.isfunction):
            if name.startswith("_"):
                continue
            if getattr(func, "__module__", None) != module.__name__:
                continue
            if name in _FUNCTION_REGISTRY:
                continue

            _FUNCTION_REGISTRY[name] = func

            if not hasattr(PowerCoreFWWrapper, name):
                setattr(PowerCoreFWWrapper, name, PowerCoreFW._create_wrapper_method(func))

            if not hasattr(PowerCoreFW, name):
                setattr(PowerCoreFW, name, staticmethod(func))


_build_function_registry()
