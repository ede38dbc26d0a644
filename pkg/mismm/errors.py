"""Exceptions and failure records shared by every `mismm` module"""

from __future__ import annotations

from abc import ABC
from dataclasses import dataclass, field
from typing import TypeVar, Union

#############
# DATATYPES #
#############

T = TypeVar("T")


class MismmException(Exception):
    """The base class of exceptions raised by mismm"""


class InputError(MismmException):
    """
    Raised when the caller supplies invalid data, files or parameters

    The command line maps these to exit code 2.
    """


class SolverError(MismmException):
    """
    Raised when a computation fails on otherwise valid input

    The command line maps these to exit code 1.
    """


@dataclass
class Failure(ABC):
    """The abstract base class of failures that are recorded instead of raised"""

    msg: str
    """A message explaining the failure category."""


@dataclass
class MethodFailure(Failure):
    """Records a method that could not produce a result for one benchmark cell"""

    msg: str = field(default="Method failed", init=False)
    method: str
    """The method identifier, e.g. `mismm-heuristic`."""
    detail: str
    """The message of the exception that ended the fit."""


FitResult = Union[T, MethodFailure]
"""
A FitResult[T] is a value of type `T` if the fit succeeded, or else a
`MethodFailure` describing why it did not.
"""
