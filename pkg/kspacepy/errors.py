"""
Exception types raised across kspacepy.

Each one also derives from the builtin a caller would naturally catch,
so `except ValueError` keeps working for config and format problems.
"""


class KspaceError(Exception):
    """ Base class for every error raised by the package """


class ConfigError(KspaceError, ValueError):
    """ Invalid, unknown or inconsistent configuration """


class FormatError(KspaceError, ValueError):
    """
    A binary container could not be parsed.

    :section: which part of the file failed e.g. 'magic', 'header', 'payload'
    """
    def __init__(self, message, section=None):
        super().__init__(message)
        self.section = section


class ShapeMismatchError(FormatError):
    """ Payload or operand shape disagrees with the declared shape """


class InfeasibleTrajectoryError(KspaceError, RuntimeError):
    """ Strict pipeline refused a trajectory violating the kinematic limits """
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StaleCacheError(KspaceError, RuntimeError):
    """ backward() was given a cache from a different forward() """


class TrainingAbort(KspaceError, RuntimeError):
    """ Training stopped, typically on a non-finite loss """
    def __init__(self, message, epoch=None, stage=None):
        super().__init__(message)
        self.epoch = epoch
        self.stage = stage


class ProjectionWarning(UserWarning):
    """ Kinematic projection hit its iteration budget before converging """
