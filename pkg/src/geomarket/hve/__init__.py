from .group import BilinearGroup, CurveGroup, ExponentGroup, GroupError, group_setup
from .scheme import *  # noqa: F401,F403
from .scheme import __all__ as _scheme_all

__all__ = ["BilinearGroup", "CurveGroup", "ExponentGroup", "group_setup"] + list(_scheme_all)
