"""Large neighbourhood search over path-based neighbourhoods."""

from .engine import (LARGE, IncumbentStore, LnsConfig, Termination, improvement_rate, run_lns,
                     should_terminate)
from .fixing import Fixing, fix_set_for, rins_fixes
from .neighbourhood import (Focal, Neighbourhood, Strategy, base_weights, blending_contribution,
                            form_neighbourhood, form_path, restricted_cone_above,
                            restricted_cone_below, trigger_blocks)

__all__ = [
    "Fixing", "Focal", "IncumbentStore", "LARGE", "LnsConfig", "Neighbourhood", "Strategy",
    "Termination", "base_weights", "blending_contribution", "fix_set_for", "form_neighbourhood",
    "form_path", "improvement_rate", "restricted_cone_above", "restricted_cone_below",
    "rins_fixes", "run_lns", "should_terminate", "trigger_blocks",
]
