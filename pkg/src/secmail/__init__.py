"""E-net models of a secure e-mail system: engine, nets, services and analysis."""

from .enet import (NetDefinition, Outcome, run_to_terminal, validate_net,
                   enabled_transitions, fire, initial_marking)
from .nets import build_enr, build_ens

__version__ = "0.1.0"

__all__ = ["NetDefinition", "Outcome", "run_to_terminal", "validate_net", "enabled_transitions",
           "fire", "initial_marking", "build_ens", "build_enr"]
