"""Behavioral authentication: agents prove identity by acting like a shared
secret decision model during a repeated action exchange."""

from agentauth.models import Pdt, PdtAgent, boltzmann, generate_random_pdt
from agentauth.engine import InteractionHistory, run_interaction, derive_key

__all__ = [
    "Pdt",
    "PdtAgent",
    "boltzmann",
    "generate_random_pdt",
    "InteractionHistory",
    "run_interaction",
    "derive_key",
]
