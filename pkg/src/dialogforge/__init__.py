"""Task-oriented dialogue stack: formal states, a domain-independent
transaction machine, grammar-based corpus synthesis, a grammar parser that
inverts the synthesis templates, metrics, and a live dialogue agent."""

__version__ = "0.1.0"

from .schema import load_schemas
from .states import (
    AgentState, Context, DialogueTurn, UserState, advance_context,
    attach_agent_state, null_context, slots_of, states_equal,
)
from .linearize import delinearize, linearize

__all__ = [
    "AgentState", "Context", "DialogueTurn", "UserState", "advance_context",
    "attach_agent_state", "delinearize", "linearize", "load_schemas",
    "null_context", "slots_of", "states_equal",
]
