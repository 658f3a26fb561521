"""Self-play training of networks that learn to predict beam-search outcomes."""

from probs.games import (
    CONNECT3_TEST,
    CONNECT_FOUR,
    GameState,
    StepResult,
    Variant,
    apply_action,
    encode,
    new_game,
    to_text,
    valid_actions,
    variant_by_name,
)

__all__ = [
    "CONNECT3_TEST",
    "CONNECT_FOUR",
    "GameState",
    "StepResult",
    "Variant",
    "apply_action",
    "encode",
    "new_game",
    "to_text",
    "valid_actions",
    "variant_by_name",
]

__version__ = "0.1.0"
