"""Task Manager: transaction coordination, selection, recovery, and the client API."""

from .core import (
    AlreadyTerminal,
    RecoveryPolicy,
    SelectionPolicy,
    TaskManager,
    TaskmanConfig,
    TransactionStatus,
    UnknownTransaction,
    select_winner,
    situation_to_delta,
)

__all__ = [
    "AlreadyTerminal",
    "RecoveryPolicy",
    "SelectionPolicy",
    "TaskManager",
    "TaskmanConfig",
    "TransactionStatus",
    "UnknownTransaction",
    "select_winner",
    "situation_to_delta",
]
