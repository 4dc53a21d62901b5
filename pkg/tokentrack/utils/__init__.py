from .logger import log_command, log_error, sequence_context
__all__ = [
    'log_command',
    'log_error',
    'sequence_context',
]
