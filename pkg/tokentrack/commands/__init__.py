'''
# Import all command functions so they can be easily imported from tokentrack.commands
'''
from .generate import generate_command
from .train import train_command
from .reparam import reparam_command
from .track import track_command
from .eval import eval_command
from .verify import verify_command

__all__ = [
    'generate_command',
    'train_command',
    'reparam_command',
    'track_command',
    'eval_command',
    'verify_command',
]
