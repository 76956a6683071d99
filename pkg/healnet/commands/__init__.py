# Initialization file for the commands module

from .synth_commands import synth
from .train_commands import train
from .evaluation_commands import eval_missing, inspect
from .gradcheck_commands import gradcheck

__all__ = ['synth', 'train', 'eval_missing', 'inspect', 'gradcheck']
