"""MinMax recurrent neural cascades: algebra, evaluation, differentiation, automata, training."""
__version__ = "0.1.0"
