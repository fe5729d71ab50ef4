# Second-order Markov multistate models
__version__ = "1.0.0"
