"""First-order utility-based pricing and hedging in exponential Lévy and BNS models."""
__version__ = "0.1.0"
