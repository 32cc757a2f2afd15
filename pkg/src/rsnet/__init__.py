"""Higher-order regular-splitting graph networks for 2-D to 3-D human pose lifting."""

__version__ = "0.1.0"
