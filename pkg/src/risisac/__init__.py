"""Joint transceiver and RIS phase design for RIS-aided integrated sensing
and communication."""
__version__ = "0.1.0"
