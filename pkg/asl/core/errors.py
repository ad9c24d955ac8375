class ASLError(Exception):
    """Base class for every failure raised by the simulation package."""
    pass
