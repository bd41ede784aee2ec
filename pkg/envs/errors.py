"""
Environment errors
"""


class DynamicsError(RuntimeError):
    """Plant state went non-finite; the dynamics blew up"""
