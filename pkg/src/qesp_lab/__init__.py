"""qesp_lab: Q-ESP/ESP encapsulation, classification, and link simulation.

Q-ESP is an ESP variant that keeps the transport five-tuple readable by
network classifiers (cleartext copies in its header) while encrypting and
authenticating the payload.  This package implements both protocols in
userspace together with a multi-field classifier and a deterministic
priority-queue link simulator, so their QoS behavior can be compared at desk
scale.
"""

from .errors import QespLabError

__all__ = ["QespLabError"]
__version__ = "0.1.0"
