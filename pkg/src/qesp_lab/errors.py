"""Exception hierarchy shared by all qesp_lab modules.

Every failure raised by this package derives from QespLabError, so callers
(and the simulator's drop accounting) can catch one base class.  Parsers are
total: arbitrary input bytes may only ever raise these, never anything else.
"""


class QespLabError(Exception):
    """Base class for all errors raised by qesp_lab."""


# --- wire format ---

class Truncated(QespLabError):
    """Input buffer is shorter than the structure it claims to contain."""


class InvalidHeader(QespLabError):
    """A header field violates the format's invariants."""


class BadChecksum(QespLabError):
    """IPv4 header checksum does not verify."""


class UnsupportedOptions(QespLabError):
    """IPv4 header carries options (ihl != 5), which this lab does not model."""


class MalformedPacket(QespLabError):
    """Packet cannot be classified (unparseable at the layer inspected)."""


# --- crypto ---

class BadKeyLength(QespLabError):
    """Key length does not match the algorithm's required key size."""


class BadIvLength(QespLabError):
    """IV length does not match the cipher's IV size."""


class BadBlockAlignment(QespLabError):
    """Plaintext/ciphertext length is not a multiple of the cipher block."""


# --- security association database ---

class DuplicateSpi(QespLabError):
    """An SA with this SPI is already registered."""


class SequenceExhausted(QespLabError):
    """Outbound sequence counter reached its ceiling; the SA needs rekeying."""


# --- encapsulation engine ---

class UnknownSpi(QespLabError):
    """Inbound SPI does not select any SA of the right protocol variant."""


class AuthFailure(QespLabError):
    """Integrity check value does not verify."""


class ReplayRejected(QespLabError):
    """Sequence number is a duplicate or fell behind the anti-replay window."""


class BadPadding(QespLabError):
    """Decrypted trailer padding is inconsistent."""


class FiveTupleMismatch(QespLabError):
    """Cleartext port/protocol copies disagree with the decrypted payload."""


class OversizePacket(QespLabError):
    """Encapsulation result would exceed the 65535-byte IPv4 limit."""


# --- configuration ---

class ConfigError(QespLabError):
    """Experiment configuration is malformed; message names the field."""
