"""Attestation with a stateless coprocessor and client-held, HMAC-sealed state."""

from .agent import BootLayer, Driver, EventLog, Mode, crtm_boot
from .coprocessor import Coprocessor, CoprocessorConfig, Manufacturer, Quote
from .errors import AttestError, Status
from .stack import Stack
from .state import SealedVseState, VseState
from .verifier import AttestationPolicy, Verdict, verify_quote

__version__ = "0.1.0"
