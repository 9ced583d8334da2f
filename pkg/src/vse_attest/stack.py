"""A complete loopback deployment in one process: coprocessor, shim, broker, admin."""

from __future__ import annotations

from . import broker, shim
from .agent import BootLayer, crtm_boot
from .broker import AdminClient, BrokerClient
from .coprocessor import Coprocessor, Manufacturer
from .crypto import RandomSource
from .shim import ShimClient
from .state import selection_from_indices
from .transport import Connection
from .verifier import AttestationPolicy, compute_golden

HIGH_CREDENTIAL = b"crtm-credential/high-assurance"
LOW_CREDENTIAL = b"crtm-credential/low-assurance"
ADMIN_CREDENTIAL = b"pool-administrator"

HIGH_TECH = 1
LOW_TECH = 2

DEFAULT_LAYERS = (
    BootLayer("firmware", b"firmware image v1.2", 0),
    BootLayer("bootloader", b"bootloader stage 2", 1),
    BootLayer("kernel", b"kernel 6.1 + initrd", 2),
)
DEFAULT_SELECTION = selection_from_indices(range(3))


class Stack:
    """Start with ``with Stack(...) as s:``; all servers bind ephemeral loopback ports."""

    def __init__(
        self,
        *,
        freshness_mode: bool = False,
        random_init_mode: bool = False,
        seed: int | None = None,
        coprocessor_id: int = 1,
        manufacturer: Manufacturer | None = None,
        credentials: dict[bytes, int] | None = None,
    ):
        self.rng = RandomSource(seed)
        self.manufacturer = manufacturer or Manufacturer(rng=self.rng)
        creds = credentials if credentials is not None else {HIGH_CREDENTIAL: HIGH_TECH, LOW_CREDENTIAL: LOW_TECH}
        self.config = self.manufacturer.provision(
            coprocessor_id,
            tech_classes=(HIGH_TECH, LOW_TECH),
            credentials=creds,
            freshness_mode=freshness_mode,
            random_init_mode=random_init_mode,
            admin_credential=ADMIN_CREDENTIAL,
        )
        self.coprocessor = Coprocessor(self.config, self.rng)
        self.shim_server = shim.serve(self.coprocessor)
        self.broker_server = broker.serve(self.coprocessor, shim_endpoint=self.shim_server.endpoint)
        self.admin_server = broker.serve_admin(self.coprocessor)
        self._clients: list = []

    @property
    def root_public(self) -> bytes:
        return self.manufacturer.root_public

    def start(self) -> Stack:
        for s in (self.shim_server, self.broker_server, self.admin_server):
            s.start()
        return self

    def stop(self) -> None:
        for c in self._clients:
            c.close()
        for s in (self.shim_server, self.broker_server, self.admin_server):
            s.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def restart_shim(self) -> None:
        """Replace the shim server with a fresh instance on the same port."""
        address = self.shim_server.address
        self.shim_server.stop()
        self.shim_server = shim.serve(self.coprocessor, address).start()

    def shim_client(self) -> ShimClient:
        c = ShimClient(Connection(self.shim_server.endpoint))
        self._clients.append(c)
        return c

    def broker_client(self) -> BrokerClient:
        c = BrokerClient(Connection(self.broker_server.endpoint))
        self._clients.append(c)
        return c

    def admin_client(self, credential: bytes = ADMIN_CREDENTIAL) -> AdminClient:
        conn = Connection(self.admin_server.endpoint)
        self._clients.append(conn)
        return AdminClient(conn, credential)

    def boot(self, layers=DEFAULT_LAYERS, credential: bytes = HIGH_CREDENTIAL, **kw):
        return crtm_boot(self.broker_client(), bytearray(credential), layers, shim=self.shim_client(), **kw)

    def policy(self, receipt=None, *, layers=DEFAULT_LAYERS, selection=DEFAULT_SELECTION,
               accepted=(HIGH_TECH,), golden: bool = True) -> AttestationPolicy:
        """Policy a tenant would hold for ``receipt``'s VSE booting ``layers``."""
        rinit = receipt.random_init_value if receipt is not None else None
        return AttestationPolicy(
            trusted_root_public=self.root_public,
            selection=selection,
            accepted_tech_classes=frozenset(accepted),
            expected_seed=receipt.ek_certificate.seed if receipt is not None else None,
            golden_digest=compute_golden(layers, selection, rinit) if golden else None,
        )
