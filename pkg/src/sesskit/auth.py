"""Mutual authentication methods, feature negotiation, identity mapping,
and authorization.

Negotiation gives the server final say: the chosen method and suite are
the first entries of the server's preference lists that the client also
offered; the client's ordering never influences the outcome.

Three built-in methods (production PKI/Kerberos-style mechanisms are out
of scope and modeled by :class:`StubPkiMethod` with a configurable round
and CPU cost):

    PASSWORD   mutual challenge-response over a shared secret.  Both
               sides exchange fresh nonces and prove knowledge with a
               keyed digest bound to the handshake key, so the secret
               never crosses the wire.  2 round trips.
    TOKENFILE  client presents a token (sealed under the handshake key)
               that the server matches against its accepted-token table.
               1 round trip.
    CLAIMTOBE  bare identity assertion, unauthenticated.  For tests and
               bridging scenarios.  1 round trip.

Identity mapping and authorization are first-match rule lists; patterns
are literals with an optional single trailing ``*`` wildcard.  Mapping
runs before authorization, and authorization denies by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errstack import (
    AUTH_FAILED,
    CONFIG,
    NEGOTIATION_FAILED,
    CommError,
    ErrorFrame,
    ErrorStack,
)
from .suites import Entropy, keyed_digest

DEFAULT_IDENTITY = "unmapped"
DEFAULT_SESSION_LIFETIME = 3600.0


class Mode(str, Enum):
    FULL_ENCRYPT = "FULL_ENCRYPT"
    MAC_ONLY = "MAC_ONLY"


class CommandLevel(str, Enum):
    READ = "READ"
    WRITE = "WRITE"
    DAEMON = "DAEMON"
    ADMIN = "ADMIN"


class NegotiationError(CommError):
    def __init__(self, message: str):
        frame = ErrorFrame(NEGOTIATION_FAILED, "NEGOTIATE", message)
        super().__init__(ErrorStack((frame,)))


class AuthenticationError(CommError):
    """Failed authentication.  Always carries the reserved 1003 frame;
    a lower-layer cause may sit beneath it."""

    def __init__(self, detail: str | None = None):
        frames = [ErrorFrame(AUTH_FAILED, "AUTH", "authentication failed")]
        if detail:
            frames.append(ErrorFrame(AUTH_FAILED, "AUTH", detail))
        super().__init__(ErrorStack(tuple(frames)))


class ConfigError(CommError):
    def __init__(self, message: str):
        super().__init__(ErrorStack((ErrorFrame(CONFIG, "CONFIG", message),)))


def match_pattern(pattern: str, value: str) -> bool:
    """Literal match, or prefix match when the pattern ends with ``*``."""
    if pattern.endswith("*"):
        return value.startswith(pattern[:-1])
    return value == pattern


@dataclass(frozen=True)
class MapRule:
    pattern: str
    identity: str


@dataclass(frozen=True)
class AuthzRule:
    identity_pattern: str
    level: CommandLevel
    allow: bool


@dataclass
class SecurityPolicy:
    allowed_methods: list[str]
    allowed_suites: list[str]
    require_encryption: bool = False
    require_integrity: bool = True
    map_rules: list[MapRule] = field(default_factory=list)
    authz_rules: list[AuthzRule] = field(default_factory=list)
    session_lifetime: float = DEFAULT_SESSION_LIFETIME

    def __post_init__(self) -> None:
        if not self.allowed_methods:
            raise ConfigError("policy must list at least one method")
        if not self.allowed_suites:
            raise ConfigError("policy must list at least one suite")

    def authz_text(self) -> str:
        """Authorization rules rendered as directive lines (policy snapshot)."""
        lines = []
        for rule in self.authz_rules:
            verb = "ALLOW" if rule.allow else "DENY"
            lines.append(f"{verb} {rule.identity_pattern} {rule.level.value}")
        return "\n".join(lines)


def map_identity(rules: list[MapRule], credential: str) -> str:
    for rule in rules:
        if match_pattern(rule.pattern, credential):
            return rule.identity
    return DEFAULT_IDENTITY


def authorize(policy: SecurityPolicy, identity: str, level: CommandLevel) -> bool:
    """First-match rule evaluation with an implicit final deny."""
    for rule in policy.authz_rules:
        if rule.level == level and match_pattern(rule.identity_pattern, identity):
            return rule.allow
    return False


def authorized_levels(policy: SecurityPolicy, identity: str) -> frozenset[CommandLevel]:
    return frozenset(l for l in CommandLevel if authorize(policy, identity, l))


@dataclass(frozen=True)
class ClientOffer:
    methods: tuple[str, ...]
    suites: tuple[str, ...]
    want_encryption: bool = False
    want_integrity: bool = True

    @classmethod
    def from_policy(cls, policy: SecurityPolicy) -> "ClientOffer":
        return cls(
            tuple(policy.allowed_methods),
            tuple(policy.allowed_suites),
            policy.require_encryption,
            policy.require_integrity,
        )


@dataclass(frozen=True)
class Negotiated:
    method_id: str
    suite_id: str
    mode: Mode


def negotiate(server_policy: SecurityPolicy, offer: ClientOffer, suites) -> Negotiated:
    """Pick method, suite, and mode.  Server preference order decides.

    ``suites`` is the server's suite registry, consulted for capability
    flags when encryption is required.
    """
    if not offer.methods or not offer.suites:
        raise NegotiationError("client offered no methods or no suites")
    method = next((m for m in server_policy.allowed_methods if m in offer.methods), None)
    if method is None:
        raise NegotiationError(
            f"no common authentication method (server {server_policy.allowed_methods}, "
            f"client {list(offer.methods)})"
        )
    common = [s for s in server_policy.allowed_suites if s in offer.suites]
    if not common:
        raise NegotiationError("no common cipher suite")
    need_encryption = server_policy.require_encryption or offer.want_encryption
    if need_encryption:
        encrypting = [s for s in common if suites.get(s).offers_encryption]
        if not encrypting:
            raise NegotiationError("encryption required but no common encrypting suite")
        return Negotiated(method, encrypting[0], Mode.FULL_ENCRYPT)
    return Negotiated(method, common[0], Mode.MAC_ONLY)


# --- credentials ------------------------------------------------------------

@dataclass
class Credentials:
    """Local secrets for the built-in methods.

    ``accepted_tokens`` maps token value to the name it proves (server
    side of TOKENFILE).
    """

    name: str = "anonymous"
    password: str | None = None
    token: str | None = None
    accepted_tokens: dict[str, str] = field(default_factory=dict)


# --- method implementations --------------------------------------------------

class MethodIO:
    """Step transport handed to method implementations.

    ``send``/``recv`` move one opaque step payload each; framing belongs
    to the caller.  ``entropy`` and ``clock`` support nonces and modeled
    CPU cost.
    """

    def __init__(self, send, recv, entropy: Entropy, clock):
        self.send = send
        self.recv = recv
        self.entropy = entropy
        self.clock = clock


class AuthMethod:
    """One mutual authentication mechanism.

    ``round_trips`` counts the client-awaited replies including the final
    verdict the caller delivers after ``server`` returns.
    """

    method_id: str = "?"
    round_trips: int = 1

    async def client(self, io: MethodIO, creds: Credentials, kek: bytes) -> str:
        """Run the client rounds; return the claimed name."""
        raise NotImplementedError

    async def server(self, io: MethodIO, creds: Credentials, kek: bytes) -> str:
        """Run the server rounds; return the proven peer credential."""
        raise NotImplementedError

    def credential_for(self, name: str) -> str:
        return f"{self.method_id.lower()}:{name}"


def _password_proof(secret: str, kek: bytes, nonce_c: bytes, nonce_s: bytes, role: bytes) -> bytes:
    proof_key = keyed_digest(secret.encode("utf-8"), kek + b"password-proof")
    return keyed_digest(proof_key, nonce_c + nonce_s + role)


class PasswordMethod(AuthMethod):
    method_id = "PASSWORD"
    round_trips = 2

    async def client(self, io: MethodIO, creds: Credentials, kek: bytes) -> str:
        if creds.password is None:
            raise AuthenticationError("no password configured")
        nonce_c = io.entropy.bytes(16)
        await io.send(creds.name.encode("utf-8") + b"\x00" + nonce_c)
        reply = await io.recv()
        nonce_s, server_proof = reply[:16], reply[16:]
        expected = _password_proof(creds.password, kek, nonce_c, nonce_s, b"server")
        if expected != server_proof:
            raise AuthenticationError("server failed password proof")
        await io.send(_password_proof(creds.password, kek, nonce_c, nonce_s, b"client"))
        return creds.name

    async def server(self, io: MethodIO, creds: Credentials, kek: bytes) -> str:
        if creds.password is None:
            raise AuthenticationError("no password configured")
        first = await io.recv()
        name_raw, _, nonce_c = first.partition(b"\x00")
        if len(nonce_c) != 16:
            raise AuthenticationError("malformed password round")
        nonce_s = io.entropy.bytes(16)
        await io.send(nonce_s + _password_proof(creds.password, kek, nonce_c, nonce_s, b"server"))
        client_proof = await io.recv()
        expected = _password_proof(creds.password, kek, nonce_c, nonce_s, b"client")
        if expected != client_proof:
            raise AuthenticationError("client failed password proof")
        return self.credential_for(name_raw.decode("utf-8", "replace"))


class TokenFileMethod(AuthMethod):
    method_id = "TOKENFILE"
    round_trips = 1

    async def client(self, io: MethodIO, creds: Credentials, kek: bytes) -> str:
        if creds.token is None:
            raise AuthenticationError("no token configured")
        from .suites import seal

        await io.send(seal(kek, creds.token.encode("utf-8"), io.entropy))
        return creds.name

    async def server(self, io: MethodIO, creds: Credentials, kek: bytes) -> str:
        from .suites import CryptoError, open_sealed

        blob = await io.recv()
        try:
            token = open_sealed(kek, blob).decode("utf-8", "replace")
        except CryptoError as exc:
            raise AuthenticationError(f"token unreadable: {exc}") from exc
        name = creds.accepted_tokens.get(token)
        if name is None:
            raise AuthenticationError("unknown token")
        return self.credential_for(name)


class ClaimToBeMethod(AuthMethod):
    method_id = "CLAIMTOBE"
    round_trips = 1

    async def client(self, io: MethodIO, creds: Credentials, kek: bytes) -> str:
        await io.send(creds.name.encode("utf-8"))
        return creds.name

    async def server(self, io: MethodIO, creds: Credentials, kek: bytes) -> str:
        name = (await io.recv()).decode("utf-8", "replace")
        return self.credential_for(name)


class StubPkiMethod(AuthMethod):
    """Stand-in for an expensive PKI handshake.

    Declares its round-trip count and a per-side CPU cost so latency
    experiments can model mechanisms this library does not implement.
    Identity is taken on faith from the first round.
    """

    def __init__(
        self,
        method_id: str = "STUB_GSI",
        round_trips: int = 3,
        cpu_client: float = 0.0,
        cpu_server: float = 0.0,
    ):
        if round_trips < 1:
            raise ConfigError("stub method needs at least one round trip")
        self.method_id = method_id
        self.round_trips = round_trips
        self.cpu_client = cpu_client
        self.cpu_server = cpu_server

    async def client(self, io: MethodIO, creds: Credentials, kek: bytes) -> str:
        if self.cpu_client > 0:
            await io.clock.sleep(self.cpu_client)
        await io.send(creds.name.encode("utf-8"))
        for _ in range(self.round_trips - 1):
            await io.recv()
            await io.send(b"next")
        return creds.name

    async def server(self, io: MethodIO, creds: Credentials, kek: bytes) -> str:
        name = (await io.recv()).decode("utf-8", "replace")
        for _ in range(self.round_trips - 1):
            await io.send(b"hold")
            await io.recv()
        if self.cpu_server > 0:
            await io.clock.sleep(self.cpu_server)
        return self.credential_for(name)


@dataclass
class MethodRegistry:
    methods: dict[str, AuthMethod] = field(default_factory=dict)

    def register(self, method: AuthMethod) -> None:
        self.methods[method.method_id] = method

    def get(self, method_id: str) -> AuthMethod:
        try:
            return self.methods[method_id]
        except KeyError:
            raise AuthenticationError(f"unknown method {method_id!r}") from None

    def ids(self) -> list[str]:
        return list(self.methods)


def default_methods() -> MethodRegistry:
    reg = MethodRegistry()
    reg.register(PasswordMethod())
    reg.register(TokenFileMethod())
    reg.register(ClaimToBeMethod())
    return reg


@dataclass(frozen=True)
class AuthOutcome:
    """What both parties agree on after a successful authentication."""

    method_used: str
    peer_credential: str
    canonical_identity: str
    negotiated: Negotiated
    server_told_client: str

    def serialize(self) -> bytes:
        from . import wire

        rec = wire.Record(
            [
                ("method", self.method_used.encode()),
                ("credential", self.peer_credential.encode()),
                ("identity", self.canonical_identity.encode()),
                ("suite", self.negotiated.suite_id.encode()),
                ("mode", self.negotiated.mode.value.encode()),
                ("told_client", self.server_told_client.encode()),
            ]
        )
        return wire.encode_record(rec)


# --- policy file format -------------------------------------------------------

_BOOL = {"yes": True, "true": True, "on": True, "no": False, "false": False, "off": False}


def _parse_bool(word: str, directive: str) -> bool:
    try:
        return _BOOL[word.lower()]
    except KeyError:
        raise ConfigError(f"{directive} expects yes/no, got {word!r}") from None


def _parse_level(word: str) -> CommandLevel:
    try:
        return CommandLevel[word.upper()]
    except KeyError:
        raise ConfigError(f"unknown command level {word!r}") from None


def parse_policy(text: str) -> SecurityPolicy:
    """Parse the one-directive-per-line policy format.

    Directives: METHODS, SUITES, REQUIRE_ENCRYPTION, REQUIRE_INTEGRITY,
    MAP <pattern> <identity>, ALLOW <identity-pattern> <level>,
    DENY <identity-pattern> <level>, SESSION_LIFETIME <seconds>.
    ``#`` starts a comment.
    """
    methods: list[str] = []
    suites: list[str] = []
    require_encryption = False
    require_integrity = True
    map_rules: list[MapRule] = []
    authz_rules: list[AuthzRule] = []
    lifetime = DEFAULT_SESSION_LIFETIME

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        directive, args = words[0].upper(), words[1:]
        try:
            if directive == "METHODS":
                methods.extend(a.upper() for a in args)
            elif directive == "SUITES":
                suites.extend(a.upper() for a in args)
            elif directive == "REQUIRE_ENCRYPTION":
                require_encryption = _parse_bool(_one(args, directive), directive)
            elif directive == "REQUIRE_INTEGRITY":
                require_integrity = _parse_bool(_one(args, directive), directive)
            elif directive == "MAP":
                if len(args) != 2:
                    raise ConfigError("MAP expects <pattern> <identity>")
                map_rules.append(MapRule(args[0], args[1]))
            elif directive in ("ALLOW", "DENY"):
                if len(args) != 2:
                    raise ConfigError(f"{directive} expects <identity-pattern> <level>")
                authz_rules.append(
                    AuthzRule(args[0], _parse_level(args[1]), directive == "ALLOW")
                )
            elif directive == "SESSION_LIFETIME":
                lifetime = float(_one(args, directive))
                if lifetime <= 0:
                    raise ConfigError("SESSION_LIFETIME must be positive")
            else:
                raise ConfigError(f"unknown directive {directive}")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc.stack.top().message}") from None

    return SecurityPolicy(
        allowed_methods=methods,
        allowed_suites=suites,
        require_encryption=require_encryption,
        require_integrity=require_integrity,
        map_rules=map_rules,
        authz_rules=authz_rules,
        session_lifetime=lifetime,
    )


def _one(args: list[str], directive: str) -> str:
    if len(args) != 1:
        raise ConfigError(f"{directive} expects exactly one argument")
    return args[0]


def load_policy(path: str) -> SecurityPolicy:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read policy file {path}: {exc}") from exc
    return parse_policy(text)
