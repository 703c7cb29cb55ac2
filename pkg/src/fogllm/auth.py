"""Bearer-token authorization for fog nodes.

Tokens are JWTs (RFC 7519). HMAC-SHA256 is the default; any algorithm
PyJWT supports can be configured, in which case the verification key is the
PEM-encoded public key.

Failures split into two classes: :class:`~fogllm.errors.Unauthorized`
(401: missing, malformed, badly signed or expired) and
:class:`~fogllm.errors.Forbidden` (403: authentic token that does not grant
inference on this node).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import jwt

from .errors import Forbidden, Unauthorized

SCOPE_INFER = "llm:infer"
SCOPE_LIST = "llm:list"
DEFAULT_AUDIENCE = "fogllm"
DEFAULT_ISSUER = "fogctl"


@dataclass(frozen=True)
class AuthClaims:
    issuer: str
    audience: str
    expiry: int
    scopes: tuple[str, ...]


def _scopes_of(payload: dict) -> tuple[str, ...]:
    raw = payload.get("scope", payload.get("scopes", ()))
    if isinstance(raw, str):
        return tuple(raw.split())
    if isinstance(raw, (list, tuple)) and all(isinstance(s, str) for s in raw):
        return tuple(raw)
    raise Unauthorized("scope claim is malformed")


class TokenVerifier:
    def __init__(
        self,
        key: str | bytes,
        *,
        audience: str = DEFAULT_AUDIENCE,
        issuer: str | None = None,
        algorithms: Sequence[str] = ("HS256",),
    ):
        self.key = key
        self.audience = audience
        self.issuer = issuer
        self.algorithms = list(algorithms)

    def verify(self, token: str, now: float | None = None, required_scope: str = SCOPE_INFER) -> AuthClaims:
        now = time.time() if now is None else now
        try:
            payload = jwt.decode(
                token,
                self.key,
                algorithms=self.algorithms,
                options={"verify_exp": False, "verify_aud": False, "verify_iat": False, "verify_nbf": False},
            )
        except jwt.InvalidTokenError as exc:
            raise Unauthorized(f"invalid token: {exc}") from None

        exp = payload.get("exp")
        if isinstance(exp, bool) or not isinstance(exp, (int, float)):
            raise Unauthorized("token has no expiry")
        if exp <= now:
            raise Unauthorized("token expired")
        nbf = payload.get("nbf")
        if isinstance(nbf, (int, float)) and nbf > now:
            raise Unauthorized("token not yet valid")
        issuer = payload.get("iss", "")
        if self.issuer is not None and issuer != self.issuer:
            raise Unauthorized("untrusted issuer")

        aud = payload.get("aud")
        audiences = [aud] if isinstance(aud, str) else list(aud or ())
        if self.audience not in audiences:
            raise Forbidden("token audience does not match this node")
        scopes = _scopes_of(payload)
        if required_scope not in scopes:
            raise Forbidden(f"token lacks scope {required_scope!r}")
        return AuthClaims(issuer=issuer, audience=self.audience, expiry=int(exp), scopes=scopes)


def bearer_token(authorization: str | None) -> str:
    if not authorization:
        raise Unauthorized("missing Authorization header")
    parts = authorization.strip().split()
    if len(parts) != 2 or parts[0].lower() != "bearer":
        raise Unauthorized("expected 'Authorization: Bearer <token>'")
    return parts[1]


def authorize(
    headers: Mapping[str, str],
    verifier: TokenVerifier,
    now: float | None = None,
    required_scope: str = SCOPE_INFER,
) -> AuthClaims:
    """Check the request's bearer token. Must run before any backend work."""
    return verifier.verify(bearer_token(headers.get("Authorization")), now, required_scope)


def mint_token(
    key: str | bytes,
    *,
    ttl_s: float = 3600,
    scopes: Sequence[str] = (SCOPE_INFER,),
    audience: str = DEFAULT_AUDIENCE,
    issuer: str = DEFAULT_ISSUER,
    now: float | None = None,
    algorithm: str = "HS256",
) -> str:
    """Development helper; production deployments bring their own issuer."""
    now = time.time() if now is None else now
    payload = {
        "iss": issuer,
        "aud": audience,
        "iat": int(now),
        "exp": int(now + ttl_s),
        "scope": " ".join(scopes),
    }
    return jwt.encode(payload, key, algorithm=algorithm)
