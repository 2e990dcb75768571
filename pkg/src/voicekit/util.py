"""Small shared helpers: stable seeding and canonical hashing.

All randomness in the toolkit flows through numpy Generators seeded via
stable_seed, so results never depend on PYTHONHASHSEED or process state.
"""

import hashlib
import json


def stable_seed(*parts) -> int:
    """Derive a 64-bit seed from an arbitrary mix of strings and ints.

    The mapping is stable across processes and platforms (blake2b of the
    repr-joined parts), unlike the builtin hash().
    """
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def canonical_json(obj) -> str:
    """Serialize with sorted keys and no whitespace, for hashing and storage."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(data) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()
