"""Stable seed derivation: every stochastic choice in the toolkit is keyed
by (global seed, purpose tag, indices), so runs replay exactly without
carrying RNG state around."""
import hashlib


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from any hashable parts (cross-platform)."""
    key = ":".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFFFFFFFFFFFFFF
