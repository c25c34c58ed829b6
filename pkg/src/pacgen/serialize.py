"""Canonical JSON rendering and content digests for artifacts.

Two float policies coexist: report-style documents round every float to 12
significant digits (stable, human-diffable), while numeric artifacts meant
for exact re-derivation (cost matrices, posterior weights) keep full
``repr`` precision, which round-trips float64 exactly.
"""

import hashlib
import json

SIG_DIGITS = 12


def sig12(x):
    """Round a float to 12 significant digits."""
    return float(f"{float(x):.{SIG_DIGITS}g}")


def round_floats(obj):
    """Copy of a JSON-style structure with every float passed through sig12."""
    if isinstance(obj, float):
        return sig12(obj)
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def canonical_json(obj, round12=True):
    """Deterministic compact rendering: sorted keys, optional 12-digit floats."""
    doc = round_floats(obj) if round12 else obj
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def short_digest(obj, round12=True):
    """16-hex-char content digest of the canonical rendering."""
    return hashlib.sha256(canonical_json(obj, round12=round12).encode("utf-8")).hexdigest()[:16]


def dump_json(path, obj, round12=True):
    """Write a JSON document with sorted keys and a trailing newline.

    round12 controls whether floats are rounded to 12 significant digits
    or written at full repr precision.
    """
    doc = round_floats(obj) if round12 else obj
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)
