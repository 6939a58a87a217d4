"""Versioned plain-text run configuration.

Format: one ``key = value`` per line, ``#`` comments, UTF-8. A
``schema_version`` key is required and unknown keys are hard errors (a
typo in a threshold must not silently fall back to a default). The same
schema backs every CLI command; each command consumes the keys it needs,
and command-line flags override file values.
"""

from __future__ import annotations

from pathlib import Path

from planemeta.errors import ConfigParseError

SCHEMA_VERSION = 1

def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default). Defaults are the documented values.
SCHEMA: dict[str, tuple] = {
    "schema_version": (int, SCHEMA_VERSION),
    # cleaning pipeline
    "opening_radius": (int, 1),
    "foreground_threshold": (float, 0.1),
    "sample_stride": (int, 10),
    "mean_intensity_min": (float, 0.1),
    "coverage_min": (float, 0.25),
    "target_size": (int, 224),
    # context assembly
    "context": (str, "random"),
    "context_slices": (int, 3),
    "context_seed": (int, 0),
    # training
    "task": (str, "plane"),
    "backbone": (str, "tiny"),
    "pretrained": (_bool, False),
    "norm": (str, "minmax01"),
    "epochs": (int, 30),
    "learning_rate": (float, 0.001),
    "batch_size": (int, 64),
    "seed": (int, 0),
    "augment": (_bool, True),
    "balanced": (_bool, True),
    "val_fraction": (float, 0.1),
    # fusion
    "tau": (float, 0.5),
    "grid_points": (int, 101),
    "entropy_mode": (str, "normalized"),
}

_CHOICES = {
    "context": {"2d", "seq", "random"},
    "context_slices": {2, 3},
    "task": {"plane", "tumor"},
    "backbone": {"tiny", "large_kernel", "residual18"},
    "norm": {"minmax01", "pretrain_stats"},
    "entropy_mode": {"normalized", "raw"},
}


def defaults() -> dict:
    return {key: default for key, (_, default) in SCHEMA.items()}


def _validate(key: str, value, where: str):
    allowed = _CHOICES.get(key)
    if allowed is not None and value not in allowed:
        raise ConfigParseError(
            f"{where}: key {key!r} must be one of {sorted(map(str, allowed))}, got {value!r}"
        )


def load_config(path: str | Path) -> dict:
    """Parse a config file into a fully populated dict (missing keys take
    defaults). Malformed lines, unknown keys and bad values raise
    ConfigParseError with a line reference."""
    path = Path(path)
    values = defaults()
    seen_version = False
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        text = text.strip()
        if key not in SCHEMA:
            raise ConfigParseError(f"{path}:{lineno}: unknown key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            value = parser(text)
        except ValueError as exc:
            raise ConfigParseError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
        _validate(key, value, f"{path}:{lineno}")
        values[key] = value
        if key == "schema_version":
            seen_version = True
            if value != SCHEMA_VERSION:
                raise ConfigParseError(
                    f"{path}:{lineno}: unsupported schema_version {value} (expected {SCHEMA_VERSION})"
                )
    if not seen_version:
        raise ConfigParseError(f"{path}: missing required key 'schema_version'")
    return values


def save_config(path: str | Path, values: dict) -> Path:
    """Serialize an effective config; re-loading reproduces it exactly."""
    path = Path(path)
    unknown = set(values) - set(SCHEMA)
    if unknown:
        raise ConfigParseError(f"cannot serialize unknown keys {sorted(unknown)}")
    lines = [f"schema_version = {values.get('schema_version', SCHEMA_VERSION)}"]
    for key in sorted(k for k in values if k != "schema_version"):
        lines.append(f"{key} = {values[key]}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
