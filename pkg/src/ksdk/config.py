"""Flat TOML run configuration shared by every CLI subcommand.

A config file is a single table of scalar knobs; no nesting.  Unknown keys
are rejected by their exact dotted path so a typo in a nested section is
reported as written.  Command-line flags override file values, and whatever
survives the merge is echoed into the output directory, so a run can always
be reproduced from its artifacts alone.
"""

from __future__ import annotations

from pathlib import Path

try:
    import tomllib as _toml  # python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml

# key -> (python type, short description used by the CLI help)
CONFIG_KEYS: dict[str, tuple[type, str]] = {
    "seed": (int, "base seed of the counter-based noise streams"),
    "workers": (int, "FFT worker threads (results never depend on it)"),
    "out": (str, "output directory"),
    "modes": (int, "lattice truncation M; the grid has 2M + 2 points"),
    "dt": (float, "time step"),
    "horizon": (float, "final time"),
    "chi": (float, "attraction strength"),
    "eps": (float, "noise size"),
    "delta": (float, "frequency cutoff scale"),
    "samples": (int, "Monte Carlo sample count"),
    "target": (str, "enhancement-scan flavor: hierarchy or convolution"),
}


def _key_paths(table: dict, prefix: str = "") -> list[str]:
    paths = []
    for key, value in table.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            paths.extend(_key_paths(value, prefix=f"{path}."))
        else:
            paths.append(path)
    return paths


def load_config(path: str | Path) -> dict:
    """Read and validate a flat TOML file; returns only the keys present."""
    with open(path, "rb") as fh:
        raw = _toml.load(fh)

    unknown = [p for p in _key_paths(raw) if p not in CONFIG_KEYS]
    if unknown:
        raise ValueError(
            "unknown config key" + ("s" if len(unknown) > 1 else "")
            + ": " + ", ".join(sorted(unknown))
        )

    out: dict = {}
    for key, value in raw.items():
        want, _ = CONFIG_KEYS[key]
        # bool passes isinstance(int); it is never a valid knob here
        if isinstance(value, bool) or not isinstance(
            value, (want,) if want is not float else (int, float)
        ):
            raise ValueError(
                f"config key {key} expects {want.__name__}, got {value!r}"
            )
        out[key] = want(value)
    return out


def resolve(file_cfg: dict, flag_cfg: dict, defaults: dict) -> dict:
    """defaults < file < flags; None flags mean 'not given'."""
    merged = dict(defaults)
    merged.update(file_cfg)
    merged.update({k: v for k, v in flag_cfg.items() if v is not None})
    return merged
