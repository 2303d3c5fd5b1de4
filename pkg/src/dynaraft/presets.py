"""Built-in scenario files shipped with the package."""

from __future__ import annotations

import json
from importlib import resources


def _preset_dir():
    return resources.files(__package__).joinpath("presets")


def list_presets() -> list[tuple[str, str]]:
    """(name, description) for every bundled scenario, sorted by name."""
    out = []
    for entry in _preset_dir().iterdir():
        if entry.name.endswith(".json"):
            doc = json.loads(entry.read_text())
            out.append((entry.name[: -len(".json")], doc.get("description", "")))
    return sorted(out)


def load_preset(name: str) -> dict:
    """Raw scenario document for a bundled preset."""
    entry = _preset_dir().joinpath(f"{name}.json")
    try:
        text = entry.read_text()
    except FileNotFoundError:
        known = ", ".join(n for n, _ in list_presets())
        raise KeyError(f"no preset {name!r} (have: {known})") from None
    return json.loads(text)
