"""Bundled example programs and datasets."""

from __future__ import annotations

from importlib import resources

from ..program import SLP, parse_slp


def names() -> list[str]:
    """Names of the bundled programs, without the ``.slp`` suffix."""
    return sorted(p.name[:-4] for p in resources.files(__name__).iterdir()
                  if p.name.endswith(".slp"))


def read_text(filename: str) -> str:
    return resources.files(__name__).joinpath(filename).read_text(encoding="utf-8")


def load(name: str) -> SLP:
    """Parse the bundled program ``name`` (e.g. ``"S2"``)."""
    filename = name if name.endswith(".slp") else name + ".slp"
    return parse_slp(read_text(filename), filename)


def path(filename: str):
    """A context manager yielding a real filesystem path to a bundled file."""
    return resources.as_file(resources.files(__name__).joinpath(filename))
