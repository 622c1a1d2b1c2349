"""Plain-text lens prescription files.

Format: header lines followed by one ``surface`` line per surface, e.g. ::

    index_before=1.0
    source_z=-60.0
    target_z=9.0
    surface kind=spherical vertex_z=0.0 radius=60.62 semi_aperture=25.3 index_after=1.5168
    surface kind=spherical vertex_z=8.0 radius=-60.62 semi_aperture=25.3 index_after=1.0

Blank lines and ``#`` comments are ignored. Indices are quoted at the design
wavelength. Parse errors always carry the offending line number.
"""

from __future__ import annotations

from .optics import OpticalSystem, Surface, SurfaceKind


class PrescriptionError(ValueError):
    """Malformed prescription text; message names the line."""


_HEADER_KEYS = ("index_before", "source_z", "target_z")


def format_prescription(system: OpticalSystem) -> str:
    lines = [
        f"index_before={system.index_before_first!r}",
        f"source_z={system.source_z!r}",
        f"target_z={system.target_z!r}",
    ]
    for s in system.surfaces:
        lines.append(
            f"surface kind={s.kind.value} vertex_z={s.vertex_z!r} radius={s.radius!r} "
            f"semi_aperture={s.semi_aperture!r} index_after={s.index_after!r}"
        )
    return "\n".join(lines) + "\n"


def parse_prescription(text: str) -> OpticalSystem:
    headers: dict[str, float] = {}
    surfaces: list[Surface] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("surface"):
            surfaces.append(_parse_surface(line, lineno))
            continue
        if "=" not in line:
            raise PrescriptionError(f"line {lineno}: expected key=value or surface line, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _HEADER_KEYS:
            raise PrescriptionError(f"line {lineno}: unknown header key {key!r}")
        headers[key] = _parse_float(value, key, lineno)

    missing = [k for k in ("source_z", "target_z") if k not in headers]
    if missing:
        raise PrescriptionError(f"missing header line(s): {', '.join(missing)}")
    try:
        return OpticalSystem(
            surfaces=tuple(surfaces),
            source_z=headers["source_z"],
            target_z=headers["target_z"],
            index_before_first=headers.get("index_before", 1.0),
        )
    except ValueError as e:
        raise PrescriptionError(f"inconsistent prescription: {e}") from e


def _parse_float(value: str, key: str, lineno: int) -> float:
    try:
        return float(value.strip())
    except ValueError:
        raise PrescriptionError(f"line {lineno}: {key} is not a number: {value.strip()!r}") from None


def _parse_surface(line: str, lineno: int) -> Surface:
    fields: dict[str, str] = {}
    for token in line.split()[1:]:
        if "=" not in token:
            raise PrescriptionError(f"line {lineno}: malformed surface field {token!r}")
        k, _, v = token.partition("=")
        fields[k] = v
    try:
        kind = SurfaceKind(fields.pop("kind"))
    except KeyError:
        raise PrescriptionError(f"line {lineno}: surface is missing kind=") from None
    except ValueError:
        raise PrescriptionError(f"line {lineno}: unknown surface kind {fields.get('kind')!r}") from None

    required = ["vertex_z", "semi_aperture", "index_after"]
    if kind is SurfaceKind.SPHERICAL:
        required.append("radius")
    missing = [k for k in required if k not in fields]
    if missing:
        raise PrescriptionError(f"line {lineno}: surface is missing {', '.join(missing)}")
    values = {k: _parse_float(v, k, lineno) for k, v in fields.items()}
    try:
        return Surface(
            kind=kind,
            vertex_z=values["vertex_z"],
            semi_aperture=values["semi_aperture"],
            index_after=values["index_after"],
            radius=values.get("radius", 0.0),
        )
    except ValueError as e:
        raise PrescriptionError(f"line {lineno}: {e}") from e


def load_prescription(path) -> OpticalSystem:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_prescription(fh.read())


def save_prescription(system: OpticalSystem, path) -> None:
    from ._util import atomic_write_text

    atomic_write_text(path, format_prescription(system))
