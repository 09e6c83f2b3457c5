"""Plain-text checkpoints with exact hex-float parameter encoding.

Layout (one record per line)::

    adatrans-checkpoint 1
    section <name> <n_params>
    param <name> <ndim> <dim_1> ... <dim_k> <hex_1> ... <hex_n>
    end

Sections appear in ``SECTION_ORDER``; params are sorted by name, so
save -> load -> save is byte-identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
MAGIC = "adatrans-checkpoint"
SECTION_ORDER = ("world", "flow", "classifier", "transformer", "adam_state", "config")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    format_version: int = FORMAT_VERSION
    sections: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def require(self, *names: str, stage: str = "") -> None:
        missing = [n for n in names if n not in self.sections]
        if missing:
            producers = {"world": "train-flow or train-q", "flow": "train-flow",
                         "classifier": "train-q", "transformer": "train-adatrans"}
            hint = "; ".join(f"'{m}' comes from {producers.get(m, '?')}" for m in missing)
            raise CheckpointError(
                f"{stage or 'this command'} needs checkpoint section(s) {', '.join(missing)} ({hint})")


def _encode(name: str, arr: np.ndarray) -> str:
    a = np.asarray(arr, dtype=np.float64)
    if any(c.isspace() for c in name):
        raise CheckpointError(f"parameter name {name!r} contains whitespace")
    parts = ["param", name, str(a.ndim), *map(str, a.shape)]
    parts.extend(float(x).hex() for x in a.reshape(-1))
    return " ".join(parts)


def dumps(ckpt: Checkpoint) -> str:
    unknown = set(ckpt.sections) - set(SECTION_ORDER)
    if unknown:
        raise CheckpointError(f"unknown section(s): {sorted(unknown)}")
    lines = [f"{MAGIC} {ckpt.format_version}"]
    for name in SECTION_ORDER:
        if name not in ckpt.sections:
            continue
        params = ckpt.sections[name]
        lines.append(f"section {name} {len(params)}")
        lines.extend(_encode(k, params[k]) for k in sorted(params))
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Checkpoint:
    offset = 0
    lines = []
    for raw in text.splitlines(keepends=True):
        lines.append((offset, raw.rstrip("\n")))
        offset += len(raw.encode())
    end_offset = offset

    def fail(at: int, msg: str):
        raise CheckpointError(f"checkpoint parse error at byte {at}: {msg}")

    if not lines:
        fail(0, "empty file")
    off, head = lines[0]
    parts = head.split()
    if len(parts) != 2 or parts[0] != MAGIC or not parts[1].isdigit():
        fail(off, "missing checkpoint header")
    version = int(parts[1])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version} "
                              f"(this build reads {FORMAT_VERSION})")
    ckpt = Checkpoint(version)
    i = 1
    while True:
        if i >= len(lines):
            fail(end_offset, "truncated file (no 'end' record)")
        off, line = lines[i]
        parts = line.split()
        if parts == ["end"]:
            if i != len(lines) - 1:
                fail(lines[i + 1][0], "data after 'end'")
            return ckpt
        if len(parts) != 3 or parts[0] != "section" or not parts[2].isdigit():
            fail(off, f"expected a section record, got {line[:40]!r}")
        name, count = parts[1], int(parts[2])
        if name not in SECTION_ORDER:
            fail(off, f"unknown section {name!r}")
        params = {}
        for _ in range(count):
            i += 1
            if i >= len(lines):
                fail(end_offset, f"truncated section {name!r}")
            off, line = lines[i]
            params.update([_decode(line, off, fail)])
        ckpt.sections[name] = params
        i += 1


def _decode(line: str, off: int, fail):
    parts = line.split()
    if len(parts) < 3 or parts[0] != "param":
        fail(off, "expected a param record")
    try:
        ndim = int(parts[2])
        shape = tuple(int(s) for s in parts[3:3 + ndim])
        values = [float.fromhex(v) for v in parts[3 + ndim:]]
    except ValueError as exc:
        fail(off, f"bad number in param {parts[1]!r}: {exc}")
    if len(shape) != ndim or len(values) != int(np.prod(shape, dtype=np.int64)):
        fail(off, f"param {parts[1]!r}: value count does not match shape {shape}")
    return parts[1], np.array(values, dtype=np.float64).reshape(shape)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return loads(Path(path).read_text())
