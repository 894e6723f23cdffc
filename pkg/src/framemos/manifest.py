"""
Corpus manifest: a TSV with a header, one utterance per row.

Required columns are ``utterance_id`` and ``wav_path``; ``alignment_path``,
``reference_path``, ``score_path``, ``system_id`` and ``true_mos`` are optional.
Relative paths resolve against the manifest's directory; rows carry absolute paths.
"""

import csv
from os import PathLike
from pathlib import Path

import attrs

REQUIRED_COLUMNS = ("utterance_id", "wav_path")
OPTIONAL_COLUMNS = ("alignment_path", "reference_path", "score_path", "system_id", "true_mos")
PATH_COLUMNS = ("wav_path", "alignment_path", "reference_path", "score_path")


class ManifestError(ValueError):
    pass


@attrs.frozen
class ManifestRow:
    utterance_id: str
    wav_path: Path
    alignment_path: Path | None = None
    reference_path: Path | None = None
    score_path: Path | None = None
    system_id: str | None = None
    true_mos: float | None = None

    def missing_files(self, *columns: str) -> list[Path]:
        "Paths among ``columns`` (all path columns by default) that don't exist."
        paths = [getattr(self, c) for c in (columns or PATH_COLUMNS)]
        return [p for p in paths if p is not None and not p.exists()]


def read_manifest(path: str | PathLike) -> list[ManifestRow]:
    path = Path(path)
    base = path.parent.absolute()
    rows: list[ManifestRow] = []
    seen: set[str] = set()
    with open(path, newline="") as f:
        reader = csv.DictReader(f, delimiter="\t")
        columns = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in columns]
        if missing:
            raise ManifestError(f"{path}: missing required columns {missing}")
        unknown = [c for c in columns if c not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
        if unknown:
            raise ManifestError(f"{path}: unknown columns {unknown}")

        for lineno, record in enumerate(reader, start=2):
            values = {k: (v or "").strip() or None for k, v in record.items()}
            utt = values["utterance_id"]
            if not utt:
                raise ManifestError(f"{path}:{lineno}: empty utterance_id")
            if utt in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utterance_id {utt!r}")
            seen.add(utt)
            if not values["wav_path"]:
                raise ManifestError(f"{path}:{lineno}: empty wav_path for {utt!r}")

            for column in PATH_COLUMNS:
                if values.get(column):
                    values[column] = base / values[column]
            if values.get("true_mos") is not None:
                try:
                    values["true_mos"] = float(values["true_mos"])
                except ValueError:
                    raise ManifestError(
                        f"{path}:{lineno}: true_mos must be a number, not {values['true_mos']!r}"
                    ) from None
            rows.append(ManifestRow(**values))
    return rows


def write_manifest(rows: list[ManifestRow], path: str | PathLike) -> None:
    "Write rows with paths relative to the manifest's directory where possible, else absolute."
    path = Path(path)
    base = path.parent.absolute()
    columns = list(REQUIRED_COLUMNS) + [
        c for c in OPTIONAL_COLUMNS if any(getattr(r, c) is not None for r in rows)
    ]

    def cell(row: ManifestRow, column: str) -> str:
        value = getattr(row, column)
        if value is None:
            return ""
        if isinstance(value, Path):
            value = value.absolute()
            try:
                return value.relative_to(base).as_posix()
            except ValueError:
                return str(value)
        if isinstance(value, float):
            return repr(value)
        return str(value)

    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([cell(row, c) for c in columns])
