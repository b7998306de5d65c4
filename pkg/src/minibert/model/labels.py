"""Label inventories for token-level tasks."""

from __future__ import annotations

from dataclasses import dataclass

TASK_KINDS = ("upos", "fpos", "ner", "dep-bracket")


class LabelError(Exception):
    pass


@dataclass(frozen=True)
class LabelSet:
    kind: str
    labels: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise LabelError(f"unknown task kind {self.kind!r}, expected one of {TASK_KINDS}")
        if len(set(self.labels)) != len(self.labels):
            raise LabelError("duplicate labels")
        object.__setattr__(self, "_ids", {lab: i for i, lab in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def id_of(self, label: str) -> int:
        try:
            return self._ids[label]
        except KeyError:
            raise LabelError(f"label {label!r} absent from the {self.kind} label set") from None

    def check_known(self, labels) -> None:
        missing = sorted({lab for lab in labels if lab not in self._ids})
        if missing:
            raise LabelError(f"labels absent from the {self.kind} label set: {missing}")

    @classmethod
    def from_data(cls, kind: str, label_sequences) -> "LabelSet":
        seen = {lab for seq in label_sequences for lab in seq}
        return cls(kind=kind, labels=tuple(sorted(seen)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSet":
        return cls(kind=d["kind"], labels=tuple(d["labels"]))
