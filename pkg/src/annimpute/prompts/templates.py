"""Prompt skeletons, filler catalogs, version strings and example formatting."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from ..core import LabelSchema
from .shots import Shot, ShotSet

FILLER_SLOTS = (
    "orig_examples_header",
    "imputed_examples_header",
    "target_example_header",
    "instructions",
    "final_words",
)
DATA_SLOTS = frozenset({
    "dataset_description", "orig_examples", "imputed_examples", "target_example",
    "n_shots", "k_shots", "shots", "other_shots", "target_example_line",
    "soft_label_examples", "prediction_text",
    "annotator_A_examples", "annotator_B_examples", "annotator_C_examples", "target_annotator",
})
_PLACEHOLDER = re.compile(r"\{(\w+)\}")
_VERSION = re.compile(r"^v(-?\d+(?:\.-?\d+)*)$")


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptSkeleton:
    id: str
    template: str
    condition: str | None = None

    def __post_init__(self):
        unknown = self.placeholders() - DATA_SLOTS - set(FILLER_SLOTS)
        if unknown:
            raise PromptError(f"skeleton {self.id!r} has unknown placeholders: {sorted(unknown)}")

    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER.findall(self.template))


@dataclass(frozen=True)
class FillerCatalog:
    options: Mapping[str, tuple[str, ...]]
    slots: tuple[str, ...] = FILLER_SLOTS

    def __post_init__(self):
        missing = [s for s in self.slots if s not in self.options]
        if missing:
            raise PromptError(f"filler catalog missing slots: {missing}")

    def choose(self, version: str) -> dict[str, str | None]:
        """Filler text per slot for a version string; None marks an omitted slot."""
        idx = parse_version(version, len(self.slots))
        out = {}
        for slot, k in zip(self.slots, idx):
            opts = self.options[slot]
            if k == -1:
                out[slot] = None
            elif 0 <= k < len(opts):
                out[slot] = opts[k]
            else:
                raise PromptError(f"version {version}: index {k} out of range for {slot} ({len(opts)} options)")
        return out

    def versions(self) -> list[str]:
        """Every addressable version string, omitted-slot variants included."""
        ranges = [range(-1, len(self.options[s])) for s in self.slots]
        out = [[]]
        for r in ranges:
            out = [prefix + [k] for prefix in out for k in r]
        return ["v" + ".".join(str(k) for k in combo) for combo in out]


def parse_version(version: str, n_slots: int = len(FILLER_SLOTS)) -> list[int]:
    m = _VERSION.match(version.strip())
    if not m:
        raise PromptError(f"malformed version string {version!r}")
    idx = [int(x) for x in m.group(1).split(".")]
    if len(idx) != n_slots:
        raise PromptError(f"version {version!r} has {len(idx)} fields, expected {n_slots}")
    if any(k < -1 for k in idx):
        raise PromptError(f"version {version!r} has an index below -1")
    return idx


def _data_file(name: str):
    return resources.files("annimpute.prompts").joinpath("data", name)


def load_skeletons(path=None) -> dict[str, PromptSkeleton]:
    src = open(path, encoding="utf-8") if path else _data_file("skeletons.json").open(encoding="utf-8")
    with src as fh:
        obj = json.load(fh)
    return {s["id"]: PromptSkeleton(s["id"], s["template"], s.get("condition")) for s in obj["skeletons"]}


def load_catalog(path=None) -> FillerCatalog:
    src = open(path, encoding="utf-8") if path else _data_file("fillers.json").open(encoding="utf-8")
    with src as fh:
        obj = json.load(fh)
    slots = tuple(obj.get("slots", FILLER_SLOTS))
    return FillerCatalog({k: tuple(v) for k, v in obj["options"].items()}, slots)


def render(skeleton: PromptSkeleton, catalog: FillerCatalog, version: str, data: Mapping[str, str]) -> str:
    """Fill a skeleton. Omitted filler slots lose their whole line."""
    fillers = catalog.choose(version)
    omitted = {"{" + s + "}" for s, v in fillers.items() if v is None}
    lines = [ln for ln in skeleton.template.split("\n") if ln not in omitted]
    values = {**{k: v for k, v in fillers.items() if v is not None}, **data}

    def sub(m):
        key = m.group(1)
        if key not in values:
            raise PromptError(f"skeleton {skeleton.id!r} needs a value for {{{key}}}")
        return str(values[key])

    # single pass: substituted text is never rescanned for placeholders
    return _PLACEHOLDER.sub(sub, "\n".join(lines))


def label_text(label: int, schema: LabelSchema | None) -> str:
    return str(label) if schema is None else str(schema.display_value(label))


def format_examples(shots: Sequence[Shot], schema: LabelSchema | None = None) -> str:
    return "\n\n".join(
        f"Example {k}:\nText: {s.text}\nAnnotation from annotator: {label_text(s.label, schema)}"
        for k, s in enumerate(shots, 1)
    )


def format_target(text: str) -> str:
    return f"Text: {text}\nAnnotation from annotator:"


def build_prompt(
    skeleton: PromptSkeleton,
    catalog: FillerCatalog,
    version: str,
    shots: ShotSet,
    dataset_description: str,
    schema: LabelSchema | None = None,
) -> str:
    data = {
        "dataset_description": dataset_description,
        "orig_examples": format_examples(shots.original, schema),
        "imputed_examples": format_examples(shots.imputed, schema),
        "target_example": format_target(shots.held_out.text),
    }
    return render(skeleton, catalog, version, data)


# -- helpers for the distributional / soft-label / one-of-three templates -------

def format_numbered_shots(pairs: Sequence[tuple[str, str]]) -> str:
    return "\n\n".join(f"{k}.\nEXAMPLE: {text}\nANSWER: {ans}" for k, (text, ans) in enumerate(pairs, 1))


def format_distribution(soft_label: Sequence[float]) -> str:
    return "\n".join(f"{100.0 * p:.2f}" for p in soft_label)


def distribution_excluding(labels_by_annotator: Mapping[int, int], exclude: int, schema: LabelSchema) -> np.ndarray:
    """Soft label of one item with the target annotator's own label left out."""
    vals = [lab for j, lab in labels_by_annotator.items() if j != exclude]
    counts = np.zeros(schema.n_labels)
    for lab in vals:
        counts[schema.index(lab)] += 1
    return counts / counts.sum() if counts.sum() else counts


def format_soft_label_examples(examples: Sequence[tuple[int, str, Sequence[float]]]) -> str:
    return "\n\n".join(
        f"Example {item}\nText: {text}\nSoft labels:\n{format_distribution(dist)}"
        for item, text, dist in examples
    )


def format_soft_label_target(text: str) -> str:
    return f"Target Text: {text}\nSoft labels:"
