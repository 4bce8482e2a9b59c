"""Rule-based scene descriptions from the scene graph.

One header sentence covers the characters, action, and place; every relation
node then yields one sentence, phrased subject-first when a character is the
subject and object-first when the character is the relation's object.
"""

from __future__ import annotations

from dataclasses import dataclass

from .scenegraph import (
    CHARACTER_RELATION,
    OBJECT_RELATION,
    RELATION_CHARACTER,
    RELATION_OBJECT,
    SceneGraph,
)


@dataclass(frozen=True)
class Description:
    sentences: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.sentences)


def _join(labels: list[str]) -> str:
    """Render a label list as "a", "a and b", or "a, b and c" (no Oxford comma)."""
    if len(labels) == 1:
        return labels[0]
    return ", ".join(labels[:-1]) + " and " + labels[-1]


def _capitalize(sentence: str) -> str:
    return sentence[0].upper() + sentence[1:] if sentence else sentence


def _strip_prefix(node_ref: str) -> str:
    return node_ref.split(":", 1)[1]


def _header_sentence(g: SceneGraph) -> str:
    if not g.characters:
        body = f"Someone is {g.action}"
    elif len(g.characters) == 1:
        body = f"{g.characters[0]} is {g.action}"
    else:
        body = f"{_join(list(g.characters))} are {g.action}"
    if g.place is not None:
        body += f" at {g.place}"
    return _capitalize(body + ".")


def _relation_sentence(g: SceneGraph, node_id: str, label: str) -> str:
    into, out = g.relation_edges(node_id)
    char_subjects = [_strip_prefix(e.src) for e in into if e.kind == CHARACTER_RELATION]
    object_subjects = [_strip_prefix(e.src) for e in into if e.kind == OBJECT_RELATION]
    char_objects = [_strip_prefix(e.dst) for e in out if e.kind == RELATION_CHARACTER]
    object_targets = [_strip_prefix(e.dst) for e in out if e.kind == RELATION_OBJECT]

    if char_subjects:
        # character-to-character relations fall back to the subject-first form
        targets = object_targets or char_objects
        sentence = f"{char_subjects[0]} {label} {_join(targets)}."
    elif char_objects:
        sentence = f"{_join(object_subjects)} {label} {char_objects[0]}."
    else:
        raise ValueError(f"relation node {node_id} has no character endpoint")
    return _capitalize(sentence)


def generate_description(g: SceneGraph) -> Description:
    """Generate the scene description; one sentence per true graph condition."""
    sentences = [_header_sentence(g)]
    for node in g.relations:
        sentences.append(_relation_sentence(g, node.node_id, node.label))
    return Description(sentences=tuple(sentences))
