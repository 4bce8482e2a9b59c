"""Typed video scene graph built from characters, place, triplets, and action.

Nodes are characters, at most one place, objects, per-triplet relation nodes,
and exactly one action. Six directed edge kinds connect them; every consumed
triplet contributes one subject-side and one object-side edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import UNKNOWN_LABEL
from .characters import CharacterSet
from .ingest import DetectedTriplet, SceneAnnotations
from .places import PlacePrediction

# relation detector classes that stand in for a person
PERSON_CLASSES = frozenset(
    {"boy", "girl", "guy", "lady", "man", "person", "player", "woman"}
)

IOU_THRESHOLD = 0.5

PLACE_ACTION = "place_action"
ACTION_CHARACTER = "action_character"
CHARACTER_RELATION = "character_relation"
RELATION_CHARACTER = "relation_character"
OBJECT_RELATION = "object_relation"
RELATION_OBJECT = "relation_object"

EDGE_KINDS = (
    PLACE_ACTION,
    ACTION_CHARACTER,
    CHARACTER_RELATION,
    RELATION_CHARACTER,
    OBJECT_RELATION,
    RELATION_OBJECT,
)


@dataclass(frozen=True)
class ResolvedTriplet:
    subject: str
    relation: str
    object: str
    subject_is_character: bool
    object_is_character: bool
    score: float = 0.0


@dataclass(frozen=True)
class RelationNode:
    node_id: str  # "r0", "r1", ...
    label: str


@dataclass(frozen=True)
class TypedEdge:
    kind: str
    src: str
    dst: str


@dataclass(frozen=True)
class SceneGraph:
    characters: tuple[str, ...]
    place: str | None
    objects: tuple[str, ...]
    relations: tuple[RelationNode, ...]
    action: str
    edges: tuple[TypedEdge, ...]

    def relation_edges(self, node_id: str) -> tuple[list[TypedEdge], list[TypedEdge]]:
        """Edges into and out of one relation node (subject side, object side)."""
        into = [e for e in self.edges if e.dst == node_id]
        out = [e for e in self.edges if e.src == node_id]
        return into, out


def character_id(name: str) -> str:
    return f"character:{name}"


def place_id(label: str) -> str:
    return f"place:{label}"


def object_id(label: str) -> str:
    return f"object:{label}"


def action_id(label: str) -> str:
    return f"action:{label}"


def iou(box_a, box_b) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    ix = max(ax, bx)
    iy = max(ay, by)
    ix2 = min(ax + aw, bx + bw)
    iy2 = min(ay + ah, by + bh)
    inter = max(0.0, ix2 - ix) * max(0.0, iy2 - iy)
    union = aw * ah + bw * bh - inter
    if union <= 0:
        return 0.0
    return inter / union


def predict_action(action_scores: dict[str, float]) -> str:
    """Scene action is the argmax of the scene-level scores, ties lexicographic."""
    if not action_scores:
        raise ValueError("empty action scores")
    return min(action_scores, key=lambda label: (-action_scores[label], label))


def _match_character(bbox, frame_index: int, chars: CharacterSet, threshold: float):
    """Best same-frame character for a person box by IoU, or None."""
    best_name = None
    best_iou = 0.0
    for name in chars.names:
        for fi, char_box in chars.boxes[name]:
            if fi != frame_index:
                continue
            overlap = iou(bbox, char_box)
            if overlap >= threshold and (
                overlap > best_iou or (overlap == best_iou and (best_name is None or name < best_name))
            ):
                best_name, best_iou = name, overlap
    return best_name


def resolve_person_boxes(
    triplets: list[tuple[int, DetectedTriplet]],
    chars: CharacterSet,
    iou_threshold: float = IOU_THRESHOLD,
) -> list[ResolvedTriplet]:
    """Rename person-class endpoints to overlapping characters.

    Triplets are given as (frame_index, triplet) pairs so the endpoint boxes
    can be matched against same-frame character boxes. A person endpoint that
    matches no character discards the whole triplet, as does a triplet with no
    character endpoint. Duplicate (subject, relation, object) strings collapse,
    keeping the highest score.
    """
    resolved: dict[tuple[str, str, str], ResolvedTriplet] = {}
    for frame_index, triplet in triplets:
        subject, obj = triplet.subject_label, triplet.object_label
        subject_is_char = object_is_char = False

        if subject in PERSON_CLASSES:
            name = _match_character(triplet.subject_bbox, frame_index, chars, iou_threshold)
            if name is None:
                continue
            subject, subject_is_char = name, True
        if obj in PERSON_CLASSES:
            name = _match_character(triplet.object_bbox, frame_index, chars, iou_threshold)
            if name is None:
                continue
            obj, object_is_char = name, True
        if not (subject_is_char or object_is_char):
            continue

        key = (subject, triplet.relation_label, obj)
        candidate = ResolvedTriplet(
            subject=subject,
            relation=triplet.relation_label,
            object=obj,
            subject_is_character=subject_is_char,
            object_is_character=object_is_char,
            score=triplet.score,
        )
        # dict assignment keeps first-occurrence position under dedup
        if key not in resolved or candidate.score > resolved[key].score:
            resolved[key] = candidate
    return list(resolved.values())


def build_graph(
    chars: CharacterSet,
    place: PlacePrediction,
    triplets: list[ResolvedTriplet],
    action: str,
) -> SceneGraph:
    """Assemble the scene graph node sets and the six edge kinds."""
    if not action:
        raise ValueError("empty action")

    characters = tuple(chars.names)
    char_set = set(characters)
    place_label = None if place.label == UNKNOWN_LABEL else place.label

    edges: list[TypedEdge] = []
    if place_label is not None:
        edges.append(TypedEdge(PLACE_ACTION, place_id(place_label), action_id(action)))
    for name in characters:
        edges.append(TypedEdge(ACTION_CHARACTER, action_id(action), character_id(name)))

    objects: list[str] = []

    def object_node(label: str) -> str:
        if label not in objects:
            objects.append(label)
        return object_id(label)

    relations: list[RelationNode] = []
    for triplet in triplets:
        node = RelationNode(node_id=f"r{len(relations)}", label=triplet.relation)
        relations.append(node)
        # membership in the character set decides the edge kind on each side
        if triplet.subject in char_set:
            edges.append(TypedEdge(CHARACTER_RELATION, character_id(triplet.subject), node.node_id))
        else:
            edges.append(TypedEdge(OBJECT_RELATION, object_node(triplet.subject), node.node_id))
        if triplet.object in char_set:
            edges.append(TypedEdge(RELATION_CHARACTER, node.node_id, character_id(triplet.object)))
        else:
            edges.append(TypedEdge(RELATION_OBJECT, node.node_id, object_node(triplet.object)))

    return SceneGraph(
        characters=characters,
        place=place_label,
        objects=tuple(objects),
        relations=tuple(relations),
        action=action,
        edges=tuple(edges),
    )


def validate_graph(g: SceneGraph) -> None:
    """Check node and edge typing invariants; raises ValueError on violation."""
    if not g.action:
        raise ValueError("graph has no action node")
    if UNKNOWN_LABEL in g.characters or g.place == UNKNOWN_LABEL or UNKNOWN_LABEL in g.objects:
        raise ValueError("unknown label leaked into the graph")
    if set(g.characters) & set(g.objects):
        raise ValueError("object nodes overlap character nodes")

    char_ids = {character_id(n) for n in g.characters}
    object_ids = {object_id(n) for n in g.objects}
    relation_ids = {r.node_id for r in g.relations}
    aid = action_id(g.action)
    pid = place_id(g.place) if g.place is not None else None

    allowed = {
        PLACE_ACTION: (lambda e: e.src == pid and e.dst == aid),
        ACTION_CHARACTER: (lambda e: e.src == aid and e.dst in char_ids),
        CHARACTER_RELATION: (lambda e: e.src in char_ids and e.dst in relation_ids),
        RELATION_CHARACTER: (lambda e: e.src in relation_ids and e.dst in char_ids),
        OBJECT_RELATION: (lambda e: e.src in object_ids and e.dst in relation_ids),
        RELATION_OBJECT: (lambda e: e.src in relation_ids and e.dst in object_ids),
    }
    for edge in g.edges:
        if edge.kind not in allowed:
            raise ValueError(f"unknown edge kind {edge.kind!r}")
        if not allowed[edge.kind](edge):
            raise ValueError(f"edge endpoints do not match kind: {edge}")


def scene_graph_from_annotations(
    scene: SceneAnnotations,
    chars: CharacterSet,
    place: PlacePrediction,
    iou_threshold: float = IOU_THRESHOLD,
) -> SceneGraph:
    """Build the graph for one scene from its annotations and character set."""
    tagged = [(frame.frame_index, t) for frame in scene.frames for t in frame.triplets]
    resolved = resolve_person_boxes(tagged, chars, iou_threshold)
    action = predict_action(scene.action_scores)
    return build_graph(chars, place, resolved, action)


def graph_to_record(g: SceneGraph) -> dict:
    return {
        "schema_version": 1,
        "characters": list(g.characters),
        "place": g.place,
        "objects": list(g.objects),
        "relations": [{"id": r.node_id, "label": r.label} for r in g.relations],
        "action": g.action,
        "edges": [{"kind": e.kind, "src": e.src, "dst": e.dst} for e in g.edges],
    }


def graph_from_record(record: dict) -> SceneGraph:
    return SceneGraph(
        characters=tuple(record["characters"]),
        place=record["place"],
        objects=tuple(record["objects"]),
        relations=tuple(RelationNode(r["id"], r["label"]) for r in record["relations"]),
        action=record["action"],
        edges=tuple(TypedEdge(e["kind"], e["src"], e["dst"]) for e in record["edges"]),
    )


def save_graph(g: SceneGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_record(g), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_graph(path) -> SceneGraph:
    with open(path, encoding="utf-8") as fh:
        return graph_from_record(json.load(fh))
