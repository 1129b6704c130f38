#!/usr/bin/env python3
"""Regenerate the bundled mini-corpus (data/corpus.json) and the pretrained
model (data/model.json).

Annotations are derived from compact per-instruction intents by walking the
top-1 parse tree with the same resolution conventions the grounding features
use; the output JSON is frozen into the package so tests never depend on this
script.  Run from the repository root:

    python3 tools/build_corpus.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from tablebot.grammar import cyk_parse, load_grammar, split_instruction, tokenize
from tablebot.grounding import (
    GroundConfig,
    PICKUP_VERBS,
    PLACE_VERBS,
    COMPOSITE_VERBS,
    SPATIAL_DELTA,
    TYPE_WORDS,
    _spatial_holds,
    default_feature_config,
    load_corpus,
    recovery_report,
    save_model,
    train,
)
from tablebot.symbols import ObjectType, Task
from tablebot.world import load_world, world_objects

DATA = ROOT / "src" / "tablebot" / "data"

COLOR_WORDS = {"blue", "red", "green"}
SIDE_WORDS = {"left", "right"}


def resolve_object(objects, types, colors, spatials):
    candidates = [
        o
        for o in objects
        if (not types or o.type in types)
        and (not colors or o.color in colors)
        and all(_spatial_holds(s, o, SPATIAL_DELTA) for s in spatials)
    ]
    if len(candidates) == 1:
        return candidates[0]
    return None


def annotate_sentence(tree, tokens, objects, intent):
    """Walk the tree assigning gold descriptors per node path."""
    ann: dict[str, list[str]] = {}
    type_overrides = intent.get("type_overrides", {})

    def put(path, descs):
        if descs:
            ann[path] = sorted(set(descs))

    def walk(node, path):
        child_paths = [f"{path}.{i}" if path else str(i) for i in range(len(node.children))]
        child_golds = [walk(child, p) for child, p in zip(node.children, child_paths)]
        flat = [d for golds in child_golds for d in golds]

        if node.is_leaf:
            word = node.word
            golds: list[str] = []
            if node.tag == "JJ" and word in COLOR_WORDS:
                golds = [f"color:{word}"]
            elif node.tag == "JJ" and word in SIDE_WORDS:
                golds = [f"spatial:{word}"]
            elif node.tag == "NNR":
                golds = [f"spatial:{word}"]
            elif node.tag == "NN":
                type_name = type_overrides.get(word) or TYPE_WORDS[word][0].value
                golds = [f"type:{type_name}"]
            elif node.tag == "PRO":
                golds = [f"obj:{intent['pronoun']}"]
            put(path, golds)
            return golds

        tag = node.tag
        if tag == "PPW":
            # prepositional nodes do not export bare objects upward
            return []
        if tag in ("NML", "NPR", "PPS", "VPC"):
            put(path, flat)
            return flat
        if tag in ("NPB", "NPL"):
            types = {ObjectType(d.split(":")[1]) for d in flat if d.startswith("type:")}
            colors = {d.split(":")[1] for d in flat if d.startswith("color:")}
            spatials = [d.split(":")[1] for d in flat if d.startswith("spatial:")]
            carried_obj = [d for d in flat if d.startswith("obj:")]
            if carried_obj:
                put(path, carried_obj)
                return carried_obj
            obj = resolve_object(objects, types, colors, spatials)
            golds = [f"obj:{obj.id}"] if obj else flat
            put(path, golds)
            return golds
        if tag == "PP":
            prep = node.children[0].word
            target = [d for d in flat if d.startswith("obj:")]
            assert target, f"unresolved PP object under {path}: {flat}"
            golds = [f"region:{prep}:{target[0].split(':', 1)[1]}"]
            put(path, golds)
            return golds
        if tag == "VP":
            span = tokens[node.start : node.end]
            verbs = [w for w in span if w in PICKUP_VERBS | PLACE_VERBS]
            side_in_span = any(w in SIDE_WORDS for w in span)
            subtree_objs = {d.split(":", 1)[1] for d in flat if d.startswith("obj:")}
            subtree_regions = {d for d in flat if d.startswith("region:")}
            carried_actions = [d for d in flat if d.startswith("action:")]
            golds = list(carried_actions)
            for pickup in intent.get("pickups", []):
                if pickup["target"] not in subtree_objs:
                    continue
                if not any(v in PICKUP_VERBS or v in COMPOSITE_VERBS for v in verbs):
                    continue
                sides = [pickup["side"]] if side_in_span else ["left", "right"]
                for side in sides:
                    golds.append(f"action:pickup_{side}:{pickup['target']}")
            for place in intent.get("places", []):
                dest = place["dest"]
                if not any(d.endswith(f":{dest}") for d in subtree_regions):
                    continue
                if not any(v in PLACE_VERBS for v in verbs):
                    continue
                golds.append(f"action:{place['prop']}:{dest}")
            put(path, golds)
            return golds
        put(path, flat)
        return flat

    walk(tree, "")
    root_scopes = []
    for pickup in intent.get("pickups", []):
        root_scopes.append(f"scope:pickup_{pickup['side']}:{pickup['target']}")
    for place in intent.get("places", []):
        root_scopes.append(f"scope:{place['prop']}:{place['dest']}")
    ann[""] = sorted(root_scopes)
    return {path: ann[path] for path in sorted(ann)}


def pick(target, side):
    return {"target": target, "side": side}


def place_bin(side):
    return {"dest": f"bin_{side}", "prop": f"place_{side}_bin"}


def place_on(color, dest_id):
    return {"dest": dest_id, "prop": f"place_on_{color}"}


SORTING_INSTRUCTIONS = [
    ("sort_01", "Pick up the blue cube with your right hand.",
     [{"pickups": [pick("cube_blue_1", "right")]}]),
    ("sort_02", "Pick up the red cube with your left hand.",
     [{"pickups": [pick("cube_red_1", "left")]}]),
    ("sort_03", "Pick up the blue block and put it in the right bin.",
     [{"pickups": [pick("cube_blue_1", "right")], "places": [place_bin("right")],
       "pronoun": "cube_blue_1"}]),
    ("sort_04", "Pick up the red block and put it in the left bin.",
     [{"pickups": [pick("cube_red_1", "left")], "places": [place_bin("left")],
       "pronoun": "cube_red_1"}]),
    ("sort_05", "Put the blue cube in the right bin.",
     [{"pickups": [pick("cube_blue_1", "right")], "places": [place_bin("right")]}]),
    ("sort_06", "Put the red cube in the left bin.",
     [{"pickups": [pick("cube_red_1", "left")], "places": [place_bin("left")]}]),
    ("sort_07", "Sort the blue cubes into the right bin.",
     [{"pickups": [pick("cube_blue_1", "right")], "places": [place_bin("right")]}]),
    ("sort_08", "Sort the red cubes into the left bin.",
     [{"pickups": [pick("cube_red_1", "left")], "places": [place_bin("left")]}]),
    ("sort_09", "Put the blue cube in the right bin and put the red cube in the left bin.",
     [{"pickups": [pick("cube_blue_1", "right"), pick("cube_red_1", "left")],
       "places": [place_bin("right"), place_bin("left")]}]),
    ("sort_10", "Pick up the blue block with your right hand and drop it in the right bin.",
     [{"pickups": [pick("cube_blue_1", "right")], "places": [place_bin("right")],
       "pronoun": "cube_blue_1"}]),
    ("sort_11", "Take the blue cube and place it in the bin on the right.",
     [{"pickups": [pick("cube_blue_1", "right")], "places": [place_bin("right")],
       "pronoun": "cube_blue_1"}]),
    ("sort_12", "Take the red cube and place it in the bin on the left.",
     [{"pickups": [pick("cube_red_1", "left")], "places": [place_bin("left")],
       "pronoun": "cube_red_1"}]),
    ("sort_13", "Drop the red cube into the left bin.",
     [{"places": [place_bin("left")]}]),
    ("sort_14", "Put the blue cube in the box on the right.",
     [{"pickups": [pick("cube_blue_1", "right")], "places": [place_bin("right")],
       "type_overrides": {"box": "bin"}}]),
]

STACKING_INSTRUCTIONS = [
    ("stack_01", "Take the red cube. Put the red cube on the green cube.",
     [{"pickups": [pick("cube_red_1", "right")]},
      {"pickups": [pick("cube_red_1", "right")],
       "places": [place_on("green", "cube_green_1")]}]),
    ("stack_02", "Take red cube.",
     [{"pickups": [pick("cube_red_1", "right")]}]),
    ("stack_03", "Take the green cube and stack it on the red cube.",
     [{"pickups": [pick("cube_green_1", "right")],
       "places": [place_on("red", "cube_red_1")], "pronoun": "cube_green_1"}]),
    ("stack_04", "Pick up the blue cube and place it on the green cube.",
     [{"pickups": [pick("cube_blue_1", "right")],
       "places": [place_on("green", "cube_green_1")], "pronoun": "cube_blue_1"}]),
    ("stack_05", "Stack the blue cube on the red cube.",
     [{"places": [place_on("red", "cube_red_1")]}]),
    ("stack_06", "Take a green cube. Put green cube on red cube.",
     [{"pickups": [pick("cube_green_1", "right")]},
      {"pickups": [pick("cube_green_1", "right")],
       "places": [place_on("red", "cube_red_1")]}]),
    ("stack_07", "Pick up the green block with your right hand.",
     [{"pickups": [pick("cube_green_1", "right")]}]),
    ("stack_08", "Take the blue cube. Stack the blue cube on the green cube.",
     [{"pickups": [pick("cube_blue_1", "right")]},
      {"places": [place_on("green", "cube_green_1")]}]),
    ("stack_09", "Put the red cube on the green cube.",
     [{"pickups": [pick("cube_red_1", "right")],
       "places": [place_on("green", "cube_green_1")]}]),
    ("stack_10", "Take the green cube and put it on the blue cube.",
     [{"pickups": [pick("cube_green_1", "right")],
       "places": [place_on("blue", "cube_blue_1")], "pronoun": "cube_green_1"}]),
]


def build() -> None:
    grammar = load_grammar(DATA / "grammar.txt")
    worlds = {
        "sorting_env2": load_world(DATA / "worlds" / "sorting_env2.json"),
        "stacking_env4": load_world(DATA / "worlds" / "stacking_env4.json"),
    }
    records = []
    jobs = [("sorting_env2", Task.SORTING, SORTING_INSTRUCTIONS),
            ("stacking_env4", Task.STACKING, STACKING_INSTRUCTIONS)]
    for world_id, task, instructions in jobs:
        world = worlds[world_id]
        objects = world_objects(world)
        for iid, text, intents in instructions:
            sentences = split_instruction(text)
            assert len(sentences) == len(intents), iid
            sentence_records = []
            for sentence, intent in zip(sentences, intents):
                tokens = tokenize(sentence)
                tree = cyk_parse(tokens, grammar, k=1)[0]
                annotations = annotate_sentence(tree, tokens, objects, intent)
                sentence_records.append(
                    {"tokens": tokens, "tree": tree.bracketed(), "annotations": annotations}
                )
            records.append(
                {"id": iid, "text": text, "world": world_id, "task": task.value,
                 "sentences": sentence_records}
            )
    corpus = {"version": 1, "instructions": records}
    (DATA / "corpus.json").write_text(json.dumps(corpus, indent=1) + "\n")
    print(f"wrote corpus with {len(records)} instructions")

    examples = load_corpus(DATA / "corpus.json", worlds)
    model = train(examples, worlds, default_feature_config(), GroundConfig())
    save_model(model, DATA / "model.json")
    print(f"trained model with {len(model.weights)} features")

    report = recovery_report(examples, worlds, model, grammar)
    print(f"train-set recovery: {report['recovered']}/{report['instructions']}")
    for row in report["detail"]:
        if not row["recovered"]:
            print("  MISS", row["id"])


if __name__ == "__main__":
    build()
