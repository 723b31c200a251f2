#!/usr/bin/env python3
"""Sum of per-layer flops in the bundled yolo_like.json."""
import json
import pathlib

here = pathlib.Path(__file__).resolve().parent
graph = json.loads((here.parent / "data" / "yolo_like.json").read_text())
assert len(graph["ops"]) == 31
print(int(sum(op["flops"] for op in graph["ops"])))
