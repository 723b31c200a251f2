#!/usr/bin/env python3
"""Noise-free cost of the all-GPU plan for yolo_like under the "moderate"
preset, evaluated straight from the cost formulas. Writes the golden file."""
import json
import pathlib

here = pathlib.Path(__file__).resolve().parent
root = here.parent
spec = json.loads((root / "data" / "soc_default.json").read_text())
graph = json.loads((root / "data" / "yolo_like.json").read_text())

gpu_freq, gpu_util = 4.99e8, 0.10
gpu = spec["gpu"]
power = gpu["p_static"] + gpu["k_dyn"] * (gpu_freq / gpu["f_max"]) ** 3

latency = 0.0
energy = 0.0
for i, op in enumerate(graph["ops"]):
    if i == 0:
        # the input starts in host memory and moves to the GPU in full
        comm = op["input_bytes"] / spec["bus_bw"] + spec["sync_overhead_s"]
        latency += comm
        energy += spec["p_bus"] * comm
    t_comp = op["flops"] / (gpu["flops_per_cycle"] * gpu_freq * (1.0 - gpu_util))
    t_mem = (op["input_bytes"] + op["output_bytes"]) / gpu["mem_bw"]
    t = max(t_comp, t_mem)
    latency += t
    energy += power * t + spec["p_idle"] * t

out = {"latency_s": latency, "energy_j": energy}
(root / "golden" / "hwsim_yolo_gpuonly.json").write_text(json.dumps(out, indent=2) + "\n")
print(json.dumps(out))
