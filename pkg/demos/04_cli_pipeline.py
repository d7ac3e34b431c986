"""Drive the full experiment pipeline through the command-line tool.

Writes a small JSON config, then runs simulate -> reconstruct ->
compare -> render exactly as one would from a shell, via the `ecgi`
console entry point (invoked in-process here so the demo is a single
script).

Run:  python3 demos/04_cli_pipeline.py
"""
import json
import pathlib

from ecgi.cli import main

root = pathlib.Path(__file__).parent / "out" / "cli"
root.mkdir(parents=True, exist_ok=True)
cfg_path = root / "config.json"

cfg_path.write_text(json.dumps({
    "mesh_subdivisions": 1,
    "mesh_radius": 10.0,
    "sensor_count": 24,
    "n_time_samples": 101,
    "sim_duration": 15.0,
    "noise_levels": [0.05],
    "methods": ["tikh2", "stre"],
    "repeats": 2,
    "base_seed": 0,
    "iterations": 200,
    "output_dir": str(root / "run"),
}, indent=2))

run = root / "run"
for argv in (
    ["--config", str(cfg_path), "simulate"],
    ["--config", str(cfg_path), "reconstruct", "tikh2"],
    ["--config", str(cfg_path), "reconstruct", "stre"],
    ["--config", str(cfg_path), "compare"],
    ["--config", str(cfg_path), "render", str(run / "u.csv"),
     str(run / "mesh.off"), "40", "--svg-out", str(root / "wave.svg")],
):
    print(f"\n$ ecgi {' '.join(argv)}")
    code = main(argv)
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}")

print("\nartifacts:")
for p in sorted(root.rglob("*")):
    if p.is_file():
        print(f"  {p.relative_to(root)}")
