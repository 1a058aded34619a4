"""Run the evaluation harness end to end on a generated toy benchmark.

Writes small C/Python/Verilog files with one seeded defect each, scripts the
mock backend to regenerate the defective line (plus some noise lines), then
runs ``eval``, ``sweep``, ``roc`` and ``metadata`` through the CLI.

    python3 scripts/synthetic_benchmark.py --out /tmp/flag-demo --cases 12 --seed 3
"""

import argparse
import json
import random
from pathlib import Path

from flagcheck.cli import main as flagcheck

TEMPLATES = {
    "c": ("c", "// {note}", "int v{i} = v{j} + {k};"),
    "python": ("py", "# {note}", "v{i} = v{j} + {k}"),
    "verilog": ("v", "// {note}", "assign v{i} = v{j} + {k};"),
}
GROUPS = {"c": "C1", "python": "P1", "verilog": "V1"}


def make_case(root: Path, idx: int, language: str, rnd: random.Random) -> tuple[dict, dict]:
    ext, comment, stmt = TEMPLATES[language]
    n = rnd.randint(15, 40)
    lines = []
    for i in range(n):
        if i % rnd.randint(4, 9) == 0:
            lines.append(comment.format(note=f"block {i} updates the running sum"))
        else:
            lines.append(stmt.format(i=i, j=max(i - 1, 0), k=i % 7))
    code_lines = [i for i, text in enumerate(lines) if not text.startswith(("//", "#"))]
    defect = rnd.choice(code_lines)
    name = f"case{idx:02d}.{ext}"
    (root / name).write_text("\n".join(lines) + "\n")

    script = {f"{name}:{defect + 1}": stmt.format(i=defect, j=defect, k=(defect % 7) + 1)}
    for noise in rnd.sample(code_lines, k=min(3, len(code_lines))):
        if noise != defect:
            script[f"{name}:{noise + 1}"] = stmt.format(i=noise, j=noise + rnd.randint(5, 50), k=99)
    case = {"id": f"{GROUPS[language]}-{idx:02d}", "path": name, "language_id": language,
            "defect_lines": [defect + 1], "source_group": GROUPS[language],
            "category": "security" if idx % 2 else "functional"}
    return case, script


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="flag-demo")
    ap.add_argument("--cases", type=int, default=9)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rnd = random.Random(args.seed)
    root = Path(args.out)
    bench = root / "bench"
    bench.mkdir(parents=True, exist_ok=True)
    cases, script = [], {}
    for idx in range(args.cases):
        case, lines = make_case(bench, idx, list(TEMPLATES)[idx % 3], rnd)
        cases.append(case)
        script.update(lines)
    (bench / "manifest.json").write_text(json.dumps(cases, indent=1))
    (bench / "script.json").write_text(json.dumps({"default": {"type": "echo"}, "script": script}, indent=1))

    manifest, runs = str(bench / "manifest.json"), str(root / "eval" / "runs")
    code = flagcheck(["eval", manifest, "--backend", "mock", "--mock-script", str(bench / "script.json"),
                      "--out", str(root / "eval")])
    if code:
        raise SystemExit(code)
    flagcheck(["sweep", "--runs", runs, "--manifest", manifest, "--out", str(root / "sweep.csv")])
    flagcheck(["roc", "--runs", runs, "--manifest", manifest, "--thresholds", "0:30:2", "--sentinel",
               "--out", str(root / "roc.csv")])
    flagcheck(["metadata", "--runs", runs, "--manifest", manifest, "--out", str(root / "metadata.csv")])
    print(f"\nartifacts in {root}/: eval/, sweep.csv, roc.csv, metadata.csv")


if __name__ == "__main__":
    main()
