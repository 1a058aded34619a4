"""Print the per-line feature table for the bundled C example.

Generations come from the scripted mock in tests/fixtures, so the run is
offline and deterministic. Usage: python3 scripts/worked_example.py [C2(20,10)]
"""

import sys
from pathlib import Path

from flagcheck import Criterion, GenerationParams, ScriptedMock, classify_file, load_source, run_file

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main(label: str = "C2(20,10)") -> None:
    criterion = Criterion.parse(label)
    file = load_source(str(FIXTURES / "c1_10.c"))
    backend = ScriptedMock.from_json(FIXTURES / "c1_10_script.json")
    results = run_file(file, "auto", GenerationParams(), backend)
    reported = classify_file(results, criterion, file.language)
    status = {e.line_no: e.removed_by or "flagged" for e in reported.entries}

    print(f"{'line':>4}  {'ld':>3}  {'ld_ws':>5}  {'dfc':>3}  {'bleu1':>6}  {criterion.label:<14} original")
    for r in results:
        f = r.features
        bleu = f"{f.bleu1:.3f}" if f.bleu1 is not None else "-"
        dfc = "-" if f.dfc is None else f.dfc
        print(f"{r.line_no:>4}  {f.ld:>3}  {f.ld_no_ws:>5}  {dfc:>3}  {bleu:>6}  "
              f"{status.get(r.line_no, ''):<14} {r.original}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
