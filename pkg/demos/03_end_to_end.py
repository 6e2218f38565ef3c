"""Small end-to-end run through the command line: generate, mine, train, evaluate.

Trains for fewer epochs than the default so it finishes in a few minutes.
Every stage writes a content-addressed directory under the output root, and a
rerun with the same configuration reuses them.
"""
import sys
import tempfile
from pathlib import Path

from medcausal import cli

# fewer epochs than the default; the model starts selecting medications after a few thousand steps
small = ["--set", "epochs=8", "--seed", "0"]
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="medcausal-"))

for command in ("generate", "mine", "train", "evaluate"):
    print(f"$ medcausal {command} --out {out}")
    code = cli.main([command, "--out", str(out)] + small)
    if code:
        raise SystemExit(code)

report = next(out.glob("eval-*/report.csv"))
rows = [line for line in report.read_text().splitlines() if not line.startswith("#")]
print("\n" + "\n".join(rows[:3]))
print(f"\nstage directories: {sorted(p.name for p in out.iterdir())}")
