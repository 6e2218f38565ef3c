"""Post-hoc correction of predicted probabilities from frozen causal effects.

A strong causal link raises a borderline medication over the selection
threshold. A weak link pulls a confident but unsupported one below it.
"""
import numpy as np

from medcausal.correction import CorrectionConfig, audit_rows, correct

raw = np.array([0.45, 0.55, 0.80, 0.05, 0.92])
effect = np.array([0.99, 0.50, 0.93, 0.98, 0.20])

result = correct(raw, effect, CorrectionConfig())
print("med  raw   effect  branch    corrected  selected")
for m in range(len(raw)):
    print(f"  {m}  {raw[m]:.2f}  {effect[m]:.2f}    {result.branch[m]:<9} {result.corrected[m]:.2f}"
          f"       {m in result.selected}")
print("\nselected without correction:", sorted(np.flatnonzero(raw >= 0.5).tolist()))
print("selected with correction:   ", sorted(result.selected))

print("\naudit rows as written by `medcausal explain`:")
for row in audit_rows("demo", 0, result, [f"M{m}" for m in range(len(raw))]):
    print("  ", row)
