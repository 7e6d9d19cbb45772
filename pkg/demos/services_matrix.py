"""
From capabilities to the services matrix
========================================

Each simulated capability is mapped linearly onto a 0-5 score against the
plant's reference values. Here the matrix for the reference plant is built
from a quick subset of the battery, then the transcribed matrix of all
demonstrators is re-rendered from its score file.
"""

import tempfile
from importlib import resources

from hydroflex import read_score_file, render_matrix, run_campaign

with tempfile.TemporaryDirectory() as out:
    res = run_campaign(stacks=["FS", "VS(DFIM)+SPPS"], services=["inertia", "volt-var"], out=out)
    print(render_matrix(res.matrix, "markdown"))
    print("exit code", res.exit_code)

scores = read_score_file(resources.files("hydroflex") / "data" / "services_matrix_scores.csv")
print(f"\n{len(scores.rows)} demonstrator rows in the transcribed matrix; first three:")
for row in scores.rows[:3]:
    print(" ", row.demonstrator, "|", row.technology)
