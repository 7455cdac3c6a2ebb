"""CMC rank-k and mAP on a tiny hand-made gallery.

    python3 demos/04_retrieval_metrics.py
"""

import numpy as np

from synreid.evaluation import EvalProtocol, evaluate_features

# One query (person 7, camera 0); gallery sorted by distance puts person 7 at ranks 1 and 3.
query = np.array([[0.0]])
gallery = np.array([[0.1], [0.2], [0.3], [0.4], [0.05]])
g_pids = [7, 3, 7, 4, 7]
g_cams = [1, 1, 1, 1, 0]   # the last item shares the query's camera and is filtered out
report = evaluate_features(query, gallery, [7], g_pids, [0], g_cams, EvalProtocol(ranks=(1, 2, 5)))
print(report.to_text(), end="")
print("AP is (1/1 + 2/3) / 2 = 5/6 =", 5 / 6)
