"""Reference values for the t-test and repeated-measures ANOVA.

Run from crates/core:  python3 data/oracle/make_stats_fixtures.py
"""
import json

import numpy as np
import pandas as pd
from scipy import stats
from statsmodels.stats.anova import AnovaRM

rng = np.random.default_rng(20240611)

t_cases = []
for a, b in [([2, 3, 4], [0, 1, 2]), ([0.61, 0.58, 0.64], [0.52, 0.55, 0.50])]:
    r = stats.ttest_ind(a, b, equal_var=True, alternative="greater")
    t_cases.append({"a": a, "b": b, "t": r.statistic, "p": r.pvalue})
for na, nb in [(3, 3), (5, 4), (8, 11), (2, 2)]:
    a = rng.normal(0.3, 1.0, na).round(6).tolist()
    b = rng.normal(0.0, 1.3, nb).round(6).tolist()
    r = stats.ttest_ind(a, b, equal_var=True, alternative="greater")
    t_cases.append({"a": a, "b": b, "t": r.statistic, "p": r.pvalue})

anova_cases = []
for n, k in [(4, 3), (7, 2), (5, 4)]:
    table = (rng.normal(0, 1, (n, k)) + np.arange(k) * 0.4).round(6)
    df = pd.DataFrame(
        [(s, c, table[s, c]) for s in range(n) for c in range(k)],
        columns=["subject", "condition", "value"],
    )
    res = AnovaRM(df, "value", "subject", within=["condition"]).fit().anova_table
    anova_cases.append({
        "table": table.tolist(),
        "f": float(res["F Value"].iloc[0]),
        "p": float(res["Pr > F"].iloc[0]),
    })

with open("data/oracle/stats.json", "w") as f:
    json.dump({"t_test": t_cases, "rm_anova": anova_cases}, f, indent=1)
    f.write("\n")
