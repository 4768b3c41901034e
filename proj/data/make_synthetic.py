"""Writes nhanes_synthetic.csv: a two-stage informative sample shaped like an
exam-survey extract (30 PSUs x 10 persons), with a few incomplete rows."""
import csv
import math
import random

rng = random.Random(20240601)
rows = []
seqn = 83000
for stratum in range(15):
    for half in (1, 2):
        psu = f"{stratum + 1}-{half}"
        u = rng.gauss(0.0, 1.2)
        psu_pi = rng.gauss(0.0, 0.3)
        for _ in range(10):
            seqn += 1
            age = rng.randint(20, 80)
            female = rng.randint(0, 1)
            race = rng.choice([1, 2, 3, 3, 3, 4, 4, 5])
            income = round(min(5.0, max(0.0, rng.gauss(2.4, 1.4))), 2)
            bmi = (24.0 + 0.05 * age + 0.8 * female + {1: 1.5, 2: 0.5, 3: 0.0, 4: 2.0, 5: -1.5}[race]
                   - 0.4 * income + u + rng.gauss(0.0, 4.0))
            log_pi = -10.5 + 0.06 * bmi - 0.004 * age + psu_pi + rng.gauss(0.0, 0.35)
            rows.append([seqn, psu, age, female, race, f"{income:.2f}", f"{bmi:.1f}",
                         f"{math.exp(-log_pi):.1f}"])

rows[17][5] = "NA"   # missing income
rows[101][6] = ""    # missing response
rows[230][7] = "0"   # zero weight

with open("nhanes_synthetic.csv", "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["seqn", "psu", "age", "female", "race", "income_ratio", "bmi", "exam_weight"])
    w.writerows(rows)
