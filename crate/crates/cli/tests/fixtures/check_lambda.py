# Independent check of the projection coefficient on golden.csv.
import csv
import numpy as np

rows = list(csv.DictReader(open("golden.csv")))
y = np.array([float(r["y"]) for r in rows])
t = np.array([int(r["t"]) for r in rows])
x = np.array([[float(r[k]) for k in ("x1", "x2", "x3")] for r in rows])
p = t.mean()
y1, y0 = y[t == 1].mean(), y[t == 0].mean()
x1, x0 = x[t == 1].mean(0), x[t == 0].mean(0)
phi_c = np.where(t == 1, (y - y1) / p, -(y - y0) / (1 - p))
phi_g = np.where(t[:, None] == 1, (x - x1) / p, -(x - x0) / (1 - p))
s_cg = phi_g.T @ phi_c
s_gg = phi_g.T @ phi_g
lam = np.linalg.solve(s_gg, s_cg)
gamma = x1 - x0
c = y1 - y0
print("lambda", " ".join(f"{v:.12f}" for v in lam))
print("c_short", f"{c:.12f}")
print("c_resid", f"{c - lam @ gamma:.12f}")
