"""Random-intercept LMM fixtures and their ML fits.

Writes ../data/lmm20.csv (unbalanced, 3-6 visits) and ../data/lmm20_balanced.csv
(y = b_i + t + e, b_i ~ N(0, 4), e ~ N(0, 0.25), 10 annual visits), then fits
each twice: statsmodels MixedLM (ML) and a direct profile-likelihood search
with explicit marginal covariances. Prints intercept, slope, tau2, sigma2, -2LL.
"""
import os

import numpy as np
import pandas as pd
import statsmodels.formula.api as smf
from scipy.optimize import minimize_scalar

here = os.path.dirname(os.path.abspath(__file__))


def unbalanced():
    rng = np.random.default_rng(4242)
    rows = []
    for i in range(20):
        b = rng.normal(0.0, 0.8)
        n = 3 + i % 4
        start = -rng.uniform(3.0, 10.0)
        for j in range(n):
            t = round(start + j + rng.uniform(-0.15, 0.15), 4)
            y = round(1.5 - 0.3 * t + b + rng.normal(0.0, 0.5), 4)
            rows.append((i + 1, t, y))
    return pd.DataFrame(rows, columns=["ID", "time", "y"])


def balanced():
    rng = np.random.default_rng(20)
    rows = []
    for i in range(20):
        b = rng.normal(0.0, 2.0)
        for j in range(10):
            t = float(j - 9)
            y = round(b + 1.0 * t + rng.normal(0.0, 0.5), 6)
            rows.append((i + 1, t, y))
    return pd.DataFrame(rows, columns=["ID", "time", "y"])


def direct(df):
    groups = [g for _, g in df.groupby("ID")]

    def profile(log_rho):
        rho = np.exp(log_rho)
        xtx = np.zeros((2, 2))
        xty = np.zeros(2)
        logdet = 0.0
        mats = []
        for g in groups:
            n = len(g)
            x = np.column_stack([np.ones(n), g["time"].to_numpy()])
            y = g["y"].to_numpy()
            v = np.eye(n) + rho * np.ones((n, n))
            vinv = np.linalg.inv(v)
            xtx += x.T @ vinv @ x
            xty += x.T @ vinv @ y
            logdet += np.linalg.slogdet(v)[1]
            mats.append((x, y, vinv))
        beta = np.linalg.solve(xtx, xty)
        q = sum((y - x @ beta) @ vinv @ (y - x @ beta) for x, y, vinv in mats)
        n_tot = len(df)
        s2 = q / n_tot
        return n_tot * np.log(s2) + logdet + n_tot * (1 + np.log(2 * np.pi)), beta, s2, rho

    res = minimize_scalar(lambda r: profile(r)[0], bounds=(-10, 5), method="bounded",
                          options={"xatol": 1e-12})
    m2, beta, s2, rho = profile(res.x)
    return beta[0], beta[1], rho * s2, s2, m2


for name, df in [("lmm20", unbalanced()), ("lmm20_balanced", balanced())]:
    df.to_csv(os.path.join(here, "..", "data", name + ".csv"), index=False)
    m = smf.mixedlm("y ~ time", df, groups=df["ID"]).fit(reml=False)
    sm = (m.fe_params["Intercept"], m.fe_params["time"], float(m.cov_re.iloc[0, 0]),
          float(m.scale), -2 * m.llf)
    d = direct(df)
    print(name)
    for label, a, b in zip(["intercept", "slope", "tau2", "sigma2", "minus2ll"], d, sm):
        print(f"  {label:9s} direct {a:.10f}  statsmodels {b:.10f}")
