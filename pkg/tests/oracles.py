"""Independent reference implementations used only by the tests.

None of these import the package's solvers or score code: they re-derive
the same quantities from the defining formulas, as directly as possible.
"""

import math

import numpy as np
from scipy import optimize, sparse, special


# -- ERM ---------------------------------------------------------------------


def hinge_lasso_objective(X, A, beta, lam):
    return float(np.mean(np.maximum(0.0, 1.0 - A * (X @ beta))) + lam * np.abs(beta).sum())


def grid_search_hinge_lasso(X, A, lam, lo=-2.0, hi=2.0, step=0.01):
    """Minimum of the hinge-lasso objective over the full grid ``{lo, lo+step, ..., hi}^3``.

    For every ``(b1, b2)`` pair the objective restricted to the grid in ``b3`` is a
    discretely convex sequence (a convex function sampled at equally spaced
    points), so a vectorised binary search over ``b3`` locates the exact grid
    minimum without visiting all 401^3 points.
    """
    assert X.shape[1] == 3
    g = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    m = g.size
    b1, b2 = np.meshgrid(g, g, indexing="ij")
    b1, b2 = b1.ravel(), b2.ravel()
    base = np.outer(X[:, 0], b1) + np.outer(X[:, 1], b2)  # n x pairs
    pen12 = lam * (np.abs(b1) + np.abs(b2))

    def f(k):
        b3 = g[k]
        z = base + np.outer(X[:, 2], np.ones_like(b1)) * b3
        return np.mean(np.maximum(0.0, 1.0 - A[:, None] * z), axis=0) + pen12 + lam * np.abs(b3)

    lo_k = np.zeros(b1.size, dtype=int)
    hi_k = np.full(b1.size, m - 1)
    while np.any(hi_k > lo_k):
        mid = (lo_k + hi_k) // 2
        up = f(np.minimum(mid + 1, m - 1)) < f(mid)
        lo_k = np.where(up & (hi_k > lo_k), mid + 1, lo_k)
        hi_k = np.where(~up & (hi_k > lo_k), mid, hi_k)
    vals = f(lo_k)
    best = int(np.argmin(vals))
    return float(vals[best]), np.array([b1[best], b2[best], g[lo_k[best]]])


def lp_hinge_lasso(X, A, lam, weights=None):
    """Exact weighted hinge-lasso optimum by linear programming (nonnegative weights)."""
    n, p = X.shape
    c_w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights) / n
    # variables: b+ (p), b- (p), slack (n)
    c = np.concatenate([np.full(p, lam), np.full(p, lam), c_w])
    AX = A[:, None] * X
    A_ub = sparse.hstack([sparse.csr_matrix(-AX), sparse.csr_matrix(AX), -sparse.identity(n)], format="csr")
    res = optimize.linprog(c, A_ub=A_ub, b_ub=-np.ones(n), bounds=[(0, None)] * (2 * p + n), method="highs")
    assert res.status == 0, res.message
    beta = res.x[:p] - res.x[p:2 * p]
    return float(res.fun), beta


# -- decorrelation lasso -----------------------------------------------------


def naive_weighted_lasso(Z, y, v, mu, sweeps=100_000, tol=1e-15):
    """Plain cyclic coordinate descent on ``sum_i v_i (y_i - Z_i'w)^2 + mu ||w||_1``."""
    d = Z.shape[1]
    w = np.zeros(d)
    for _ in range(sweeps):
        delta = 0.0
        for j in range(d):
            r_j = y - Z @ w + Z[:, j] * w[j]
            a = np.sum(v * Z[:, j] ** 2)
            b = np.sum(v * Z[:, j] * r_j)
            new = np.sign(b) * max(abs(b) - mu / 2.0, 0.0) / a if a > 0 else 0.0
            delta = max(delta, abs(new - w[j]))
            w[j] = new
        if delta < tol:
            break
    return w


# -- score / information / interval -----------------------------------------


def _H(t):
    if t <= -1.0:
        return 0.0
    if t >= 1.0:
        return 1.0
    return 0.5 + 15.0 / 16.0 * (t - 2.0 * t**3 / 3.0 + t**5 / 5.0)


def _phi_tilde_prime(knots, base, jumps, h, t):
    return base + sum(d * _H((t - k) / h) for k, d in zip(knots, jumps))


def _G(t):
    return math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)


def _hess(knots, jumps, h, t):
    return sum(d * _G((k - t) / h) / h for k, d in zip(knots, jumps))


def straight_line_inference(folds, betas, w, l, knots, base, jumps, h_lo, h_gb, alpha):
    """Every quantity of the cross-fitted procedure, one sample at a time.

    ``folds`` is a list of ``(X, W_plus, W_minus)`` triples (plain Python loops).
    """
    K = len(folds)
    S_null = S_full = var = info = 0.0
    p = len(betas[0])
    for (X, Wp, Wm), beta in zip(folds, betas):
        n_k = len(X)
        zeroed = list(beta)
        zeroed[l] = 0.0
        for i in range(n_k):
            x = X[i]
            r = x[l] - sum(x[j] * w[j if j < l else j - 1] for j in range(p) if j != l)
            z_full = sum(x[j] * beta[j] for j in range(p))
            z_null = sum(x[j] * zeroed[j] for j in range(p))
            psi_full = (Wp[i] * _phi_tilde_prime(knots, base, jumps, h_lo, z_full)
                        - Wm[i] * _phi_tilde_prime(knots, base, jumps, h_lo, -z_full)) * r
            psi_null = (Wp[i] * _phi_tilde_prime(knots, base, jumps, h_lo, z_null)
                        - Wm[i] * _phi_tilde_prime(knots, base, jumps, h_lo, -z_null)) * r
            omega = Wp[i] * _hess(knots, jumps, h_gb, z_full) + Wm[i] * _hess(knots, jumps, h_gb, -z_full)
            S_null += psi_null / (K * n_k)
            S_full += psi_full / (K * n_k)
            var += psi_full**2 / (K * n_k)
            info += omega * r * r / (K * n_k)
    n = sum(len(X) for X, _, _ in folds)
    sigma = math.sqrt(var)
    beta_bar = sum(b[l] for b in betas) / K
    z = math.sqrt(n) * abs(S_null) / sigma
    p_value = 2.0 * (1.0 - float(special.ndtr(z)))
    beta_tilde = beta_bar - S_full / info
    half = float(special.ndtri(1.0 - alpha / 2.0)) * sigma / (math.sqrt(n) * info)
    return dict(S=S_null, S_full=S_full, sigma=sigma, info=info, beta_bar=beta_bar, z=z, p=p_value,
                beta_tilde=beta_tilde, ci_low=beta_tilde - half, ci_high=beta_tilde + half)


def bounded_hinge_instance(seed, n=40, p=3):
    """Uniform[-1, 1] design with noisy linear labels; at ``lam=0.1`` the minimiser sits inside [-2, 2]^3."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(99,))))
    X = rng.uniform(-1.0, 1.0, (n, p))
    truth = np.array([1.5, -1.0, 0.5])[:p]
    A = np.where(X @ truth + rng.standard_normal(n) >= 0, 1.0, -1.0)
    return X, A


# -- nuisance models ---------------------------------------------------------


def nw_oracle(X_train, y_train, X_query, screen_k, clip=None):
    """Screened product-Gaussian Nadaraya-Watson fit written out directly."""
    n, p = X_train.shape
    corr = []
    for j in range(p):
        c = np.corrcoef(X_train[:, j], y_train)[0, 1] if np.std(X_train[:, j]) > 0 and np.std(y_train) > 0 else 0.0
        corr.append(abs(c))
    keep = sorted(sorted(range(p), key=lambda j: (-corr[j], j))[:min(screen_k, p)])
    Xs = X_train[:, keep]
    d = len(keep)
    sd = np.array([np.std(Xs[:, j], ddof=1) if n > 1 else 0.0 for j in range(d)])
    bw = n ** (-1.0 / (4 + d)) * np.where(sd > 0, sd, 1.0)
    out = np.empty(len(X_query))
    for q, x in enumerate(X_query[:, keep]):
        k = np.exp(-0.5 * np.sum(((Xs - x) / bw) ** 2, axis=1))
        out[q] = k @ y_train / k.sum()
    if clip is not None:
        out = np.clip(out, *clip)
    return out


def itr_weights_oracle(train_X, train_A, train_Y, X, A, Y, screen_k=20, clip=(0.05, 0.95)):
    p1 = nw_oracle(train_X, (train_A == 1).astype(float), X, screen_k, clip)
    W = {}
    for a, pa in ((1, p1), (-1, 1.0 - p1)):
        arm = train_A == a
        q = nw_oracle(train_X[arm], train_Y[arm], X, screen_k)
        ind = (A == a).astype(float)
        W[a] = Y * ind / pa + (ind - pa) / pa * q
    return W[1], W[-1]
