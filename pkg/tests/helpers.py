import math

import numpy as np

ACCEPTANCE_LINES = []


def record(cid, title, ok, detail):
    """Store one acceptance line for the end-of-session summary and return `ok`."""
    line = f"[{'PASS' if ok else 'FAIL'}] C{cid:<2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def fd_check(f, params, grads, h=1e-5, n_probe=None, rng=None):
    """Largest relative error between analytic grads and central differences."""
    worst = 0.0
    for p, g in zip(params, grads):
        idx = list(np.ndindex(p.shape))
        if n_probe is not None and len(idx) > n_probe:
            idx = [idx[i] for i in rng.choice(len(idx), n_probe, replace=False)]
        for i in idx:
            old = p[i]
            p[i] = old + h
            up = f()
            p[i] = old - h
            dn = f()
            p[i] = old
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(1e-7, abs(fd) + abs(g[i])))
    return worst


def unrolled_aae(deltas, omegas, beta, lam):
    """Direct sum  A_t = sum_k (beta lam)^k delta_{t+k} prod_{j<k} omega_{t+j}."""
    T = len(deltas)
    out = np.zeros(T)
    for t in range(T):
        acc, w = 0.0, 1.0
        for k in range(T - t):
            acc += (beta * lam) ** k * w * deltas[t + k]
            w *= omegas[t + k]
        out[t] = acc
    return out


def unrolled_gae(r, v, nv, discount, lam):
    d = np.asarray(r) + discount * np.asarray(nv) - np.asarray(v)
    return np.array([sum((discount * lam) ** k * d[t + k] for k in range(len(d) - t)) for t in range(len(d))])


def crra_oracle(mdp, beta, rho, tol=1e-14):
    """Linear value iteration on u = c**rho, maximizing over actions (rho < 0 flips the sign)."""
    U = np.zeros(mdp.n_states)
    u = (1 - beta) * mdp.consumption ** rho
    for _ in range(200000):
        cont = beta * np.einsum("sat,t->sa", mdp.transition, U)
        new = u + (cont.min(axis=1) if rho < 0 else cont.max(axis=1))
        if np.max(np.abs(new - U)) < tol:
            U = new
            break
        U = new
    return U ** (1.0 / rho)


def brute_metrics(r, b=None):
    """Loop-based evaluation of the metric definitions (rf = 0, 252 periods)."""
    T = len(r)
    W = [1.0]
    for x in r:
        W.append(W[-1] * (1 + x))
    mean = sum(r) / T
    var = sum((x - mean) ** 2 for x in r) / (T - 1)
    sd = math.sqrt(var)
    down = math.sqrt(sum(min(x, 0.0) ** 2 for x in r) / T)
    peak, mdd = W[0], 0.0
    for w in W:
        peak = max(peak, w)
        mdd = max(mdd, (peak - w) / peak)
    out = {
        "sr": mean / sd * math.sqrt(252) if sd > 0 else None,
        "sortino": mean / down * math.sqrt(252) if down > 0 else None,
        "mdd_pct": 100 * mdd,
        "cr_pct": 100 * (W[-1] - 1),
        "vol_pct": 100 * sd * math.sqrt(252),
        "calmar": ((1 + W[-1] - 1) ** (252 / T) - 1) / mdd if mdd > 0 else None,
    }
    if b is not None:
        a = [x - y for x, y in zip(r, b)]
        am = sum(a) / T
        asd = math.sqrt(sum((x - am) ** 2 for x in a) / (T - 1))
        out["ir"] = am / asd * math.sqrt(252) if asd > 0 else None
    return out
