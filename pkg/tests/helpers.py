"""Shared oracles and random generators for the tests."""

import math

import numpy as np
from scipy import linalg

from robolin import expr as ex


def random_expr(rng: np.random.Generator, depth: int, names=("x", "y")):
    """Random smooth expression of depth <= ``depth`` that stays finite on [-1, 1]^2."""
    if depth <= 1 or rng.random() < 0.15:
        if rng.random() < 0.7:
            return ex.var(names[rng.integers(len(names))])
        return ex.const(float(np.round(rng.uniform(-2, 2), 3)))
    a = random_expr(rng, depth - 1, names)
    kind = rng.integers(11)
    if kind == 0:
        return ex.sin(a)
    if kind == 1:
        return ex.cos(a)
    if kind == 2:
        return ex.exp(ex.sin(a))
    if kind == 3:
        return ex.ln(1 + a * a)
    if kind == 4:
        return ex.sqrt(1 + a * a)
    if kind == 5:
        return a ** int(rng.integers(2, 4))
    b = random_expr(rng, depth - 1, names)
    if kind == 6:
        return a + b
    if kind == 7:
        return a - b
    if kind == 8:
        return a * b
    if kind == 9:
        return a / (2 + ex.sin(b))
    return -a


def lqg_oracle(A, B1, B2, C2, D2, R, G):
    """Classical LQG gains from scipy's Riccati solvers.

    Control:  A'X + XA - X B1 G^-1 B1' X + R = 0,  K = -G^-1 B1' X.
    Filter with correlated noise (process B2 W, measurement D2 W):
    Q = B2 B2', S = B2 D2', V = D2 D2', L = (Y C2' + S) V^-1.
    """
    X = linalg.solve_continuous_are(A, B1, R, G)
    K = -np.linalg.solve(G, B1.T @ X)
    Q, S, V = B2 @ B2.T, B2 @ D2.T, D2 @ D2.T
    Y = linalg.solve_continuous_are(A.T, C2.T, Q, V, s=S)
    L = (Y @ C2.T + S) @ np.linalg.inv(V)
    return X, Y, K, L


def random_lqg_model(rng, n=4, m=2, ny=2):
    from robolin.meanval import AssemblyConventions, LinearizedDesignModel

    while True:
        A = rng.normal(size=(n, n))
        B1 = rng.normal(size=(n, m))
        C2 = rng.normal(size=(ny, n))
        if np.linalg.matrix_rank(np.hstack([np.linalg.matrix_power(A, k) @ B1 for k in range(n)])) == n:
            break
    B2 = np.hstack([0.5 * B1, np.zeros((n, ny))])
    D2 = np.hstack([np.zeros((ny, m)), np.eye(ny)])
    return LinearizedDesignModel(
        A, B1, B2, np.zeros((m, n)), C2, np.zeros((m, m)), D2, 0.0, np.eye(m),
        np.zeros((m, n)), np.zeros((m, m)), (n,), AssemblyConventions(tuple(range(ny))),
    )


def chain_exactness(dec, chain, x0, v_levels, dt=1e-3, hold=200):
    """Simulate the nominal plant under the linearizing law with piecewise-constant v.

    Returns two relative errors: the r_i-th output derivative measured through
    the actual vector field against v_i, and the logged derivative chains
    [y, y', ..., y^(r-1)] against an exactly integrated integrator chain.
    """
    from robolin.feedlin import linearizing_control
    from robolin.sim import rk4_step

    states = list(dec.space.states)
    m = len(chain.outputs)
    f0 = ex.compile_exprs(list(dec.f0), states)
    g0 = ex.compile_exprs([e for row in dec.g0 for e in row], states)
    tops = [chain.output_derivatives(i)[-1] for i in range(m)]
    grads = ex.compile_exprs([ex.diff(t, s) for t in tops for s in states], states)
    lows = ex.compile_exprs([e for i in range(m) for e in chain.output_derivatives(i)], states)
    n = len(states)

    def field(x, v):
        u = linearizing_control(chain, x, v)
        return np.array(f0(list(x))) + np.array(g0(list(x))).reshape(n, m) @ u

    x = np.asarray(x0, dtype=float)
    z = np.array(lows(list(x)))
    deriv_err = traj_err = 0.0
    for v in v_levels:
        v = np.asarray(v, dtype=float)
        for _ in range(hold):
            xdot = field(x, v)
            meas = np.array(grads(list(x))).reshape(m, n) @ xdot
            deriv_err = max(deriv_err, float(np.max(np.abs(meas - v) / (1.0 + np.abs(v)))))
            x = rk4_step(lambda t, s: field(s, v), 0.0, x, dt)
            # integrator chains driven by constant v advance by an exact Taylor polynomial
            pos = 0
            for i in range(m):
                r = len(chain.chains[i])
                block = z[pos:pos + r].copy()
                for j in range(r):
                    acc = 0.0
                    for k in range(j, r):
                        acc += block[k] * dt ** (k - j) / math.factorial(k - j)
                    acc += v[i] * dt ** (r - j) / math.factorial(r - j)
                    z[pos + j] = acc
                pos += r
            got = np.array(lows(list(x)))
            traj_err = max(traj_err, float(np.max(np.abs(got - z) / (1.0 + np.abs(z)))))
    return deriv_err, traj_err


def random_definite_care(rng: np.random.Generator, n=4, m=2):
    """Random CARE with M = B B' (PSD) and Q = C'C + 0.1 I, plus scipy's solution."""
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    C = rng.normal(size=(n, n))
    Q = C.T @ C + 0.1 * np.eye(n)
    X = linalg.solve_continuous_are(A, B, Q, np.eye(m))
    return A, B @ B.T, Q, X


def random_stable_system(rng: np.random.Generator, n=4, m=2, p=2):
    A = rng.normal(size=(n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.2, 1.0)) * np.eye(n)
    return A, rng.normal(size=(n, m)), rng.normal(size=(p, n)), rng.normal(size=(p, m))
