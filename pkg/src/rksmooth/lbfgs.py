"""Limited-memory BFGS with a strong-Wolfe line search."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import RKSmoothError


class LineSearchFailed(RKSmoothError):
    """Raised when no step satisfying the Wolfe conditions was found.

    ``x``, ``f`` and ``g`` hold the best iterate reached before the failure and
    ``diagnostics`` the optimizer state at that point.
    """

    def __init__(self, x, f, g, diagnostics):
        self.x, self.f, self.g, self.diagnostics = x, f, g, diagnostics
        super().__init__(f"line search failed after {diagnostics.iterations} iterations")


@dataclass
class LBFGSOptions:
    memory: int = 10
    max_iter: int = 50_000
    grad_tol: float = 1e-8
    cost_tol: float = 1e-12
    cost_window: int = 5
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 50


@dataclass
class LBFGSDiagnostics:
    iterations: int = 0
    evaluations: int = 0
    reason: str = ""
    cost: float = np.nan
    grad_norm: float = np.nan
    history: list = field(default_factory=list)


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic through two points with slopes, or None."""
    if a == b:
        return None
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.copysign(np.sqrt(disc), b - a)
    denom = gb - ga + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def strong_wolfe(phi, f0, g0, alpha0, c1=1e-4, c2=0.9, max_evals=50, alpha_max=1e10):
    """Bracketing + zoom search (Nocedal & Wright, Alg. 3.5/3.6).

    ``phi(alpha)`` returns ``(f, slope, payload)``. Returns ``(alpha, f, payload,
    evals)`` on success, or ``(None, best_f, best_payload, evals)`` on failure
    where the best entry is the lowest finite value seen.
    """
    evals = 0
    best = (None, f0, None)

    def call(a):
        nonlocal evals, best
        evals += 1
        f, slope, payload = phi(a)
        if np.isfinite(f) and f < best[1]:
            best = (a, f, payload)
        return f, slope, payload

    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = alpha0
    while evals < max_evals:
        f, g, payload = call(a)
        if not np.isfinite(f) or not np.isfinite(g):
            # overshoot into a region where the model blows up
            a = 0.5 * (a_prev + a) if a > a_prev else 0.5 * a
            continue
        if f > f0 + c1 * a * g0 or (evals > 1 and f >= f_prev):
            return _zoom(call, f0, g0, a_prev, f_prev, g_prev, a, f, g, c1, c2, max_evals, lambda: evals, lambda: best)
        if abs(g) <= -c2 * g0:
            return a, f, payload, evals
        if g >= 0:
            return _zoom(call, f0, g0, a, f, g, a_prev, f_prev, g_prev, c1, c2, max_evals, lambda: evals, lambda: best)
        a_prev, f_prev, g_prev = a, f, g
        a = min(2.0 * a, alpha_max)
    return None, best[1], best[2], evals


def _zoom(call, f0, g0, lo, flo, glo, hi, fhi, ghi, c1, c2, max_evals, n_evals, best):
    while n_evals() < max_evals:
        a = _cubic_min(lo, flo, glo, hi, fhi, ghi)
        width = abs(hi - lo)
        if a is None or not np.isfinite(a) or abs(a - lo) < 0.1 * width or abs(a - hi) < 0.1 * width:
            a = 0.5 * (lo + hi)
        f, g, payload = call(a)
        if not np.isfinite(f) or not np.isfinite(g) or f > f0 + c1 * a * g0 or f >= flo:
            hi, fhi, ghi = a, (f if np.isfinite(f) else np.inf), (g if np.isfinite(g) else 0.0)
            if not np.isfinite(fhi):
                fhi, ghi = flo + abs(glo) * width, abs(glo)
        else:
            if abs(g) <= -c2 * g0:
                return a, f, payload, n_evals()
            if g * (hi - lo) >= 0:
                hi, fhi, ghi = lo, flo, glo
            lo, flo, glo = a, f, g
        if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
            break
    b = best()
    return None, b[1], b[2], n_evals()


def lbfgs_minimize(fun: Callable, x0, options: LBFGSOptions | None = None,
                   callback: Callable | None = None):
    """Minimize ``fun(x) -> (f, grad)`` from ``x0``.

    Returns ``(x, diagnostics)`` where ``diagnostics.reason`` is one of
    ``grad_tol``, ``cost_tol`` or ``max_iter``. Accepted iterates never increase
    the cost. Raises :class:`LineSearchFailed` carrying the best iterate.
    """
    opt = options or LBFGSOptions()
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    diag = LBFGSDiagnostics(evaluations=1)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise RKSmoothError("objective is not finite at the starting point")
    N = x.size
    mem = opt.memory
    S = np.zeros((mem, N))
    Yv = np.zeros((mem, N))
    rho = np.zeros(mem)
    alpha_buf = np.zeros(mem)
    stored = 0
    head = 0
    costs = [f]

    def finish(reason):
        diag.reason = reason
        diag.cost = float(f)
        diag.grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
        diag.history = costs
        return x, diag

    k = 0
    while True:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= opt.grad_tol:
            return finish("grad_tol")
        if k >= opt.cost_window:
            f_old = costs[-1 - opt.cost_window]
            if (f_old - f) <= opt.cost_tol * max(abs(f), np.finfo(float).tiny):
                return finish("cost_tol")
        if k >= opt.max_iter:
            return finish("max_iter")

        # two-loop recursion
        d = -g.copy()
        order = [(head - 1 - i) % mem for i in range(stored)]
        for i in order:
            alpha_buf[i] = rho[i] * (S[i] @ d)
            d -= alpha_buf[i] * Yv[i]
        if stored:
            last = order[0]
            d *= (S[last] @ Yv[last]) / (Yv[last] @ Yv[last])
        for i in reversed(order):
            beta = rho[i] * (Yv[i] @ d)
            d += (alpha_buf[i] - beta) * S[i]

        slope0 = float(g @ d)
        if not slope0 < 0:
            # lost descent: restart from steepest descent
            stored = 0
            d = -g
            slope0 = float(g @ d)
        alpha0 = 1.0 if stored else min(1.0, 1.0 / max(float(np.sqrt(-slope0)), 1e-300))

        cache = {}

        def phi(a):
            xa = x + a * d
            fa, ga = fun(xa)
            cache[a] = (xa, ga)
            slope = float(ga @ d) if np.all(np.isfinite(ga)) else np.nan
            return fa, slope, a

        step, f_new, a_key, evals = strong_wolfe(phi, f, slope0, alpha0, opt.c1, opt.c2, opt.max_ls)
        diag.evaluations += evals
        if step is None:
            if a_key is not None and stored:
                # keep the best decrease found, drop curvature memory and retry
                x_new, g_new = cache[a_key]
                x, f, g = x_new, f_new, g_new
                stored = 0
                k += 1
                diag.iterations = k
                costs.append(f)
                continue
            diag.iterations = k
            finish("line_search")
            raise LineSearchFailed(x, f, g, diag)
        x_new, g_new = cache[step]
        s_vec = x_new - x
        y_vec = g_new - g
        sy = float(s_vec @ y_vec)
        yy = float(y_vec @ y_vec)
        if sy > 1e-10 * yy and sy > 0 and yy > 0:
            S[head] = s_vec
            Yv[head] = y_vec
            rho[head] = 1.0 / sy
            head = (head + 1) % mem
            stored = min(stored + 1, mem)
        x, f, g = x_new, f_new, g_new
        k += 1
        diag.iterations = k
        costs.append(f)
        if callback is not None:
            callback(k, x, f)
