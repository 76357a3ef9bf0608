"""Compiled coordinate-descent kernels for the Cox and Gaussian lasso paths.

Cox inputs are assumed sorted by follow-up time; tied times share a group,
and ``group_start[k]`` is the first sorted position of group ``k``.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def cox_partials(eta, event, group_of, group_start, group_deaths):
    """Breslow log partial likelihood, its gradient and Hessian diagonal in eta."""
    n = eta.size
    n_groups = group_start.size
    shift = eta.max()
    e = np.exp(eta - shift)
    suffix = np.zeros(n + 1)
    for j in range(n - 1, -1, -1):
        suffix[j] = suffix[j + 1] + e[j]
    cum_a = np.empty(n_groups)
    cum_b = np.empty(n_groups)
    a = 0.0
    b = 0.0
    loglik = 0.0
    for k in range(n_groups):
        dk = group_deaths[k]
        if dk > 0:
            s = suffix[group_start[k]]
            a += dk / s
            b += dk / (s * s)
            loglik -= dk * (np.log(s) + shift)
        cum_a[k] = a
        cum_b[k] = b
    grad = np.empty(n)
    hess = np.empty(n)
    for j in range(n):
        g = group_of[j]
        ea = e[j] * cum_a[g]
        if event[j]:
            loglik += eta[j]
            grad[j] = 1.0 - ea
        else:
            grad[j] = -ea
        h = ea - e[j] * e[j] * cum_b[g]
        hess[j] = h if h > 0.0 else 0.0
    return loglik, grad, hess


@njit(cache=True)
def cox_loglik(eta, event, group_start, group_deaths):
    n = eta.size
    shift = eta.max()
    suffix = np.zeros(n + 1)
    for j in range(n - 1, -1, -1):
        suffix[j] = suffix[j + 1] + np.exp(eta[j] - shift)
    loglik = 0.0
    for k in range(group_start.size):
        dk = group_deaths[k]
        if dk > 0:
            loglik -= dk * (np.log(suffix[group_start[k]]) + shift)
    for j in range(n):
        if event[j]:
            loglik += eta[j]
    return loglik


@njit(cache=True)
def _soft(u, t):
    if u > t:
        return u - t
    if u < -t:
        return u + t
    return 0.0


@njit(cache=True)
def _penalty(beta, pf, lam):
    s = 0.0
    for k in range(beta.size):
        s += pf[k] * abs(beta[k])
    return lam * s


@njit(cache=True)
def cox_fit_one(X, event, group_of, group_start, group_deaths, lam, pf, active_mask,
                beta, tol, coef_tol, max_sweeps, sweeps_used, trace):
    """Penalized Cox fit at a single lambda, warm-started from ``beta`` (updated in place).

    The objective after every accepted outer step is written to ``trace``.
    Returns ``(objective, converged, n_sweeps, n_trace)``.
    """
    n, p = X.shape
    eta = X @ beta
    loglik = cox_loglik(eta, event, group_start, group_deaths)
    obj = -loglik / n + _penalty(beta, pf, lam)
    sweeps = sweeps_used
    trace[0] = obj
    n_trace = 1
    r = np.empty(n)
    v = np.empty(n)
    xv = np.empty(p)
    beta_old = beta.copy()
    for outer in range(trace.size - 1):
        loglik, grad, hess = cox_partials(eta, event, group_of, group_start, group_deaths)
        for j in range(n):
            if hess[j] > 1e-14:
                v[j] = hess[j] / n
                r[j] = grad[j] / hess[j]
            else:
                v[j] = 0.0
                r[j] = 0.0
        for k in range(p):
            s = 0.0
            if active_mask[k]:
                for j in range(n):
                    s += v[j] * X[j, k] * X[j, k]
            xv[k] = s
        beta_old[:] = beta
        # inner coordinate descent on the quadratic surrogate
        full = True
        in_active = np.zeros(p, dtype=np.bool_)
        while True:
            max_change = 0.0
            for k in range(p):
                if not active_mask[k] or xv[k] <= 0.0:
                    continue
                if not full and not in_active[k]:
                    continue
                g = 0.0
                for j in range(n):
                    g += v[j] * X[j, k] * r[j]
                bk = beta[k]
                new = _soft(g + xv[k] * bk, lam * pf[k]) / xv[k]
                if new != bk:
                    diff = new - bk
                    beta[k] = new
                    for j in range(n):
                        r[j] -= diff * X[j, k]
                    ch = xv[k] * diff * diff
                    if ch > max_change:
                        max_change = ch
                    in_active[k] = True
            sweeps += 1
            if sweeps > max_sweeps:
                return obj, False, sweeps, n_trace
            if max_change < tol * 1e-3:
                if full:
                    break
                full = True
            else:
                full = False
        # step-halving keeps the penalized objective monotone
        step = beta - beta_old
        new_obj = 0.0
        for half in range(60):
            cand = beta_old + step
            eta_c = X @ cand
            new_obj = -cox_loglik(eta_c, event, group_start, group_deaths) / n + _penalty(cand, pf, lam)
            if new_obj <= obj + 1e-15 * max(1.0, abs(obj)):
                break
            step *= 0.5
        else:
            beta[:] = beta_old
            return obj, True, sweeps, n_trace
        beta[:] = beta_old + step
        eta = X @ beta
        if n_trace < trace.size:
            trace[n_trace] = new_obj
            n_trace += 1
        max_step = 0.0
        for k in range(p):
            if abs(step[k]) > max_step:
                max_step = abs(step[k])
        decrease = obj - new_obj
        obj = new_obj
        if decrease <= tol * max(1.0, abs(obj)) and max_step < coef_tol:
            return obj, True, sweeps, n_trace
    return obj, False, sweeps, n_trace


@njit(cache=True)
def gaussian_fit_one(Xs, yc, v, lam, pf, active_mask, xv, beta, tol, max_sweeps):
    """Weighted lasso on centered response and standardized covariates.

    ``v`` are observation weights summing to one and ``xv[k] = sum(v * Xs[:, k]**2)``.
    ``beta`` is updated in place; returns ``(converged, n_sweeps)``.
    """
    n, p = Xs.shape
    r = yc - Xs @ beta
    yvar = 0.0
    for j in range(n):
        yvar += v[j] * yc[j] * yc[j]
    thresh = tol * max(yvar, 1e-300)
    in_active = np.zeros(p, dtype=np.bool_)
    full = True
    sweeps = 0
    while True:
        max_change = 0.0
        for k in range(p):
            if not active_mask[k] or xv[k] <= 0.0:
                continue
            if not full and not in_active[k]:
                continue
            g = 0.0
            for j in range(n):
                g += v[j] * Xs[j, k] * r[j]
            bk = beta[k]
            new = _soft(g + xv[k] * bk, lam * pf[k]) / xv[k]
            if new != bk:
                diff = new - bk
                beta[k] = new
                for j in range(n):
                    r[j] -= diff * Xs[j, k]
                ch = xv[k] * diff * diff
                if ch > max_change:
                    max_change = ch
                in_active[k] = True
        sweeps += 1
        if sweeps > max_sweeps:
            return False, sweeps
        if max_change < thresh:
            if full:
                return True, sweeps
            full = True
        else:
            full = False
