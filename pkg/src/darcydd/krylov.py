"""Right-preconditioned restarted GMRES for singular consistent systems.

The fine matrix annihilates constants, so a compatible right-hand side
(zero sum) keeps every Krylov iterate inside the range and GMRES returns
the least-squares solution.  Right preconditioning keeps the stopping
rule on the true residual of the original system; the returned solution
is normalized to zero mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass
class SolveReport:
    """Iteration record of one solve; residuals has iterations+1 entries."""

    iterations: int
    residuals: list[float]
    converged: bool
    final_residual: float
    final_relative: float
    timings: dict = field(default_factory=dict)


@dataclass
class CondEstimate:
    """Condition estimate sigma_max / sigma_2 (second-smallest singular value)."""

    value: float
    sigma_max: float
    sigma_two: float
    mode: str
    uncertainty: float = 0.0

    def __float__(self) -> float:
        return self.value


def _as_callable(op, n: int):
    if op is None:
        return lambda v: v
    if callable(op) and not sp.issparse(op) and not isinstance(op, np.ndarray):
        return op
    linop = spla.aslinearoperator(op)
    if linop.shape != (n, n):
        raise ValueError(f"operator shape {linop.shape} does not match vector size {n}")
    return lambda v: linop @ v


def gmres(
    a,
    b: np.ndarray,
    m=None,
    tol: float = 1e-5,
    restart: int = 30,
    maxit: int = 1000,
    x0: np.ndarray | None = None,
    relative: bool = False,
    normalize_mean: bool = True,
) -> tuple[np.ndarray, SolveReport]:
    """Solve ``A x = b`` with restarted GMRES and preconditioner ``m``.

    The convergence criterion is the l2 norm of the unpreconditioned
    residual against ``tol`` (absolute by default).  ``b`` is projected to
    zero sum when it is not compatible already; the returned solution has
    zero mean unless ``normalize_mean`` is disabled.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if restart < 1 or maxit < 0:
        raise ValueError("restart must be >= 1 and maxit >= 0")
    amul = _as_callable(a, n)
    mmul = _as_callable(m, n)

    l1 = np.abs(b).sum()
    s = b.sum()
    if l1 > 0 and abs(s) > 1e-12 * l1:
        b = b - s / n
    target = tol * np.linalg.norm(b) if relative else tol

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    r = b - amul(x)
    beta = float(np.linalg.norm(r))
    history = [beta]
    total = 0
    converged = beta <= target

    while not converged and total < maxit:
        v = np.zeros((restart + 1, n))
        h = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        v[0] = r / beta
        g[0] = beta
        j = -1
        for j in range(restart):
            w = amul(mmul(v[j]))
            if not np.all(np.isfinite(w)):
                raise RuntimeError(f"GMRES breakdown: non-finite operator output at iteration {total + 1}")
            for i in range(j + 1):
                h[i, j] = v[i] @ w
                w -= h[i, j] * v[i]
            h[j + 1, j] = np.linalg.norm(w)
            happy = h[j + 1, j] <= 1e-14 * max(beta, 1.0)
            if not happy:
                v[j + 1] = w / h[j + 1, j]
            for i in range(j):
                t = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
                h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
                h[i, j] = t
            denom = np.hypot(h[j, j], h[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if denom == 0.0 else (h[j, j] / denom, h[j + 1, j] / denom)
            h[j, j] = cs[j] * h[j, j] + sn[j] * h[j + 1, j]
            h[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            history.append(abs(g[j + 1]))
            if abs(g[j + 1]) <= target or happy or total >= maxit:
                break
        k = j + 1
        # lstsq instead of a triangular solve: tolerates the degenerate
        # step where the operator output vanished (happy breakdown)
        y = np.linalg.lstsq(np.triu(h[:k, :k]), g[:k], rcond=None)[0] if k else np.zeros(0)
        x = x + mmul(v[:k].T @ y)
        r = b - amul(x)
        beta = float(np.linalg.norm(r))
        history[-1] = beta
        converged = beta <= target

    if normalize_mean and n:
        x = x - x.mean()
        r = b - amul(x)
        beta = float(np.linalg.norm(r))
        history[-1] = beta
        converged = converged and beta <= target * (1.0 + 1e-9)
    bnorm = float(np.linalg.norm(b))
    report = SolveReport(
        iterations=total,
        residuals=[float(t) for t in history],
        converged=bool(converged),
        final_residual=beta,
        final_relative=beta / bnorm if bnorm > 0 else 0.0,
    )
    return x, report


def _deflate_mean(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def estimate_cond(a, precond=None, mode: str = "dense", dense_cap: int = 20000,
                  precond_dense: np.ndarray | None = None) -> CondEstimate:
    """Condition number sigma_max/sigma_2 of the preconditioned operator.

    mode="dense" forms the operator explicitly and takes its full singular
    spectrum; mode="iterative" estimates both extremes with Lanczos on the
    normal operator, deflating the known constant kernel, and reports the
    worst Ritz residual as the uncertainty.
    """
    a = sp.csr_matrix(a) if sp.issparse(a) or isinstance(a, np.ndarray) else a
    n = a.shape[0]
    papply = precond.apply if hasattr(precond, "apply") else (precond if precond is not None else None)

    if mode == "dense":
        if n > dense_cap:
            raise ValueError(f"order {n} exceeds the dense cap {dense_cap}; use mode='iterative'")
        if not sp.issparse(a) and not isinstance(a, np.ndarray):
            raise ValueError("dense mode needs a materialized matrix; use mode='iterative' for operators")
        a_dense = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=np.float64)
        if precond_dense is not None:
            g = precond_dense @ a_dense
        elif papply is None:
            g = a_dense
        else:
            g = np.column_stack([papply(a_dense[:, j]) for j in range(n)])
        svals = np.linalg.svd(g, compute_uv=False)
        sigma_max = float(svals[0])
        sigma_two = float(svals[-2]) if n >= 2 else float(svals[-1])
        value = sigma_max / sigma_two if sigma_two > 0 else np.inf
        return CondEstimate(value=value, sigma_max=sigma_max, sigma_two=sigma_two, mode="dense")

    if mode != "iterative":
        raise ValueError(f"unknown mode {mode!r}")

    amul = _as_callable(a, n)
    pmul = (lambda v: v) if papply is None else papply

    def gmul(v):
        return pmul(amul(v))

    def gtmul(v):
        # G = P^-1 A with both factors symmetric, so G^T = A P^-1
        return amul(pmul(v))

    def normal(v):
        return _deflate_mean(gtmul(gmul(_deflate_mean(v))))

    nop = spla.LinearOperator((n, n), matvec=normal, dtype=np.float64)
    v0 = _deflate_mean(np.cos(np.arange(n, dtype=np.float64) + 1.0))
    lam_max, vec_max = spla.eigsh(nop, k=1, which="LA", v0=v0, maxiter=5000, tol=1e-8)
    lam_max = float(lam_max[0])
    sigma_max = np.sqrt(max(lam_max, 0.0))

    fold = spla.LinearOperator((n, n), matvec=lambda v: lam_max * _deflate_mean(v) - normal(v), dtype=np.float64)
    lam_fold, vec_min = spla.eigsh(fold, k=1, which="LA", v0=v0, maxiter=5000, tol=1e-8)
    lam_min = max(lam_max - float(lam_fold[0]), 0.0)
    sigma_two = np.sqrt(lam_min)

    def ritz_resid(lam, vec):
        vec = vec[:, 0] / np.linalg.norm(vec[:, 0])
        return float(np.linalg.norm(normal(vec) - lam * vec))

    unc = max(ritz_resid(lam_max, vec_max), ritz_resid(lam_min, vec_min))
    value = sigma_max / sigma_two if sigma_two > 0 else np.inf
    return CondEstimate(value=value, sigma_max=float(sigma_max), sigma_two=float(sigma_two),
                        mode="iterative", uncertainty=unc)
