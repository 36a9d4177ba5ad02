"""Per-step execution program and its solvers.

At each decision step we choose quantities ``u`` (percent of the parent) for a
ladder of candidate orders to minimise

    (c*pi)'u + gamma*(q + pi'u - s_next)**2 + xi*(Q - q - pi'u)

subject to 0 <= u <= kappa, an upper tube on the total submitted, a lower tube
on the guaranteed (market) slice and a cap ``beta`` on the fill variance
u'Sigma u. The lower tube is softened with a slack variable priced at
``SLACK_PENALTY`` per unit so that the program is always feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mpcexec.models import (
    CandidateOrder,
    FillModel,
    OrderType,
    RolloutMode,
    StaticLadderFill,
    build_ladder,
    fill_covariance,
    rollout_cost,
    trading_cost,
)
from mpcexec.orderbook import Side
from mpcexec.schedule import Schedule

SLACK_PENALTY = 1e6
FEAS_TOL = 1e-8
TIE_BREAK = 1e-9


class DimensionMismatch(ValueError):
    pass


class Infeasible(RuntimeError):
    pass


class NumericalFailure(RuntimeError):
    pass


class DimensionTooLarge(ValueError):
    pass


@dataclass
class MpcConfig:
    """Optimiser hyperparameters; percent-of-parent units throughout."""

    gamma: float = 1.0
    beta: float = 5.0
    rho_upper: float = 15.0
    rho_lower: float = 15.0
    kappa: float = 50.0
    d: int = 11
    rollout: RolloutMode = RolloutMode.DEFAULT
    tube: str = "constant"  # "constant" or "linear"

    def validate(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.rho_upper < 0 or self.rho_lower < 0:
            raise ValueError("tube half-widths must be non-negative")
        if self.d < 2:
            raise ValueError("d must be at least 2")
        if self.tube not in ("constant", "linear"):
            raise ValueError(f"unknown tube schedule {self.tube!r}")
        self.rollout = RolloutMode(self.rollout)

    def tube_at(self, t_next: int, T: int) -> tuple[float, float]:
        """Tube half-widths around s_{t+1}; both collapse to zero at the horizon."""
        if t_next >= T:
            return 0.0, 0.0
        if self.tube == "linear":
            frac = (T - t_next) / (T - 1) if T > 1 else 0.0
            return self.rho_upper * frac, self.rho_lower * frac
        return self.rho_upper, self.rho_lower


@dataclass
class MpcProblem:
    c: np.ndarray
    pi: np.ndarray
    sigma: np.ndarray
    q: float
    s_next: float
    gamma: float
    xi: float
    kappa: float
    rho_upper: float
    rho_lower: float
    beta: float
    market_mask: np.ndarray
    Q: float = 100.0

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float)
        self.pi = np.asarray(self.pi, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.market_mask = np.asarray(self.market_mask, dtype=bool)
        d = len(self.c)
        if self.pi.shape != (d,) or self.sigma.shape != (d, d) or self.market_mask.shape != (d,):
            raise DimensionMismatch(
                f"c{self.c.shape} pi{self.pi.shape} sigma{self.sigma.shape} mask{self.market_mask.shape}"
            )
        if self.gamma < 0 or self.beta <= 0 or self.kappa <= 0:
            raise ValueError("need gamma >= 0, beta > 0, kappa > 0")
        if self.rho_upper < 0 or self.rho_lower < 0:
            raise ValueError("tube half-widths must be non-negative")
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-14):
            raise ValueError("sigma must be symmetric")
        lo = np.linalg.eigvalsh(self.sigma)[0] if d else 0.0
        if lo < -1e-10:
            raise ValueError(f"sigma is not PSD (smallest eigenvalue {lo:.3g})")
        if lo < 0:
            w, v = np.linalg.eigh(self.sigma)
            self.sigma = (v * np.maximum(w, 0.0)) @ v.T
            self.sigma = 0.5 * (self.sigma + self.sigma.T)

    @property
    def d(self) -> int:
        return len(self.c)

    @property
    def offset(self) -> float:
        """Deviation from schedule if nothing further fills: q - s_next."""
        return self.q - self.s_next

    @property
    def upper_capacity(self) -> float:
        # never plan past the parent quantity, even inside the tube
        return min(self.s_next + self.rho_upper, self.Q) - self.q

    @property
    def lower_requirement(self) -> float:
        return self.s_next - self.rho_lower - self.q

    @property
    def quadratic(self) -> np.ndarray:
        """Matrix A with the deviation penalty's quadratic part equal to u'Au."""
        return self.gamma * np.outer(self.pi, self.pi)

    @property
    def linear(self) -> np.ndarray:
        return (self.c - self.xi) * self.pi + 2.0 * self.gamma * self.offset * self.pi

    @property
    def constant(self) -> float:
        return self.xi * (self.Q - self.q) + self.gamma * self.offset**2

    def slack(self, u: np.ndarray) -> float:
        return max(0.0, self.lower_requirement - float(u[self.market_mask].sum()))

    def objective(self, u: np.ndarray) -> float:
        """Expected stage cost plus rollout cost, including the slack penalty."""
        u = np.asarray(u, dtype=float)
        m_hat = self.offset + self.pi @ u
        value = (
            (self.c * self.pi) @ u
            + self.gamma * m_hat**2
            + self.xi * (self.Q - self.q - self.pi @ u)
        )
        return float(value + SLACK_PENALTY * self.slack(u))

    def violations(self, u: np.ndarray) -> dict[str, float]:
        """Positive entries are violations of the hard constraints."""
        u = np.asarray(u, dtype=float)
        return {
            "nonnegative": float(-u.min()) if len(u) else 0.0,
            "max_order": float((u - self.kappa).max()) if len(u) else 0.0,
            # once fills overshoot the tube nothing can be undone, so zero is compliant
            "upper_tube": float(u.sum() - max(self.upper_capacity, 0.0)),
            "variance": float(u @ self.sigma @ u - self.beta),
        }

    def is_feasible(self, u: np.ndarray, tol: float = FEAS_TOL) -> bool:
        return all(v <= tol for v in self.violations(u).values())


@dataclass
class ControlVector:
    u: np.ndarray
    m_hat: float
    v_hat: float
    objective: float
    slack: float = 0.0
    iterations: int = 0

    @classmethod
    def from_u(cls, problem: MpcProblem, u: np.ndarray, iterations: int = 0) -> ControlVector:
        u = np.asarray(u, dtype=float)
        return cls(
            u=u,
            m_hat=float(problem.offset + problem.pi @ u),
            v_hat=float(u @ problem.sigma @ u),
            objective=problem.objective(u),
            slack=problem.slack(u),
            iterations=iterations,
        )


@dataclass
class DecisionState:
    """What the policy sees at a decision time."""

    t: int
    T: int
    q: float  # filled, percent of parent
    side: Side
    mid: float  # ticks
    spread: float  # ticks
    best_same: int | None
    close: float | None = None


def build_problem(
    state: DecisionState,
    schedule: Schedule,
    config: MpcConfig,
    fill_model: FillModel | None = None,
) -> tuple[MpcProblem, list[CandidateOrder]]:
    fill_model = fill_model or StaticLadderFill()
    ladder = build_ladder(state.side, state.best_same, config.d)
    pi = fill_model.probabilities(ladder)
    sigma = fill_covariance(pi)
    c = trading_cost(ladder, state.mid, state.spread, state.side)
    xi = rollout_cost(config.rollout, state.side, state.mid, state.spread, state.close)
    rho_u, rho_l = config.tube_at(state.t + 1, state.T)
    problem = MpcProblem(
        c=c,
        pi=pi,
        sigma=sigma,
        q=state.q,
        s_next=schedule.at(state.t + 1),
        gamma=config.gamma,
        xi=xi,
        kappa=config.kappa,
        rho_upper=rho_u,
        rho_lower=rho_l,
        beta=config.beta,
        market_mask=np.array([o.kind is OrderType.MARKET for o in ladder]),
        Q=schedule.Q,
    )
    return problem, ladder


# --------------------------------------------------------------------------
# interior point solver


def _interior_point(
    A2: np.ndarray,
    g: np.ndarray,
    S: np.ndarray,
    kappa: float,
    U: float,
    L: float | None,
    beta: float,
    mask: np.ndarray,
    u0: np.ndarray,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, int]:
    """Primal-dual path following for

        min u'(A2/2)u + g'u  s.t.  0 <= u <= kappa, 1'u <= U, m'u >= L, u'Su <= beta

    from a strictly feasible ``u0``. The lower row is dropped when ``L`` is None.
    Rows are stacked as [-u, u - kappa, 1'u - U, L - m'u, u'Su - beta].
    """
    # balance the objective against the unit-scale barrier start
    scale = max(1.0, float(np.abs(g).max()), float(np.abs(A2).max()) * kappa)
    A2 = A2 / scale
    g = g / scale
    d = len(g)
    has_low = L is not None
    n_rows = 2 * d + 3
    m = n_rows - (not has_low)
    S2 = 2.0 * S
    low_mask = mask if has_low else np.zeros(d)
    low = L if has_low else -1.0
    # Jacobian of the linear rows
    J = np.vstack([-np.eye(d), np.eye(d), np.ones((1, d)), -low_mask[None, :]])

    def rows(u):
        f = np.empty(n_rows)
        f[:d] = -u
        f[d : 2 * d] = u - kappa
        f[2 * d] = u.sum() - U
        f[2 * d + 1] = low - low_mask @ u
        f[2 * d + 2] = u @ S @ u - beta
        return f

    u = u0.copy()
    f = rows(u)
    lam = -1.0 / f
    if not has_low:
        lam[2 * d + 1] = 0.0

    def max_step(lam, dlam):
        neg = dlam < 0
        return min(1.0, float((-lam[neg] / dlam[neg]).min())) if neg.any() else 1.0

    def primal_step(u, du, f):
        # largest step keeping every row negative; the quadratic row is solved exactly
        lin = np.concatenate([-du, du, [du.sum()], [-low_mask @ du]])
        grow = lin > 0
        step = float((-f[:-1][grow] / lin[grow]).min()) if grow.any() else np.inf
        a = du @ S @ du
        b = 2.0 * (u @ S @ du)
        c = f[-1]
        if a > 0:
            step = min(step, (-b + math.sqrt(b * b - 4.0 * a * c)) / (2.0 * a))
        elif b > 0:
            step = min(step, -c / b)
        return min(1.0 / 0.99, step)

    it = 0
    for it in range(1, max_iter + 1):
        eta = -(f @ lam)
        Su2 = S2 @ u
        grad_q = Su2
        r_dual = A2 @ u + g + J.T @ lam[:-1] + lam[-1] * grad_q
        if eta <= tol and np.abs(r_dual).max() <= 1e-9 * (1.0 + np.abs(g).max()):
            break
        Df = np.vstack([J, grad_q[None, :]])
        w = -lam / f
        H = A2 + lam[-1] * S2 + (Df.T * w) @ Df
        try:
            chol = np.linalg.cholesky(H)
        except np.linalg.LinAlgError as exc:
            # the barrier weights blow up only once the gap is negligible
            if eta <= 1e-8 and np.abs(r_dual).max() <= 1e-7 * (1.0 + np.abs(g).max()):
                break
            raise NumericalFailure("Newton matrix is not positive definite") from exc

        def direction(r_cent):
            rhs = -r_dual - Df.T @ (r_cent / f)
            du = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
            dlam = (r_cent - lam * (Df @ du)) / f
            return du, dlam

        # fixed centring, then a residual-decrease line search
        inv_t = eta / (10.0 * m)
        r_cent = -lam * f - inv_t
        if not has_low:
            r_cent[2 * d + 1] = 0.0
        du, dlam = direction(r_cent)
        if not has_low:
            dlam[2 * d + 1] = 0.0

        res0 = math.sqrt(r_dual @ r_dual + r_cent @ r_cent)
        s = 0.99 * min(max_step(lam, dlam), primal_step(u, du, f))
        while True:
            nu = u + s * du
            nf = rows(nu)
            if (nf < 0).all():
                nlam = lam + s * dlam
                nrd = A2 @ nu + g + J.T @ nlam[:-1] + nlam[-1] * (S2 @ nu)
                nrc = -nlam * nf - inv_t
                if not has_low:
                    nrc[2 * d + 1] = 0.0
                if math.sqrt(nrd @ nrd + nrc @ nrc) <= (1.0 - 0.01 * s) * res0:
                    break
            s *= 0.5
            if s < 1e-14:
                break
        if s < 1e-14:
            # no further progress at working precision
            if eta <= 1e-8 and np.abs(r_dual).max() <= 1e-7 * (1.0 + np.abs(g).max()):
                break
            raise NumericalFailure(f"line search failed to reduce the residual (gap {eta:.3g})")
        u, f, lam = nu, nf, nlam
    else:
        eta = -(f @ lam)
        if eta > 1e-7:
            raise NumericalFailure(f"no convergence after {max_iter} iterations (gap {eta:.3g})")
    return u, it


def solve(
    problem: MpcProblem,
    warm_start: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 250,
) -> ControlVector:
    """Primal-dual interior point solve of the softened program.

    When the lower tube cannot be met even with the whole guaranteed slice at
    its cap, the slack is priced above any other marginal cost, so that slice
    is pinned at its maximum and the rest is solved without the lower row.
    Iterates stay strictly inside the hard constraints, so the returned point
    is feasible. ``warm_start`` is blended with a central point before use.
    """
    p = problem
    d = p.d
    U = p.upper_capacity
    if U <= 1e-12:
        return ControlVector.from_u(p, np.zeros(d))
    L = p.lower_requirement
    mask = p.market_mask
    n_mkt = int(mask.sum())
    g_full = p.linear + TIE_BREAK * np.arange(d)
    A2_full = 2.0 * p.quadratic

    u_out = np.zeros(d)
    free = np.ones(d, dtype=bool)
    U_free, L_free = U, L
    if n_mkt:
        if np.abs(p.sigma[mask]).max() > 0:
            raise ValueError("guaranteed-fill candidates must have zero fill variance")
        mkt_max = min(p.kappa * n_mkt, U)
        if L >= mkt_max - 1e-9:
            # pin the guaranteed slice: fill the cheapest market candidates to kappa
            idx = np.flatnonzero(mask)
            idx = idx[np.argsort(g_full[idx], kind="stable")]
            left = mkt_max
            for i in idx:
                u_out[i] = min(p.kappa, left)
                left -= u_out[i]
            free = ~mask
            U_free = U - mkt_max
            L_free = None
    if not n_mkt or L_free is not None and L_free <= 0:
        L_free = None
    if not n_mkt and L > 0:
        # no guaranteed candidates: the lower tube can only be met through slack
        L_free = None

    k = int(free.sum())
    if k == 0 or U_free <= 1e-12:
        return ControlVector.from_u(p, u_out)
    fixed = u_out
    A2 = A2_full[np.ix_(free, free)]
    g = g_full[free] + A2_full[np.ix_(free, ~free)] @ fixed[~free]
    S = p.sigma[np.ix_(free, free)]
    fmask = mask[free].astype(float)

    # strictly feasible start; the guaranteed slice sits between the lower
    # bound and its cap, everything else shares half of what is left
    u0 = np.zeros(k)
    rest = np.ones(k, dtype=bool)
    room = U_free
    if L_free is not None:
        n_low = fmask.sum()
        top = min(p.kappa * n_low, U_free)
        share = 0.5 * (max(L_free, 0.0) + top)
        u0[fmask > 0] = share / n_low
        rest = fmask == 0
        room = U_free - share
    n_rest = int(rest.sum())
    if n_rest:
        ones = np.ones(n_rest)
        alpha = min(p.kappa, room / n_rest)
        S_rest = S[np.ix_(rest, rest)]
        var = float(ones @ S_rest @ ones)
        if var > 0:
            alpha = min(alpha, math.sqrt(p.beta / var))
        u0[rest] = 0.5 * alpha
    if warm_start is not None and len(warm_start) == d:
        blended = 0.9 * np.clip(np.asarray(warm_start, dtype=float)[free], 0.0, None) + 0.1 * u0
        ok = (
            blended.sum() < U_free
            and (blended < p.kappa).all()
            and (blended > 0).all()
            and blended @ S @ blended < p.beta
            and (L_free is None or fmask @ blended > L_free)
        )
        if ok:
            u0 = blended

    u_free, it = _interior_point(A2, g, S, p.kappa, U_free, L_free, p.beta, fmask, u0, tol, max_iter)
    u_free[u_free < 1e-11] = 0.0
    u_out[free] = u_free
    return ControlVector.from_u(p, u_out, iterations=it)


# --------------------------------------------------------------------------
# brute-force oracle


def _objective_many(p: MpcProblem, P: np.ndarray) -> np.ndarray:
    m_hat = p.offset + P @ p.pi
    slack = np.maximum(0.0, p.lower_requirement - P[:, p.market_mask].sum(axis=1))
    return (
        P @ (p.c * p.pi)
        + p.gamma * m_hat**2
        + p.xi * (p.Q - p.q - P @ p.pi)
        + SLACK_PENALTY * slack
    )


def _feasible_many(p: MpcProblem, P: np.ndarray, cap: float, U: float) -> np.ndarray:
    var = np.einsum("ij,jk,ik->i", P, p.sigma, P)
    return (P <= cap + 1e-12).all(axis=1) & (P.sum(axis=1) <= U + 1e-12) & (var <= p.beta + 1e-12)


def _line_minimise(p: MpcProblem, u: np.ndarray, v: np.ndarray, cap: float, U: float) -> float:
    """Exact minimiser over s of the objective along u + s*v within the feasible set."""
    lo, hi = -np.inf, np.inf
    for ui, vi in zip(u, v):
        if vi > 0:
            lo, hi = max(lo, -ui / vi), min(hi, (cap - ui) / vi)
        elif vi < 0:
            lo, hi = max(lo, (cap - ui) / vi), min(hi, -ui / vi)
    sv = v.sum()
    if sv > 0:
        hi = min(hi, (U - u.sum()) / sv)
    elif sv < 0:
        lo = max(lo, (U - u.sum()) / sv)
    a2 = v @ p.sigma @ v
    a1 = 2.0 * (u @ p.sigma @ v)
    a0 = u @ p.sigma @ u - p.beta
    if a2 > 1e-15:
        disc = a1 * a1 - 4 * a2 * a0
        if disc < 0:
            return 0.0
        root = math.sqrt(disc)
        lo = max(lo, (-a1 - root) / (2 * a2))
        hi = min(hi, (-a1 + root) / (2 * a2))
    elif a1 > 0:
        hi = min(hi, -a0 / a1)
    elif a1 < 0:
        lo = max(lo, -a0 / a1)
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi - lo < 1e-15:
        return 0.0

    # objective along the line: gamma*(b0 + b1 s)^2 + l1 s + penalty*max(0, k0 - k1 s)
    b0 = p.offset + p.pi @ u
    b1 = p.pi @ v
    l1 = ((p.c - p.xi) * p.pi) @ v
    k0 = p.lower_requirement - u[p.market_mask].sum()
    k1 = v[p.market_mask].sum()
    candidates = [lo, hi, 0.0]
    breaks = []
    if k1 != 0:
        sb = k0 / k1
        if lo < sb < hi:
            breaks.append(sb)
    candidates += breaks
    for slope_pen in (0.0, -SLACK_PENALTY * k1):
        if p.gamma * b1 * b1 > 0:
            s = -(2 * p.gamma * b0 * b1 + l1 + slope_pen) / (2 * p.gamma * b1 * b1)
            if lo < s < hi:
                candidates.append(s)

    def phi(s):
        return p.gamma * (b0 + b1 * s) ** 2 + l1 * s + SLACK_PENALTY * max(0.0, k0 - k1 * s)

    best = min(candidates, key=phi)
    return best if phi(best) < phi(0.0) else 0.0


def oracle_solve(problem: MpcProblem, grid_step: float = 1e-3, max_dim: int = 4, seed: int = 0) -> ControlVector:
    """Exhaustive grid search over the feasible box, zoomed to ``grid_step`` and
    polished by exact line searches along coordinate and pairwise directions."""
    p = problem
    d = p.d
    if d > max_dim:
        raise DimensionTooLarge(f"oracle limited to d <= {max_dim}, got {d}")
    U = p.upper_capacity
    if U <= 0:
        return ControlVector.from_u(p, np.zeros(d))
    cap = min(p.kappa, U)
    npts = {1: 4001, 2: 401, 3: 61, 4: 21}[d]

    lo, hi = np.zeros(d), np.full(d, cap)
    best = np.zeros(d)
    best_val = p.objective(best)
    while True:
        axes = [np.linspace(lo[i], hi[i], npts) for i in range(d)]
        P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        feas = _feasible_many(p, P, cap, U)
        if feas.any():
            vals = np.where(feas, _objective_many(p, P), np.inf)
            k = int(np.argmin(vals))
            if vals[k] < best_val:
                best, best_val = P[k].copy(), float(vals[k])
        step = float((hi - lo).max()) / (npts - 1)
        if step <= grid_step:
            break
        lo = np.maximum(best - 2 * step, 0.0)
        hi = np.minimum(best + 2 * step, cap)

    rng = np.random.default_rng(seed)
    dirs = [np.eye(d)[i] for i in range(d)]
    for i in range(d):
        for j in range(i + 1, d):
            dirs.append(np.eye(d)[i] - np.eye(d)[j])
            dirs.append(np.eye(d)[i] + np.eye(d)[j])
    u = best
    for _ in range(400):
        start = p.objective(u)
        extra = [v / np.linalg.norm(v) for v in rng.standard_normal((4 * d, d))]
        for v in dirs + extra:
            s = _line_minimise(p, u, v, cap, U)
            if s:
                cand = np.clip(u + s * v, 0.0, cap)
                if _feasible_many(p, cand[None], cap, U)[0] and p.objective(cand) < p.objective(u):
                    u = cand
        if start - p.objective(u) <= 1e-14 * (1 + abs(start)):
            break
    return ControlVector.from_u(p, u)


def grid_slack(problem: MpcProblem, grid_step: float) -> float:
    """Bound on the objective change over one grid cell (penalty excluded)."""
    p = problem
    cap = min(p.kappa, max(p.upper_capacity, 0.0))
    lin = np.abs((p.c - p.xi) * p.pi).sum()
    quad = 2 * p.gamma * np.abs(p.pi).sum() * (np.abs(p.pi).sum() * cap + abs(p.offset))
    return 0.5 * grid_step * (lin + quad)
