"""Short-term equilibrium solver and the probe-to-probe update functions.

The short-term equilibrium of the 1 BBR / 1 CUBIC competition with a fixed
probing strength reduces to the unique positive root of a septic polynomial
in the CUBIC window-growth duration.  Two polynomials arise, depending on
whether the BBR bandwidth estimate sits above its floor ``chi`` (congested
branch) or is pinned at it (starved branch).
"""
from __future__ import annotations

from dataclasses import dataclass

from .model import ALPHA_CAP, NetworkConfig, bbr_strengths, bbrv2_strengths

BRANCH_CONGESTED = "S1"
BRANCH_STARVED = "S2"


class BracketError(RuntimeError):
    """Geometric bracket expansion failed; the configuration is malformed."""


def equilibrium_delay(cfg: NetworkConfig) -> float:
    """Per-flow delay in the fluid equilibrium (propagation plus full buffer)."""
    return cfg.path_prop_delay + cfg.buffer / cfg.capacity


@dataclass(frozen=True)
class AlphaHat:
    """Discriminant probing strength separating the two equilibrium branches.

    ``value`` is the solution within (1, 5/4] when one exists.  Otherwise the
    whole reachable strength range lies on the starved side and ``value`` is
    None.
    """

    value: float | None
    in_range: bool

    def branch_for(self, alpha: float) -> str:
        if self.in_range and alpha >= self.value:
            return BRANCH_CONGESTED
        return BRANCH_STARVED


def alpha_hat(cfg: NetworkConfig) -> AlphaHat:
    """Solve for the discriminant strength by bisection on a sign change.

    The left-hand side vanishes at alpha = 1 and increases strictly with
    alpha, so a root exists in (1, 5/4] exactly when the sign has flipped by
    5/4; otherwise every reachable strength selects the starved branch.
    """
    C, chi = cfg.capacity, cfg.chi
    tau_bar = equilibrium_delay(cfg)
    rhs = cfg.cubic_c / (cfg.cubic_b * tau_bar * (C - chi) ** 7)

    def gap(a: float) -> float:
        return a**4 * (a - 1.0) ** 3 / (chi + a * (C - chi)) ** 3 - rhs

    lo, hi = 1.0, ALPHA_CAP
    if gap(hi) < 0.0:
        return AlphaHat(value=None, in_range=False)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return AlphaHat(value=hi, in_range=True)


@dataclass(frozen=True)
class ShortTermEquilibrium:
    """Fixed point of the continuous dynamics for one probing strength."""

    alpha: float
    beta: float
    s_eq: float
    w_max_eq: float
    x_btl_eq: float
    branch: str
    alpha_hat: float | None
    residual: float

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "alpha_hat": self.alpha_hat,
            "s_eq": self.s_eq,
            "w_max_eq": self.w_max_eq,
            "x_btl_eq": self.x_btl_eq,
            "branch": self.branch,
            "residual": self.residual,
        }


def _congested_coeffs(alpha: float, beta: float, cfg: NetworkConfig, tau_bar: float):
    """Septic for the branch where the BBR estimate exceeds its floor.

    poly(s) = a7*s^7 + a4*s^4 + a3*s^3 + a0 with a7 > 0 and the rest <= 0,
    which guarantees a unique positive root.
    """
    b, c, C = cfg.cubic_b, cfg.cubic_c, cfg.capacity
    a7 = (alpha - beta) * c * c / (alpha * b * tau_bar)
    a4 = -(1.0 - beta) * c * C
    a3 = -(alpha - beta) * c / alpha
    a0 = -beta * b * C * tau_bar
    return a7, a4, a3, a0


def _starved_coeffs(beta: float, cfg: NetworkConfig, tau_bar: float):
    """Septic for the branch where the BBR estimate is pinned at chi."""
    b, c, C, chi = cfg.cubic_b, cfg.cubic_c, cfg.capacity, cfg.chi
    a7 = c * c / (b * tau_bar)
    a4 = -c * (C - beta * chi)
    a3 = -c
    a0 = -beta * b * tau_bar * chi
    return a7, a4, a3, a0


def _septic_value(coeffs, s: float) -> float:
    a7, a4, a3, a0 = coeffs
    s3 = s * s * s
    return ((a7 * s3 * s3 * s) + a4 * s3 * s) + a3 * s3 + a0


def _septic_residual(coeffs, s: float) -> float:
    a7, a4, a3, a0 = coeffs
    s3 = s * s * s
    terms = abs(a7 * s3 * s3 * s) + abs(a4 * s3 * s) + abs(a3 * s3) + abs(a0)
    return abs(_septic_value(coeffs, s)) / max(1.0, terms)


def _solve_septic(coeffs, lo: float) -> float:
    """Unique positive root: geometric upper-bracket expansion, then bisection."""
    if _septic_value(coeffs, lo) >= 0.0:
        lo = 0.0
    hi = max(lo, (abs(coeffs[3]) / coeffs[0]) ** (1.0 / 7.0), 1e-12)
    for _ in range(400):
        if _septic_value(coeffs, hi) > 0.0:
            break
        hi *= 2.0
    else:
        raise BracketError(
            f"no sign change while expanding the root bracket (coeffs={coeffs})"
        )
    # Bisect past the nominal 1e-12 relative tolerance down to float
    # exhaustion: the equilibrium loss rate amplifies any residual root
    # error by several orders of magnitude.
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _septic_value(coeffs, mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_equilibrium(
    alpha: float, beta: float, cfg: NetworkConfig, alpha_hat_value: AlphaHat | None = None
) -> ShortTermEquilibrium:
    """Short-term equilibrium for an arbitrary strength pair (alpha, beta).

    Branch selection follows the unrestricted-estimate test: solve the
    congested branch and fall back to the starved branch when the resulting
    estimate would undercut chi.  A strength alpha <= 1 starves the BBR flow
    outright, so the congested branch is skipped.
    """
    if not 0.0 < beta <= alpha:
        raise ValueError(f"need 0 < beta <= alpha, got alpha={alpha}, beta={beta}")
    tau_bar = equilibrium_delay(cfg)
    b, c, C, chi = cfg.cubic_b, cfg.cubic_c, cfg.capacity, cfg.chi
    ah = alpha_hat_value.value if alpha_hat_value and alpha_hat_value.in_range else None

    if alpha > 1.0 and alpha > beta:
        coeffs = _congested_coeffs(alpha, beta, cfg, tau_bar)
        # Turning-point bound: the polynomial decreases up to this point and
        # is still negative there, so the unique root lies beyond it.
        lo = (3.0 * b * tau_bar / (7.0 * c)) ** 0.25
        s = _solve_septic(coeffs, lo)
        w_max = (c / b) * s**3
        x_hat = C - w_max / (alpha * tau_bar)
        if x_hat >= chi:
            return ShortTermEquilibrium(
                alpha=alpha,
                beta=beta,
                s_eq=s,
                w_max_eq=w_max,
                x_btl_eq=max(chi, x_hat),
                branch=BRANCH_CONGESTED,
                alpha_hat=ah,
                residual=_septic_residual(coeffs, s),
            )

    coeffs = _starved_coeffs(beta, cfg, tau_bar)
    lo = (b * tau_bar / c) ** 0.25  # lower bound on all roots
    s = _solve_septic(coeffs, lo)
    return ShortTermEquilibrium(
        alpha=alpha,
        beta=beta,
        s_eq=s,
        w_max_eq=(c / b) * s**3,
        x_btl_eq=chi,
        branch=BRANCH_STARVED,
        alpha_hat=ah,
        residual=_septic_residual(coeffs, s),
    )


def solve_short_term(alpha: float, cfg: NetworkConfig) -> ShortTermEquilibrium:
    """Short-term equilibrium under the BBRv1 strength convention.

    The branch is selected by comparing ``alpha`` to the discriminant
    strength.  The strength coefficient is beta = min(1, alpha), which the
    congestion-window cap enforces; this also makes the two branches meet
    exactly at the discriminant.
    """
    if not 0.0 < alpha <= ALPHA_CAP:
        raise ValueError(f"alpha must lie in (0, {ALPHA_CAP}], got {alpha}")
    ah = alpha_hat(cfg)
    beta = min(1.0, alpha)
    tau_bar = equilibrium_delay(cfg)
    b, c, C, chi = cfg.cubic_b, cfg.cubic_c, cfg.capacity, cfg.chi

    if ah.branch_for(alpha) == BRANCH_CONGESTED:
        coeffs = _congested_coeffs(alpha, beta, cfg, tau_bar)
        lo = (3.0 * b * tau_bar / (7.0 * c)) ** 0.25
        s = _solve_septic(coeffs, lo)
        w_max = (c / b) * s**3
        return ShortTermEquilibrium(
            alpha=alpha,
            beta=beta,
            s_eq=s,
            w_max_eq=w_max,
            x_btl_eq=max(chi, C - w_max / (alpha * tau_bar)),
            branch=BRANCH_CONGESTED,
            alpha_hat=ah.value,
            residual=_septic_residual(coeffs, s),
        )

    coeffs = _starved_coeffs(beta, cfg, tau_bar)
    lo = (b * tau_bar / c) ** 0.25
    s = _solve_septic(coeffs, lo)
    return ShortTermEquilibrium(
        alpha=alpha,
        beta=beta,
        s_eq=s,
        w_max_eq=(c / b) * s**3,
        x_btl_eq=chi,
        branch=BRANCH_STARVED,
        alpha_hat=ah.value,
        residual=_septic_residual(coeffs, s),
    )


def _vanilla_rule(tau_min: float, tau_bar: float) -> tuple:
    return bbr_strengths(tau_min, tau_bar)


def _bbrv2_rule(tau_min: float, tau_bar: float) -> tuple:
    return bbrv2_strengths(tau_min, tau_bar)


class UpdateFunctions:
    """Probe-to-probe update functions of the long-term discrete process.

    Exposes the strength-update evaluator ``alpha_update`` and the
    window-update evaluator ``w_update`` together with their breakpoints and
    plateau values.  The "current delay" entering the strength rule is fixed
    to the full-buffer equilibrium delay, which the short-term equilibrium
    forces outside probing steps.
    """

    def __init__(self, cfg: NetworkConfig, variant: str = "vanilla", gain: float = 1.25):
        if variant not in ("vanilla", "bbrv2", "bbrv3"):
            raise ValueError(f"no distinct equilibrium map for variant {variant!r}")
        if cfg.n_bbr != 1 or cfg.n_cubic != 1:
            raise ValueError(
                "the probe-to-probe update functions are defined for the "
                "1 BBR vs 1 CUBIC competition only"
            )
        self.cfg = cfg
        self.variant = variant
        self.gain = gain
        self.tau_bar = equilibrium_delay(cfg)
        b = cfg.cubic_b
        C = cfg.capacity
        self.w0 = (C * cfg.btl_prop_delay - 4.0) / (1.0 - b)
        if variant == "vanilla":
            self.w1 = (
                C * (0.625 * self.tau_bar + cfg.btl_prop_delay - cfg.path_prop_delay)
                - 4.0
            ) / (1.0 - b)
        else:
            # Primed strengths saturate only once the back-off queue fills
            # the whole buffer.
            self.w1 = (cfg.buffer + C * cfg.btl_prop_delay - 4.0) / (1.0 - b)
        self.degenerate = self.w0 >= self.w1
        self.alpha_min, self.beta_min = self.strengths_for(cfg.path_prop_delay)
        self.alpha_max, self.beta_max = self.strengths_for(self.tau_bar)
        self._eq_gt = self._solve(self.alpha_min, self.beta_min)
        self._eq_lt = self._solve(self.alpha_max, self.beta_max)
        self.w_gt = self._eq_gt.w_max_eq
        self.w_lt = self._eq_lt.w_max_eq

    def strengths_for(self, tau_min: float) -> tuple:
        """Strength pair for a min-RTT estimate at the equilibrium delay."""
        if self.variant == "vanilla":
            return _vanilla_rule(tau_min, self.tau_bar)
        a, b = _bbrv2_rule(tau_min, self.tau_bar)
        if self.variant == "bbrv3":
            a *= self.gain
        return a, b

    def _solve(self, alpha: float, beta: float) -> ShortTermEquilibrium:
        if self.variant == "vanilla":
            return solve_short_term(alpha, self.cfg)
        return solve_equilibrium(alpha, beta, self.cfg)

    def tau_min_at(self, w: float) -> float:
        """Minimum-RTT estimate measured when probing at CUBIC window w."""
        cfg = self.cfg
        raw = 4.0 + (1.0 - cfg.cubic_b) * w - cfg.btl_prop_delay * cfg.capacity
        q_minus = min(cfg.buffer, max(0.0, raw))
        return cfg.path_prop_delay + q_minus / cfg.capacity

    def alpha_update(self, w: float) -> float:
        """Piecewise strength update: constant plateaus, increasing between."""
        if w <= self.w0:
            return self.alpha_min
        if w >= self.w1:
            return self.alpha_max
        return self.strengths_for(self.tau_min_at(w))[0]

    def equilibrium_at(self, w: float) -> ShortTermEquilibrium:
        if w <= self.w0:
            return self._eq_gt
        if w >= self.w1:
            return self._eq_lt
        alpha, beta = self.strengths_for(self.tau_min_at(w))
        return self._solve(alpha, beta)

    def w_update(self, w: float) -> float:
        """Idealized window update: the equilibrium window for the strength
        that probing at window w produces."""
        return self.equilibrium_at(w).w_max_eq


def build_update_functions(
    cfg: NetworkConfig, variant: str = "vanilla", gain: float = 1.25
) -> UpdateFunctions:
    return UpdateFunctions(cfg, variant=variant, gain=gain)


def long_term_equilibrium(
    cfg: NetworkConfig, uf: UpdateFunctions | None = None
) -> float:
    """Unique fixed point of the idealized window-update function.

    Bisection on w - w_update(w), which is strictly increasing; the endpoint
    signs over the update function's value range are verified first since
    their failure indicates an upstream solver bug.
    """
    if uf is None:
        uf = build_update_functions(cfg)
    lo, hi = uf.w_lt, uf.w_gt
    g_lo = lo - uf.w_update(lo)
    g_hi = hi - uf.w_update(hi)
    if g_lo > 0.0 or g_hi < 0.0:
        raise RuntimeError(
            "fixed-point bracket sign check failed: "
            f"g({lo})={g_lo}, g({hi})={g_hi}"
        )
    if g_lo == 0.0:
        return lo
    if g_hi == 0.0:
        return hi
    # Bisect to float exhaustion: the update map can be cliff-steep near the
    # crossing, so a loose interval would leave a slope-amplified residual.
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if mid - uf.w_update(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
