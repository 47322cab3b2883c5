"""Run analysis: energy ledger rows, equilibrium detection, stationary states.

Everything here is a pure function of states, potentials, and ledgers; the
driver consumes these to write its CSV series and to cross-validate the
long-time limit of the dynamics against a directly computed stationary
solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import grid as gridops
from . import model as mdl
from .darcy import dissipation_integrands
from .errors import NewtonDivergence, ValidationError
from .grid import ScalarField
from .model import ModelParams
from .step import (ChemicalPotentials, SolverTolerances, State, StepReport,
                   _apply_inv_lap, _apply_lap, _damped_update, _krylov_solve,
                   _p0)
from .grid import cc_fwd, cc_inv


@dataclass(frozen=True)
class LedgerRow:
    """One row of the per-step energy/mass/bounds ledger."""

    time: float
    energy_total: float
    energy_free: float
    kinetic: float
    dissipation_d2: float
    dissipation_dr: float
    grad_mu_phi_sq: float
    grad_mu_psi_sq: float
    reaction_term: float
    slack: float
    mean_phi: float
    mean_psi: float
    min_phi: float
    max_phi: float
    min_psi: float
    max_psi: float
    u_l2: float
    u_lr: float

    def validate(self) -> None:
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValidationError(f"ledger field {f.name} is not finite")


LEDGER_FIELDS = tuple(f.name for f in fields(LedgerRow))


@dataclass
class EquilibriumSolution:
    phi_inf: ScalarField
    psi_inf: ScalarField
    mu_phi_inf: float
    mu_psi_inf: float


def _grad_norm_sq(f: ScalarField) -> float:
    g = gridops.gradient(f)
    return float(np.sum(g.x ** 2 + g.y ** 2)) * f.grid.cell_area


def build_ledger_row(state: State, potentials: ChemicalPotentials,
                     report: StepReport, params: ModelParams) -> LedgerRow:
    """Assemble the ledger row for a freshly completed step."""
    grid = state.phi.grid
    d2, dr = dissipation_integrands(state.u, params, state.phi, state.psi)
    mag2 = state.u.x ** 2 + state.u.y ** 2
    u_l2 = math.sqrt(float(np.sum(mag2)) * grid.cell_area)
    u_lr = (float(np.sum(mag2 ** (params.r / 2.0))) * grid.cell_area) ** (1.0 / params.r)
    reaction = (gridops.mean(state.phi) - params.c) * float(
        np.sum(params.sigma1_of(state.phi.data) * potentials.mu_phi.data)
    ) * grid.cell_area
    row = LedgerRow(
        time=state.time,
        energy_total=report.energy_after,
        energy_free=mdl.free_energy(state.phi, state.psi, params),
        kinetic=mdl.kinetic_energy(state.u, params),
        dissipation_d2=d2,
        dissipation_dr=dr,
        grad_mu_phi_sq=_grad_norm_sq(potentials.mu_phi),
        grad_mu_psi_sq=_grad_norm_sq(potentials.mu_psi),
        reaction_term=reaction,
        slack=report.inequality_slack,
        mean_phi=report.mass_achieved_phi,
        mean_psi=report.mass_achieved_psi,
        min_phi=report.min_phi,
        max_phi=report.max_phi,
        min_psi=report.min_psi,
        max_psi=report.max_psi,
        u_l2=u_l2,
        u_lr=u_lr,
    )
    row.validate()
    return row


def equilibrium_residual(state: State, potentials: ChemicalPotentials,
                         params: ModelParams) -> float:
    """Distance from stationarity: largest of the flux/velocity/reaction norms."""
    grid = state.phi.grid
    gm_phi = math.sqrt(_grad_norm_sq(potentials.mu_phi))
    gm_psi = math.sqrt(_grad_norm_sq(potentials.mu_psi))
    u_l2 = math.sqrt(float(np.sum(state.u.x ** 2 + state.u.y ** 2)) * grid.cell_area)
    react = abs(float(np.mean(params.sigma1_of(state.phi.data)))
                * (gridops.mean(state.phi) - params.c))
    return max(gm_phi, gm_psi, u_l2, react)


def classify_good_times(ledger, M: float, T: float) -> set:
    """Indices of rows past T whose chemical-flux dissipation is below M^2."""
    if not ledger:
        raise ValidationError("ledger must be nonempty")
    out = set()
    for i, row in enumerate(ledger):
        if row.time >= T and row.grad_mu_phi_sq + row.grad_mu_psi_sq <= M * M:
            out.add(i)
    return out


def separation_margin(phi: ScalarField, psi: ScalarField) -> tuple[float, float]:
    """Distances of the fields from their singular endpoints."""
    delta_phi = 1.0 - float(np.max(np.abs(phi.data)))
    delta_psi = 0.5 - float(np.max(np.abs(psi.data - 0.5)))
    return delta_phi, delta_psi


def mass_closed_form(t: float, params: ModelParams, phi_bar_0: float) -> float:
    """Mean of phi under the continuous-time relaxation toward c."""
    return params.c + (phi_bar_0 - params.c) * math.exp(-params.sigma1 * t)


def stationary_solve(
    phi_mass: float,
    psi_mass: float,
    seed: tuple[ScalarField, ScalarField],
    params: ModelParams,
    tol: float = 1e-10,
    max_newton: int = 60,
) -> EquilibriumSolution:
    """Solve the stationary elliptic system at prescribed means.

    Unknowns are the zero-mean parts of (phi, psi); the constant chemical
    potentials are the Lagrange multipliers of the mean constraints and are
    recovered as the means of the pointwise equations.  Joint damped Newton
    with a Krylov linear solve, preconditioned diagonally in the cosine
    basis.
    """
    if not -1.0 < phi_mass < 1.0:
        raise ValidationError("phi_mass must lie in the open interval (-1, 1)")
    if not 0.0 < psi_mass < 1.0:
        raise ValidationError("psi_mass must lie in the open interval (0, 1)")
    phi_seed, psi_seed = seed
    grid = phi_seed.grid
    sig2 = params.sigma2
    beta = params.beta

    def residuals(phi, psi):
        fp = mdl.f_phi(phi, params.theta_phi)[1]
        fq = mdl.f_psi(psi, params.theta_psi)[1]
        _, gphi, gpsi = mdl.coupling_g(phi, psi, params.theta_c, params.w)
        rphi = _apply_lap(grid, phi) + _p0(fp + gphi)
        if sig2 > 0:
            rphi += sig2 * _apply_inv_lap(grid, _p0(phi))
        rpsi = beta * _apply_lap(grid, psi) + _p0(fq + gpsi)
        return rphi, rpsi

    phi = phi_seed.data + (phi_mass - phi_seed.data.mean())
    psi = psi_seed.data + (psi_mass - psi_seed.data.mean())
    shape = (2, grid.ny, grid.nx)
    for _ in range(max_newton):
        rphi, rpsi = residuals(phi, psi)
        if max(np.max(np.abs(rphi)), np.max(np.abs(rpsi))) <= tol:
            break
        fpp = mdl.f_phi(phi, params.theta_phi)[2]
        fqq = mdl.f_psi(psi, params.theta_psi)[2]
        # Second derivatives of G on the box (clamp inactive for bounded
        # iterates).
        p, dp = mdl._clamp(phi, -1.0, 1.0)
        q, dq = mdl._clamp(psi, 0.0, 1.0)
        g_pp = (-params.theta_c + 2.0 * params.w * q) * dp * dp
        g_pq = 2.0 * params.w * p * dp * dq
        cphi = fpp + g_pp
        cpsi = fqq
        cbar_phi = max(float(cphi.mean()), 1e-12)
        cbar_psi = max(float(cpsi.mean()), 1e-12)

        def matvec(v):
            vp = _p0(v[0])
            vq = _p0(v[1])
            outp = _apply_lap(grid, vp) + _p0(cphi * vp + g_pq * vq)
            if sig2 > 0:
                outp += sig2 * _apply_inv_lap(grid, vp)
            outq = beta * _apply_lap(grid, vq) + _p0(cpsi * vq + g_pq * vp)
            return np.stack([outp, outq])

        lam = grid.lam.copy()
        lam[0, 0] = 1.0
        denom_p = lam + sig2 / lam + cbar_phi
        denom_q = beta * lam + cbar_psi

        def precond(v):
            cp = cc_fwd(v[0]) / denom_p
            cq = cc_fwd(v[1]) / denom_q
            cp[0, 0] = 0.0
            cq[0, 0] = 0.0
            return np.stack([cc_inv(cp), cc_inv(cq)])

        rhs = -np.stack([rphi, rpsi])
        delta = _krylov_solve(matvec, precond, rhs, shape, 0.01 * tol)
        phi, _ = _damped_update(phi, _p0(delta[0]), -1.0, 1.0, 1e-4)
        psi, _ = _damped_update(psi, _p0(delta[1]), 0.0, 1.0, 1e-4)
        phi += phi_mass - phi.mean()
        psi += psi_mass - psi.mean()
    else:
        raise NewtonDivergence("stationary solve did not converge")

    fp = mdl.f_phi(phi, params.theta_phi)[1]
    fq = mdl.f_psi(psi, params.theta_psi)[1]
    _, gphi, gpsi = mdl.coupling_g(phi, psi, params.theta_c, params.w)
    mu_phi_inf = float(np.mean(fp + gphi))
    mu_psi_inf = float(np.mean(fq + gpsi))
    return EquilibriumSolution(
        phi_inf=ScalarField(grid, phi),
        psi_inf=ScalarField(grid, psi),
        mu_phi_inf=mu_phi_inf,
        mu_psi_inf=mu_psi_inf,
    )
