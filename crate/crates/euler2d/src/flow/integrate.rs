//! RK4 transport of the coupled particle system, forward/two-sided flow
//! histories and backward-map reconstruction by snapshot replay.

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Result, SimError};
use crate::geom::Vec2;
use crate::kernel::KernelSpec;
use crate::vorticity::VorticitySpec;

use super::summation::{self_velocities, SourceField};
use super::{velocities, FlowHistory, ParticleEnsemble, SummationStrategy};
use super::{seed_particles, seed_on_shared_grid};

/// Particles beyond R(1 + BLOWUP_TOL) abort the run; anything outside the
/// open disk is radially projected to R(1 - PROJECTION_MARGIN) and counted.
pub const BLOWUP_TOL: f64 = 1e-6;
pub const PROJECTION_MARGIN: f64 = 1e-12;
/// Fraction of distinct projected particles above which a run is invalid.
pub const PROJECTION_BUDGET: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowParams {
    pub dt: f64,
    /// Particle grid spacing.
    pub h: f64,
    pub strategy: SummationStrategy,
}

/// Clamp stage positions to the open disk. Returns indices of projected
/// particles, or the blow-up error when a particle escapes too far.
fn contain_in_domain(
    positions: &mut [Vec2],
    domain: Domain,
    t: f64,
    projected: &mut [bool],
) -> Result<()> {
    if let Domain::Disk { radius } = domain {
        for (i, p) in positions.iter_mut().enumerate() {
            let r = p.norm();
            if r > radius {
                if r > radius * (1.0 + BLOWUP_TOL) {
                    return Err(SimError::BlowUp { t, excess: r / radius - 1.0 });
                }
                *p = *p * (radius * (1.0 - PROJECTION_MARGIN) / r);
                projected[i] = true;
            }
        }
    }
    Ok(())
}

/// One classical RK4 step of the coupled system dX_j/dt = u(X_j, t); carried
/// vorticity and weights are untouched. Stage positions are kept inside the
/// disk by radial projection (each event is recorded in `projected`).
pub fn step_rk4_tracked(
    ensemble: &ParticleEnsemble,
    dt: f64,
    strategy: &SummationStrategy,
    projected: &mut [bool],
) -> Result<ParticleEnsemble> {
    if !(dt != 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidParameter(format!("dt must be nonzero, got {dt}")));
    }
    let kernel = ensemble.kernel;
    let domain = ensemble.domain();
    let circ = ensemble.circulations();
    let x0 = ensemble.positions();
    let t = ensemble.time;

    let eval = |pos: &[Vec2]| self_velocities(pos, &circ, kernel, strategy);

    let k1 = eval(&x0)?;
    let mut x = stage(&x0, &k1, 0.5 * dt);
    contain_in_domain(&mut x, domain, t, projected)?;
    let k2 = eval(&x)?;
    let mut x = stage(&x0, &k2, 0.5 * dt);
    contain_in_domain(&mut x, domain, t, projected)?;
    let k3 = eval(&x)?;
    let mut x = stage(&x0, &k3, dt);
    contain_in_domain(&mut x, domain, t, projected)?;
    let k4 = eval(&x)?;

    let mut new_pos: Vec<Vec2> = x0
        .iter()
        .zip(k1.iter().zip(k2.iter().zip(k3.iter().zip(k4.iter()))))
        .map(|(&p, (&a, (&b, (&c, &d))))| p + (a + (b + c) * 2.0 + d) * (dt / 6.0))
        .collect();
    contain_in_domain(&mut new_pos, domain, t + dt, projected)?;

    let mut out = ensemble.clone();
    out.time = t + dt;
    for (p, np) in out.particles.iter_mut().zip(new_pos) {
        p.position = np;
    }
    Ok(out)
}

/// RK4 step without projection bookkeeping.
pub fn step_rk4(
    ensemble: &ParticleEnsemble,
    dt: f64,
    strategy: &SummationStrategy,
) -> Result<ParticleEnsemble> {
    let mut projected = vec![false; ensemble.len()];
    step_rk4_tracked(ensemble, dt, strategy, &mut projected)
}

fn stage(x0: &[Vec2], k: &[Vec2], c: f64) -> Vec<Vec2> {
    x0.iter().zip(k.iter()).map(|(&p, &v)| p + v * c).collect()
}

fn check_time_grid(t_span: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if t_span < 0.0 {
        return Err(SimError::InvalidParameter(format!("T must be >= 0, got {t_span}")));
    }
    let n = (t_span / dt).round();
    if (n * dt - t_span).abs() > 1e-9 * dt.max(t_span) {
        return Err(SimError::InvalidParameter(format!(
            "dt = {dt} does not divide T = {t_span} within rounding"
        )));
    }
    Ok(n as usize)
}

fn march(
    start: ParticleEnsemble,
    n_steps: usize,
    dt: f64,
    strategy: &SummationStrategy,
) -> Result<Vec<ParticleEnsemble>> {
    let n_particles = start.len();
    let mut projected = vec![false; n_particles];
    let mut snapshots = Vec::with_capacity(n_steps + 1);
    snapshots.push(start);
    for _ in 0..n_steps {
        let next = step_rk4_tracked(snapshots.last().unwrap(), dt, strategy, &mut projected)?;
        snapshots.push(next);
    }
    let n_projected = projected.iter().filter(|&&b| b).count();
    if n_projected as f64 > PROJECTION_BUDGET * n_particles as f64 {
        return Err(SimError::ExcessiveProjection { projected: n_projected, total: n_particles });
    }
    Ok(snapshots)
}

/// Evolve the seeded data from 0 to T, recording every step. Snapshot 0 is
/// the identity flow (position = label).
pub fn forward_flow(
    spec: &VorticitySpec,
    t_final: f64,
    kernel: KernelSpec,
    params: &FlowParams,
) -> Result<FlowHistory> {
    let start = seed_particles(spec, kernel, params.h)?;
    forward_from(start, t_final, params)
}

/// Forward history from an already-seeded ensemble.
pub fn forward_from(
    start: ParticleEnsemble,
    t_final: f64,
    params: &FlowParams,
) -> Result<FlowHistory> {
    let n = check_time_grid(t_final, params.dt)?;
    let snapshots = march(start, n, params.dt, &params.strategy)?;
    Ok(FlowHistory { snapshots, t0: 0.0, dt: params.dt, strategy: params.strategy, h: params.h })
}

/// History covering [-T, T]: the backward leg integrates the same autonomous
/// system with negative steps (the time-reversed flow), then both legs are
/// spliced with uniform spacing.
pub fn two_sided_flow(
    spec: &VorticitySpec,
    t_final: f64,
    kernel: KernelSpec,
    params: &FlowParams,
) -> Result<FlowHistory> {
    two_sided_from(seed_particles(spec, kernel, params.h)?, t_final, params)
}

pub fn two_sided_from(
    start: ParticleEnsemble,
    t_final: f64,
    params: &FlowParams,
) -> Result<FlowHistory> {
    let n = check_time_grid(t_final, params.dt)?;
    let backward = march(start.clone(), n, -params.dt, &params.strategy)?;
    let forward = march(start, n, params.dt, &params.strategy)?;
    let mut snapshots: Vec<ParticleEnsemble> = backward.into_iter().rev().collect();
    snapshots.extend(forward.into_iter().skip(1));
    Ok(FlowHistory {
        snapshots,
        t0: -t_final,
        dt: params.dt,
        strategy: params.strategy,
        h: params.h,
    })
}

/// Shared-grid pair of histories for two initial data sets (same labels,
/// ordering, dt), covering [-T, T] when `two_sided` or [0, T] otherwise.
pub fn flow_pair(
    specs: &[VorticitySpec; 2],
    t_final: f64,
    kernel: KernelSpec,
    params: &FlowParams,
    two_sided: bool,
) -> Result<(FlowHistory, FlowHistory)> {
    let spec_list = specs.to_vec();
    let a = seed_on_shared_grid(&spec_list, 0, kernel, params.h)?;
    let b = seed_on_shared_grid(&spec_list, 1, kernel, params.h)?;
    if two_sided {
        Ok((two_sided_from(a, t_final, params)?, two_sided_from(b, t_final, params)?))
    } else {
        Ok((forward_from(a, t_final, params)?, forward_from(b, t_final, params)?))
    }
}

/// Integrate passive points through the recorded flow from snapshot time
/// `from_t` to snapshot time `to_t` (either direction). Velocities at RK4
/// stage times come from kernel summation against the stored ensemble with
/// positions linearly interpolated between the bracketing snapshots.
pub fn replay(
    history: &FlowHistory,
    points: &[Vec2],
    from_t: f64,
    to_t: f64,
) -> Result<Vec<Vec2>> {
    let i_from = history.snapshot_index(from_t)?;
    let i_to = history.snapshot_index(to_t)?;
    let kernel = history.kernel();
    if let Domain::Disk { radius } = history.domain() {
        for &p in points {
            if p.norm() > radius {
                return Err(SimError::OutsideDomain(p));
            }
        }
    }
    let mut pts = points.to_vec();
    if i_from == i_to {
        return Ok(pts);
    }
    let circ = history.snapshots[0].circulations();
    let forward = i_to > i_from;
    let h_dt = if forward { history.dt } else { -history.dt };
    let mut k = i_from;
    let strategy = history.strategy;
    let mut projected = vec![false; pts.len()];
    while k != i_to {
        // interval between snapshot `lo` and `lo + 1`
        let lo = if forward { k } else { k - 1 };
        // interpolation fraction for a stage at offset `c` in [0, 1] of this step
        let frac = |c: f64| -> f64 {
            if forward {
                c
            } else {
                1.0 - c
            }
        };
        let field_at = |c: f64, targets: &[Vec2]| -> Result<Vec<Vec2>> {
            let src_pos = history.interpolated_positions(lo, frac(c));
            let sources =
                SourceField { positions: &src_pos, circulations: &circ, kernel };
            velocities(&sources, targets, &strategy, false)
        };
        let t_here = history.time_of(k);

        let k1 = field_at(0.0, &pts)?;
        let mut x = stage(&pts, &k1, 0.5 * h_dt);
        contain_in_domain(&mut x, history.domain(), t_here, &mut projected)?;
        let k2 = field_at(0.5, &x)?;
        let mut x = stage(&pts, &k2, 0.5 * h_dt);
        contain_in_domain(&mut x, history.domain(), t_here, &mut projected)?;
        let k3 = field_at(0.5, &x)?;
        let mut x = stage(&pts, &k3, h_dt);
        contain_in_domain(&mut x, history.domain(), t_here, &mut projected)?;
        let k4 = field_at(1.0, &x)?;

        for (p, (a, (b, (c, d)))) in pts
            .iter_mut()
            .zip(k1.iter().zip(k2.iter().zip(k3.iter().zip(k4.iter()))))
        {
            *p += (*a + (*b + *c) * 2.0 + *d) * (h_dt / 6.0);
        }
        contain_in_domain(&mut pts, history.domain(), t_here + h_dt, &mut projected)?;
        k = if forward { k + 1 } else { k - 1 };
    }
    Ok(pts)
}

/// The back-to-label map X_{t,0} evaluated at `points`.
pub fn backward_flow(history: &FlowHistory, points: &[Vec2], t: f64) -> Result<Vec<Vec2>> {
    replay(history, points, t, 0.0)
}

/// Mean distance between replayed-back positions and the original labels:
/// the discrete defect of X_{t,0} o X_{0,t} = id.
pub fn composition_defect(history: &FlowHistory, t: f64) -> Result<f64> {
    let snap = history.ensemble_at(t)?;
    let positions = snap.positions();
    let back = backward_flow(history, &positions, t)?;
    let labels = history.snapshots[0].labels();
    let n = labels.len() as f64;
    Ok(back
        .iter()
        .zip(labels.iter())
        .map(|(b, l)| b.dist(*l))
        .sum::<f64>()
        / n)
}

/// Central finite-difference determinant of grad X_{t,0} at each probe.
/// The step must stay an order of magnitude above the replay error, which is
/// estimated from the composition defect of a particle subsample.
pub fn jacobian_determinant(
    history: &FlowHistory,
    t: f64,
    probes: &[Vec2],
    fd_step: f64,
) -> Result<Vec<f64>> {
    let defect = subsampled_defect(history, t, 256)?;
    if fd_step < 10.0 * defect {
        return Err(SimError::StepTooSmall { step: fd_step, tol: defect });
    }
    let domain = history.domain();
    let mut stencil = Vec::with_capacity(4 * probes.len());
    for &p in probes {
        let pts = [
            p + Vec2::new(fd_step, 0.0),
            p - Vec2::new(fd_step, 0.0),
            p + Vec2::new(0.0, fd_step),
            p - Vec2::new(0.0, fd_step),
        ];
        for q in pts {
            domain.check_inside(q)?;
            stencil.push(q);
        }
    }
    let mapped = backward_flow(history, &stencil, t)?;
    Ok(mapped
        .chunks_exact(4)
        .map(|c| {
            let dx = (c[0] - c[1]) / (2.0 * fd_step);
            let dy = (c[2] - c[3]) / (2.0 * fd_step);
            dx.x * dy.y - dx.y * dy.x
        })
        .collect())
}

fn subsampled_defect(history: &FlowHistory, t: f64, max_points: usize) -> Result<f64> {
    let snap = history.ensemble_at(t)?;
    let n = snap.len();
    let stride = (n / max_points).max(1);
    let positions: Vec<Vec2> = snap.particles.iter().step_by(stride).map(|p| p.position).collect();
    let labels: Vec<Vec2> = snap.particles.iter().step_by(stride).map(|p| p.label).collect();
    let back = backward_flow(history, &positions, t)?;
    let m = labels.len() as f64;
    Ok(back.iter().zip(labels.iter()).map(|(b, l)| b.dist(*l)).sum::<f64>() / m)
}
