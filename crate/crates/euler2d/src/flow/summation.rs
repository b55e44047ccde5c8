//! Velocity evaluation by kernel summation: u(x) = sum_j gamma_j K_delta(x, y_j),
//! either directly or through the treecode. Results are deterministic for a
//! given source ordering regardless of thread count: each target is reduced
//! sequentially and targets are collected in order.

use rayon::prelude::*;

use crate::domain::Domain;
use crate::error::{Result, SimError};
use crate::geom::Vec2;
use crate::kernel::{plane_blob, KernelSpec, IMAGE_CUTOFF_REL};

use super::treecode::Treecode;
use super::{ParticleEnsemble, SummationStrategy};

/// A set of point-vortex sources: positions plus circulations gamma_j.
#[derive(Debug, Clone, Copy)]
pub struct SourceField<'a> {
    pub positions: &'a [Vec2],
    pub circulations: &'a [f64],
    pub kernel: KernelSpec,
}

impl<'a> SourceField<'a> {
    /// Index of the source a target is allowed to coincide with (its own
    /// particle when stepping the coupled system); `usize::MAX` disables it.
    const NO_SELF: usize = usize::MAX;

    fn direct_at(&self, target: Vec2, self_index: usize) -> Result<Vec2> {
        let delta = self.kernel.delta;
        let d2min = delta * delta;
        let mut out = Vec2::ZERO;
        match self.kernel.domain {
            Domain::Plane => {
                for (j, (&y, &g)) in self.positions.iter().zip(self.circulations).enumerate() {
                    let d = target - y;
                    let r2 = d.norm_sq();
                    if r2 + d2min == 0.0 {
                        if j == self_index {
                            continue;
                        }
                        return Err(SimError::SingularInput);
                    }
                    out += d.perp() * (g / (r2 + d2min));
                }
            }
            Domain::Disk { radius } => {
                let cutoff2 = (IMAGE_CUTOFF_REL * radius) * (IMAGE_CUTOFF_REL * radius);
                let r2d = radius * radius;
                for (j, (&y, &g)) in self.positions.iter().zip(self.circulations).enumerate() {
                    let d = target - y;
                    let r2 = d.norm_sq();
                    if r2 + d2min == 0.0 {
                        if j == self_index {
                            continue;
                        }
                        return Err(SimError::SingularInput);
                    }
                    out += d.perp() * (g / (r2 + d2min));
                    let ny2 = y.norm_sq();
                    if ny2 > cutoff2 {
                        let db = target - y * (r2d / ny2);
                        out += db.perp() * (-g / (db.norm_sq() + d2min));
                    }
                }
            }
        }
        Ok(out / (2.0 * std::f64::consts::PI))
    }
}

/// Evaluate velocities at `targets`. When `self_exclusion` is true the
/// targets are the sources themselves (in order) and each target skips its
/// own exact-kernel singularity.
pub fn velocities(
    sources: &SourceField,
    targets: &[Vec2],
    strategy: &SummationStrategy,
    self_exclusion: bool,
) -> Result<Vec<Vec2>> {
    strategy.validate()?;
    match strategy {
        SummationStrategy::Direct => targets
            .par_iter()
            .enumerate()
            .map(|(i, &t)| {
                let self_index = if self_exclusion { i } else { SourceField::NO_SELF };
                sources.direct_at(t, self_index)
            })
            .collect(),
        SummationStrategy::Treecode { theta, order } => {
            let tree = Treecode::build(sources, *theta, *order);
            targets
                .par_iter()
                .enumerate()
                .map(|(i, &t)| {
                    let self_index = if self_exclusion { i } else { SourceField::NO_SELF };
                    tree.velocity_at(t, self_index)
                })
                .collect()
        }
    }
}

/// Quadrature sum u(x) ~ sum_j K_delta(x, p_j) omega_j w_j at the given
/// targets, which must lie in the closed domain.
pub fn eval_velocity(
    ensemble: &ParticleEnsemble,
    targets: &[Vec2],
    strategy: &SummationStrategy,
) -> Result<Vec<Vec2>> {
    if ensemble.is_empty() {
        return Err(SimError::InvalidParameter("empty ensemble".into()));
    }
    if let Domain::Disk { radius } = ensemble.domain() {
        for &t in targets {
            if t.norm() > radius {
                return Err(SimError::OutsideDomain(t));
            }
        }
    } else {
        for &t in targets {
            if !(t.x.is_finite() && t.y.is_finite()) {
                return Err(SimError::OutsideDomain(t));
            }
        }
    }
    let positions = ensemble.positions();
    let circulations = ensemble.circulations();
    let sources = SourceField {
        positions: &positions,
        circulations: &circulations,
        kernel: ensemble.kernel,
    };
    velocities(&sources, targets, strategy, false)
}

/// Stage velocities for the coupled particle system: sources and targets are
/// the same moving positions, with self-interaction excluded at delta = 0
/// (and identically zero otherwise).
pub(super) fn self_velocities(
    positions: &[Vec2],
    circulations: &[f64],
    kernel: KernelSpec,
    strategy: &SummationStrategy,
) -> Result<Vec<Vec2>> {
    let sources = SourceField { positions, circulations, kernel };
    velocities(&sources, positions, strategy, true)
}

/// Free-space blob velocity of a single unit vortex, used by tests.
pub fn unit_vortex_velocity(target: Vec2, source: Vec2, delta: f64) -> Vec2 {
    plane_blob(target - source, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Particle;

    const PI: f64 = std::f64::consts::PI;

    fn plane_ensemble(points: &[(f64, f64, f64)], delta: f64) -> ParticleEnsemble {
        ParticleEnsemble {
            particles: points
                .iter()
                .map(|&(x, y, g)| Particle {
                    label: Vec2::new(x, y),
                    position: Vec2::new(x, y),
                    vorticity: g,
                    weight: 1.0,
                })
                .collect(),
            time: 0.0,
            kernel: KernelSpec { domain: Domain::Plane, delta },
        }
    }

    #[test]
    fn single_vortex_matches_plane_kernel() {
        let e = plane_ensemble(&[(0.0, 0.0, 1.0)], 0.0);
        let u = eval_velocity(&e, &[Vec2::new(1.0, 0.0)], &SummationStrategy::Direct).unwrap();
        assert!((u[0] - Vec2::new(0.0, 1.0 / (2.0 * PI))).norm() < 1e-16);
    }

    #[test]
    fn symmetric_quadruple_cancels_at_center() {
        let a = 0.7;
        let e = plane_ensemble(
            &[(a, 0.0, 1.0), (-a, 0.0, 1.0), (0.0, a, 1.0), (0.0, -a, 1.0)],
            0.0,
        );
        let u = eval_velocity(&e, &[Vec2::ZERO], &SummationStrategy::Direct).unwrap();
        assert!(u[0].norm() < 1e-16);
    }

    #[test]
    fn target_on_exact_source_is_singular() {
        let e = plane_ensemble(&[(0.0, 0.0, 1.0)], 0.0);
        assert!(matches!(
            eval_velocity(&e, &[Vec2::ZERO], &SummationStrategy::Direct),
            Err(SimError::SingularInput)
        ));
    }

    #[test]
    fn disk_target_outside_closed_domain_rejected() {
        let mut e = plane_ensemble(&[(0.0, 0.0, 1.0)], 0.0);
        e.kernel = KernelSpec::exact(Domain::unit_disk());
        assert!(matches!(
            eval_velocity(&e, &[Vec2::new(1.5, 0.0)], &SummationStrategy::Direct),
            Err(SimError::OutsideDomain(_))
        ));
        // boundary point is part of the closed domain
        assert!(eval_velocity(&e, &[Vec2::new(1.0, 0.0)], &SummationStrategy::Direct).is_ok());
    }
}
