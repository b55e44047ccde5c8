//! Barnes-Hut style treecode for the 2D Biot-Savart sum.
//!
//! In complex coordinates a blob vortex of circulation gamma at z_j induces
//! the conjugate velocity
//!
//!   W(z) = u - i v = a_j conj(z - z_j) / (|z - z_j|^2 + delta^2),
//!   a_j = -i gamma_j / (2 pi),
//!
//! which reduces to a_j / (z - z_j) at delta = 0. Because the blob kernel is
//! not holomorphic, the cluster expansion is a bivariate Taylor series in
//! (s, conj s) around the cell centroid: with phi(w) = conj(w)/(|w|^2 + d^2)
//! and T_{k,l} = d^k_w d^l_wbar phi, the identity q phi = wbar
//! (q = w wbar + d^2) gives the recurrence
//!
//!   q T_{k,l} = rhs_{k,l} - k wbar T_{k-1,l} - l w T_{k,l-1} - k l T_{k-1,l-1},
//!   rhs_{0,0} = wbar, rhs_{0,1} = 1, rhs = 0 otherwise,
//!
//! and the cell contribution is sum_{k+l<=p} T_{k,l}(z - c) M_{k,l} with the
//! moments M_{k,l} = (-1)^{k+l}/(k! l!) sum_j a_j s_j^k conj(s_j)^l. At
//! delta = 0 every mixed (l >= 1) term vanishes and the scheme collapses to
//! the classical holomorphic multipole expansion.
//!
//! Disk sources carry their reflected images (circulation -gamma at
//! R^2 y/|y|^2) as additional tree entries, so the image correction shares
//! the same far-field machinery.

use num_complex::Complex64;

use crate::domain::Domain;
use crate::error::{Result, SimError};
use crate::geom::Vec2;
use crate::kernel::IMAGE_CUTOFF_REL;

use super::summation::SourceField;

const LEAF_CAP: usize = 32;
const MAX_DEPTH: usize = 60;
pub const MAX_ORDER: usize = 16;

const fn tri_len(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

#[inline]
fn tri_idx(k: usize, l: usize) -> usize {
    let s = k + l;
    s * (s + 1) / 2 + l
}

struct Node {
    center: Complex64,
    rmax: f64,
    start: u32,
    end: u32,
    children: [i32; 4],
    moments: Vec<Complex64>,
}

pub struct Treecode {
    theta: f64,
    order: usize,
    delta: f64,
    zs: Vec<Complex64>,
    strengths: Vec<Complex64>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl Treecode {
    pub fn build(sources: &SourceField, theta: f64, order: usize) -> Treecode {
        let order = order.min(MAX_ORDER);
        let delta = sources.kernel.delta;
        let n = sources.positions.len();
        let mut zs = Vec::with_capacity(2 * n);
        let mut strengths = Vec::with_capacity(2 * n);
        let mut ids = Vec::with_capacity(2 * n);
        let half_i = Complex64::new(0.0, -0.5 / std::f64::consts::PI);
        for (j, (&p, &g)) in sources.positions.iter().zip(sources.circulations).enumerate() {
            zs.push(Complex64::new(p.x, p.y));
            strengths.push(half_i * g);
            ids.push(j);
        }
        if let Domain::Disk { radius } = sources.kernel.domain {
            let cutoff2 = (IMAGE_CUTOFF_REL * radius) * (IMAGE_CUTOFF_REL * radius);
            let r2 = radius * radius;
            for (&p, &g) in sources.positions.iter().zip(sources.circulations) {
                let ny2 = p.norm_sq();
                if ny2 > cutoff2 {
                    zs.push(Complex64::new(p.x * r2 / ny2, p.y * r2 / ny2));
                    strengths.push(-half_i * g);
                    ids.push(usize::MAX);
                }
            }
        }

        let mut tree = Treecode { theta, order, delta, zs, strengths, ids, nodes: Vec::new() };
        if tree.zs.is_empty() {
            return tree;
        }

        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for z in &tree.zs {
            lo_x = lo_x.min(z.re);
            hi_x = hi_x.max(z.re);
            lo_y = lo_y.min(z.im);
            hi_y = hi_y.max(z.im);
        }
        let cx = 0.5 * (lo_x + hi_x);
        let cy = 0.5 * (lo_y + hi_y);
        let half = 0.5 * (hi_x - lo_x).max(hi_y - lo_y).max(1e-300) * (1.0 + 1e-12);

        let mut index: Vec<u32> = (0..tree.zs.len() as u32).collect();
        tree.subdivide(&mut index, 0, cx, cy, half, 0);

        // reorder source arrays into DFS order so leaves are contiguous
        let zs_old = std::mem::take(&mut tree.zs);
        let st_old = std::mem::take(&mut tree.strengths);
        let id_old = std::mem::take(&mut tree.ids);
        tree.zs = index.iter().map(|&i| zs_old[i as usize]).collect();
        tree.strengths = index.iter().map(|&i| st_old[i as usize]).collect();
        tree.ids = index.iter().map(|&i| id_old[i as usize]).collect();

        tree.compute_geometry_and_moments();
        tree
    }

    /// Partition `index[..]` (global offset `base`) into quadrants, creating
    /// nodes depth-first. Returns the node id.
    fn subdivide(
        &mut self,
        index: &mut [u32],
        base: u32,
        cx: f64,
        cy: f64,
        half: f64,
        depth: usize,
    ) -> i32 {
        let id = self.nodes.len();
        self.nodes.push(Node {
            center: Complex64::new(cx, cy),
            rmax: 0.0,
            start: base,
            end: base + index.len() as u32,
            children: [-1; 4],
            moments: Vec::new(),
        });
        if index.len() <= LEAF_CAP || depth >= MAX_DEPTH {
            return id as i32;
        }

        // counting sort into quadrant buckets keeps the order deterministic
        let mut buckets: [Vec<u32>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for &i in index.iter() {
            let z = self.zs[i as usize];
            let q = (z.re > cx) as usize | (((z.im > cy) as usize) << 1);
            buckets[q].push(i);
        }
        let mut offset = 0usize;
        let mut children = [-1i32; 4];
        let h2 = 0.5 * half;
        for (q, bucket) in buckets.iter().enumerate() {
            if bucket.is_empty() {
                continue;
            }
            index[offset..offset + bucket.len()].copy_from_slice(bucket);
            let ncx = cx + if q & 1 == 0 { -h2 } else { h2 };
            let ncy = cy + if q & 2 == 0 { -h2 } else { h2 };
            children[q] = self.subdivide(
                &mut index[offset..offset + bucket.len()],
                base + offset as u32,
                ncx,
                ncy,
                h2,
                depth + 1,
            );
            offset += bucket.len();
        }
        self.nodes[id].children = children;
        id as i32
    }

    /// Centroid expansion centers, cell radii and moment tables, computed
    /// directly from the (reordered) sources of each node.
    fn compute_geometry_and_moments(&mut self) {
        let p = self.order;
        let tl = tri_len(p);
        // (-1)^{k+l} / (k! l!)
        let mut coeff = vec![0.0f64; tl];
        let mut fact = [1.0f64; MAX_ORDER + 1];
        for k in 1..=MAX_ORDER {
            fact[k] = fact[k - 1] * k as f64;
        }
        for k in 0..=p {
            for l in 0..=(p - k) {
                let sgn = if (k + l) % 2 == 0 { 1.0 } else { -1.0 };
                coeff[tri_idx(k, l)] = sgn / (fact[k] * fact[l]);
            }
        }

        for ni in 0..self.nodes.len() {
            let (start, end) = (self.nodes[ni].start as usize, self.nodes[ni].end as usize);
            let count = (end - start) as f64;
            let mut c = Complex64::new(0.0, 0.0);
            for z in &self.zs[start..end] {
                c += z;
            }
            c /= count;
            let mut rmax: f64 = 0.0;
            for z in &self.zs[start..end] {
                rmax = rmax.max((z - c).norm());
            }

            let mut moments = vec![Complex64::new(0.0, 0.0); tl];
            let mut pow_s = [Complex64::new(0.0, 0.0); MAX_ORDER + 1];
            let mut pow_sc = [Complex64::new(0.0, 0.0); MAX_ORDER + 1];
            for (z, a) in self.zs[start..end].iter().zip(&self.strengths[start..end]) {
                let s = z - c;
                let sc = s.conj();
                pow_s[0] = Complex64::new(1.0, 0.0);
                pow_sc[0] = Complex64::new(1.0, 0.0);
                for k in 1..=p {
                    pow_s[k] = pow_s[k - 1] * s;
                    pow_sc[k] = pow_sc[k - 1] * sc;
                }
                for k in 0..=p {
                    let aps = *a * pow_s[k];
                    for l in 0..=(p - k) {
                        moments[tri_idx(k, l)] += aps * pow_sc[l];
                    }
                }
            }
            for (m, &cf) in moments.iter_mut().zip(coeff.iter()) {
                *m *= cf;
            }

            let node = &mut self.nodes[ni];
            node.center = c;
            node.rmax = rmax;
            node.moments = moments;
        }
    }

    /// Conjugate-velocity contribution of one far cell via the T-table
    /// recurrence.
    fn expansion(&self, node: &Node, w: Complex64) -> Complex64 {
        let p = self.order;
        let q = w.norm_sqr() + self.delta * self.delta;
        let wc = w.conj();
        let mut t = [Complex64::new(0.0, 0.0); tri_len(MAX_ORDER)];
        t[0] = wc / q;
        for s in 1..=p {
            for l in 0..=s {
                let k = s - l;
                let mut acc = if (k, l) == (0, 1) {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                if k >= 1 {
                    acc -= (k as f64) * wc * t[tri_idx(k - 1, l)];
                }
                if l >= 1 {
                    acc -= (l as f64) * w * t[tri_idx(k, l - 1)];
                }
                if k >= 1 && l >= 1 {
                    acc -= ((k * l) as f64) * t[tri_idx(k - 1, l - 1)];
                }
                t[tri_idx(k, l)] = acc / q;
            }
        }
        let mut out = Complex64::new(0.0, 0.0);
        for (tv, mv) in t[..tri_len(p)].iter().zip(node.moments.iter()) {
            out += tv * mv;
        }
        out
    }

    /// Velocity at one target; deterministic fixed-order traversal.
    pub fn velocity_at(&self, target: Vec2, self_index: usize) -> Result<Vec2> {
        if self.nodes.is_empty() {
            return Ok(Vec2::ZERO);
        }
        let z = Complex64::new(target.x, target.y);
        let d2min = self.delta * self.delta;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut stack = [0i32; 4 * MAX_DEPTH + 4];
        stack[0] = 0;
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            let w = z - node.center;
            let d = w.norm();
            if d > 0.0 && node.rmax <= self.theta * d {
                acc += self.expansion(node, w);
                continue;
            }
            if node.children == [-1; 4] {
                for i in node.start as usize..node.end as usize {
                    let dz = z - self.zs[i];
                    let r2 = dz.norm_sqr();
                    if r2 + d2min == 0.0 {
                        if self.ids[i] == self_index {
                            continue;
                        }
                        return Err(SimError::SingularInput);
                    }
                    acc += self.strengths[i] * dz.conj() / (r2 + d2min);
                }
                continue;
            }
            // push in reverse so children are visited in quadrant order
            for q in (0..4).rev() {
                let c = node.children[q];
                if c >= 0 {
                    stack[sp] = c;
                    sp += 1;
                }
            }
        }
        Ok(Vec2::new(acc.re, -acc.im))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> (Vec<Vec2>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = (0..n)
            .map(|_| Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let circ = (0..n).map(|_| rng.gen_range(0.2..1.0) / n as f64).collect();
        (pos, circ)
    }

    fn direct_reference(
        sources: &SourceField,
        targets: &[Vec2],
    ) -> Vec<Vec2> {
        use crate::flow::{velocities, SummationStrategy};
        velocities(sources, targets, &SummationStrategy::Direct, false).unwrap()
    }

    fn max_rel_error(sources: &SourceField, targets: &[Vec2], theta: f64, order: usize) -> f64 {
        let exact = direct_reference(sources, targets);
        let tree = Treecode::build(sources, theta, order);
        let scale = exact.iter().fold(0.0f64, |m, u| m.max(u.norm()));
        targets
            .iter()
            .zip(exact.iter())
            .map(|(&t, &e)| (tree.velocity_at(t, usize::MAX).unwrap() - e).norm() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn matches_direct_on_plane_clouds() {
        for delta in [0.0, 0.02] {
            let (pos, circ) = random_cloud(3000, 11);
            let kernel = KernelSpec { domain: Domain::Plane, delta };
            let sources = SourceField { positions: &pos, circulations: &circ, kernel };
            let (tpos, _) = random_cloud(100, 13);
            let err = max_rel_error(&sources, &tpos, 0.5, 8);
            assert!(err <= 1e-4, "delta {delta}: rel error {err}");
        }
    }

    #[test]
    fn matches_direct_on_disk_with_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2000;
        let pos: Vec<Vec2> = (0..n)
            .map(|_| {
                let r = 0.72 * rng.gen::<f64>().sqrt();
                let t = rng.gen::<f64>() * std::f64::consts::TAU;
                Vec2::new(r * t.cos(), r * t.sin())
            })
            .collect();
        let circ: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) / n as f64).collect();
        let kernel = KernelSpec { domain: Domain::unit_disk(), delta: 0.01 };
        let sources = SourceField { positions: &pos, circulations: &circ, kernel };
        let targets: Vec<Vec2> = (0..128)
            .map(|_| {
                let r = 0.95 * rng.gen::<f64>().sqrt();
                let t = rng.gen::<f64>() * std::f64::consts::TAU;
                Vec2::new(r * t.cos(), r * t.sin())
            })
            .collect();
        let err = max_rel_error(&sources, &targets, 0.5, 8);
        assert!(err <= 1e-4, "rel error {err}");
    }

    #[test]
    fn error_decreases_with_order() {
        let (pos, circ) = random_cloud(2000, 21);
        let kernel = KernelSpec { domain: Domain::Plane, delta: 0.01 };
        let sources = SourceField { positions: &pos, circulations: &circ, kernel };
        let (tpos, _) = random_cloud(64, 23);
        let mut prev = f64::MAX;
        for order in [2, 4, 8, 12] {
            let err = max_rel_error(&sources, &tpos, 0.5, order);
            assert!(err < prev, "order {order}: {err} !< {prev}");
            prev = err;
        }
    }

    #[test]
    fn self_exclusion_matches_direct_semantics() {
        let (pos, circ) = random_cloud(500, 31);
        let kernel = KernelSpec::exact(Domain::Plane);
        let sources = SourceField { positions: &pos, circulations: &circ, kernel };
        let tree = Treecode::build(&sources, 0.5, 8);
        // evaluating at a source with self-exclusion must not blow up
        let u = tree.velocity_at(pos[17], 17).unwrap();
        assert!(u.norm().is_finite());
        // without exclusion the exact kernel is singular there
        assert!(tree.velocity_at(pos[17], usize::MAX).is_err());
    }
}
