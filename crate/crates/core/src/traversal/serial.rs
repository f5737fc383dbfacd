//! Single-process reference traversal on whole grids, used to check the
//! distributed passes.

use num_complex::Complex64;

use super::setup::Setup;
use crate::error::Result;
use crate::kernel::{green_unchecked, norm, sub, Particle, Vec3};
use crate::operators::{c2m, l2o, m2l_apply, shift_expansion, translation_operator};
use crate::sphere::{fft_anterpolate_adjoint, fft_interpolate, SphereGrid};

pub struct SerialResult {
    /// `[level - 1][node]`; empty above the first expansion level.
    pub multipoles: Vec<Vec<SphereGrid>>,
    pub locals: Vec<Vec<SphereGrid>>,
    pub potentials: Vec<Complex64>,
}

pub fn serial_evaluate(setup: &Setup) -> Result<SerialResult> {
    let depth = setup.num_levels() as usize;
    let k = setup.k;
    let mut multipoles: Vec<Vec<SphereGrid>> = vec![Vec::new(); depth];
    let mut locals: Vec<Vec<SphereGrid>> = vec![Vec::new(); depth];
    let leaf_particles = |li: usize| -> Vec<Particle> { setup.particles_of_leaf(li).map(|p| setup.particles[p]).collect() };

    if setup.has_far_field() {
        let leaf = setup.leaf_level();
        multipoles[depth - 1] = (0..leaf.nodes.len())
            .map(|li| c2m(&leaf_particles(li), leaf.nodes[li].center, leaf.dims(), k))
            .collect::<Result<_>>()?;
        for l in (*setup.expansion_levels().start()..setup.num_levels()).rev() {
            let (pl, cl) = (setup.level(l), setup.level(l + 1));
            let mut out = Vec::with_capacity(pl.nodes.len());
            for parent in &pl.nodes {
                let mut acc = SphereGrid::zeros(pl.dims().0, pl.dims().1)?;
                for &ci in &parent.children {
                    let up = fft_interpolate(&multipoles[l as usize][ci], pl.dims())?;
                    let shifted = shift_expansion(&up, sub(cl.nodes[ci].center, parent.center), k);
                    for (a, b) in acc.samples.iter_mut().zip(&shifted.samples) {
                        *a += b;
                    }
                }
                out.push(acc);
            }
            multipoles[l as usize - 1] = out;
        }
        for l in setup.expansion_levels() {
            let data = setup.level(l);
            let s = data.sampling.unwrap();
            let mut out = Vec::with_capacity(data.nodes.len());
            for (oi, obs) in data.nodes.iter().enumerate() {
                let mut acc = vec![Complex64::new(0.0, 0.0); s.len()];
                for &si in setup.lists.far_of(l, oi) {
                    let src = &data.nodes[si as usize];
                    let (a, b) = (obs.key.indices(), src.key.indices());
                    let off = [0, 1, 2].map(|d| a[d] as i64 - b[d] as i64);
                    let op = translation_operator(l, s.dims(), off, data.side, k, s.trunc_order, 0..s.n_theta)?;
                    m2l_apply(&multipoles[l as usize - 1][si as usize].samples, &op.samples, &mut acc)?;
                }
                out.push(SphereGrid::from_samples(s.n_theta, s.n_phi, acc)?);
            }
            locals[l as usize - 1] = out;
        }
        for l in *setup.expansion_levels().start()..setup.num_levels() {
            let (pl, cl) = (setup.level(l), setup.level(l + 1));
            let (pw, cw) = (pl.quadrature.as_ref().unwrap(), cl.quadrature.as_ref().unwrap());
            for (pi, parent) in pl.nodes.iter().enumerate() {
                for &ci in &parent.children {
                    let child = &cl.nodes[ci];
                    let mut g = shift_expansion(&locals[l as usize - 1][pi], sub(parent.center, child.center), k);
                    let np = g.n_phi;
                    for (t, row) in g.samples.chunks_mut(np).enumerate() {
                        row.iter_mut().for_each(|v| *v *= pw.weight(t));
                    }
                    let mut down = fft_anterpolate_adjoint(&g, cl.dims())?;
                    let np = down.n_phi;
                    for (t, row) in down.samples.chunks_mut(np).enumerate() {
                        row.iter_mut().for_each(|v| *v /= cw.weight(t));
                    }
                    let target = &mut locals[l as usize][ci];
                    for (a, b) in target.samples.iter_mut().zip(&down.samples) {
                        *a += b;
                    }
                }
            }
        }
    }

    let mut potentials = vec![Complex64::new(0.0, 0.0); setup.particles.len()];
    let leaf = setup.leaf_level();
    for (li, node) in leaf.nodes.iter().enumerate() {
        let ids: Vec<usize> = setup.particles_of_leaf(li).collect();
        let positions: Vec<Vec3> = ids.iter().map(|&p| setup.particles[p].position).collect();
        if setup.has_far_field() {
            let far = l2o(&locals[depth - 1][li], node.center, &positions, leaf.quadrature.as_ref().unwrap(), k)?;
            for (&p, v) in ids.iter().zip(far) {
                potentials[p] += v;
            }
        }
        for &nj in setup.lists.near_of(depth as u32, li) {
            for q in setup.particles_of_leaf(nj as usize) {
                let src = setup.particles[q];
                for (&p, &x) in ids.iter().zip(&positions) {
                    if p != q {
                        potentials[p] += green_unchecked(k.k(), norm(sub(x, src.position))) * src.intensity;
                    }
                }
            }
        }
    }
    Ok(SerialResult {
        multipoles,
        locals,
        potentials,
    })
}
