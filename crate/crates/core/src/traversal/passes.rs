//! The per-rank program: C2M, M2M, M2L, L2L, near field and L2O.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use num_complex::Complex64;

use super::plan::{chunk_samples, CommPlan, PlanEntry};
use super::setup::{NodeInfo, Setup, FIRST_EXPANSION_LEVEL};
use crate::error::{Error, Result};
use crate::kernel::{sub, Particle, Vec3};
use crate::operators::{
    c2m_rows, flops, l2o, m2l_apply, near_field, shift_rows, translation_operator, translation_rows, OperatorCache,
};
use crate::sphere::{
    fft_anterpolate_adjoint, fft_interpolate, interpolation_flops, parallel_resample, ParallelOp, SphereGrid,
};
use crate::spmd::{Comm, MemoryClass, Phase, Tag};
use crate::tree::SliceMap;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// The θ-rows of one node's expansion held by a rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub rows: Range<usize>,
    pub data: Vec<Complex64>,
}

/// Expansions a rank holds, indexed `[level - 1][node index]`.
#[derive(Debug, Clone, Default)]
pub struct RankState {
    pub multipoles: Vec<HashMap<usize, Expansion>>,
    pub locals: Vec<HashMap<usize, Expansion>>,
}

impl RankState {
    fn new(levels: usize) -> Self {
        Self {
            multipoles: vec![HashMap::new(); levels],
            locals: vec![HashMap::new(); levels],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RankOutput {
    pub potentials: Vec<(usize, Complex64)>,
    pub state: RankState,
}

fn intersect(a: &Range<usize>, b: &Range<usize>) -> Range<usize> {
    let s = a.start.max(b.start);
    s..a.end.min(b.end).max(s)
}

fn rows_slice<'a>(e: &'a Expansion, rows: &Range<usize>, n_phi: usize) -> &'a [Complex64] {
    let a = (rows.start - e.rows.start) * n_phi;
    &e.data[a..a + rows.len() * n_phi]
}

fn image(node: &NodeInfo, dims: (usize, usize)) -> SliceMap {
    node.map().image(dims.0, dims.1)
}

fn rows_in(map: &SliceMap, rank: usize) -> Range<usize> {
    map.rows_of(rank).unwrap_or(0..0)
}

fn store(comm: &Comm, table: &mut HashMap<usize, Expansion>, node: usize, e: Expansion) {
    comm.sink().alloc(MemoryClass::TreeStorage, e.data.len() as u64 * 16);
    table.insert(node, e);
}

/// Runs every phase on this rank and returns its observers' potentials.
pub async fn run_rank(setup: &Setup, comm: &Comm) -> Result<RankOutput> {
    let mut state = RankState::new(setup.levels.len());
    let owned = setup.owned_leaves(comm.rank());
    let n_owned: usize = owned.clone().map(|l| setup.leaf_particles[l].len()).sum();
    comm.sink().alloc(MemoryClass::TreeStorage, n_owned as u64 * 40);
    {
        let _t = comm.timer(Phase::C2M);
        c2m_pass(setup, comm, &mut state)?;
    }
    {
        let _t = comm.timer(Phase::M2M);
        m2m_pass(setup, comm, &mut state).await?;
    }
    {
        let _t = comm.timer(Phase::M2L);
        m2l_pass(setup, comm, &mut state).await?;
    }
    {
        let _t = comm.timer(Phase::L2L);
        l2l_pass(setup, comm, &mut state).await?;
    }
    let near = {
        let _t = comm.timer(Phase::Near);
        near_pass(setup, comm).await?
    };
    let far = {
        let _t = comm.timer(Phase::L2O);
        l2o_pass(setup, comm, &state)?
    };
    let mut potentials = Vec::with_capacity(near.len());
    for leaf in owned {
        for p in setup.particles_of_leaf(leaf) {
            let f = far.get(&p).copied().unwrap_or(ZERO);
            potentials.push((p, f + near[&p]));
        }
    }
    Ok(RankOutput { potentials, state })
}

pub fn c2m_pass(setup: &Setup, comm: &Comm, state: &mut RankState) -> Result<()> {
    if !setup.has_far_field() {
        return Ok(());
    }
    let leaf = setup.leaf_level();
    let dims = leaf.dims();
    for li in setup.owned_leaves(comm.rank()) {
        let node = &leaf.nodes[li];
        let particles: Vec<Particle> = setup.particles_of_leaf(li).map(|p| setup.particles[p]).collect();
        let data = c2m_rows(&particles, node.center, dims, 0..dims.0, setup.k);
        comm.record(Phase::C2M, (particles.len() * data.len()) as u64 * flops::C2M_TERM);
        let table = &mut state.multipoles[setup.num_levels() as usize - 1];
        store(comm, table, li, Expansion { rows: 0..dims.0, data });
    }
    Ok(())
}

/// Upward pass: interpolate and shift children, aggregate into parents.
pub async fn m2m_pass(setup: &Setup, comm: &Comm, state: &mut RankState) -> Result<()> {
    let me = comm.rank();
    let depth = setup.num_levels();
    if depth <= FIRST_EXPANSION_LEVEL {
        return Ok(());
    }
    for l in (FIRST_EXPANSION_LEVEL..depth).rev() {
        let pl = setup.level(l);
        let cl = setup.level(l + 1);
        let (pdims, cdims) = (pl.dims(), cl.dims());
        for (pi, parent) in pl.nodes.iter().enumerate() {
            if !parent.has_user(me) {
                continue;
            }
            let mut flops_spent = 0u64;
            // this rank's shifted, interpolated child pieces in Morton order
            let mut pieces: Vec<(usize, Range<usize>, Vec<Complex64>)> = Vec::new();
            for &ci in &parent.children {
                let child = &cl.nodes[ci];
                if !child.has_user(me) {
                    continue;
                }
                let img = image(child, pdims);
                let held = state.multipoles[l as usize].get(&ci);
                let (rows, mut data) = if !child.is_plural() {
                    let held = held.ok_or_else(|| Error::Protocol(format!("missing multipole {:?}", child.key)))?;
                    let g = SphereGrid::from_samples(cdims.0, cdims.1, held.data.clone())?;
                    flops_spent += interpolation_flops(cdims, pdims);
                    (0..pdims.0, fft_interpolate(&g, pdims)?.samples)
                } else {
                    let local = held.map(|e| e.data.as_slice()).unwrap_or(&[]);
                    let tag = Tag::new(Phase::M2M, 1).level(l + 1).key(child.key.code);
                    let (v, f) = parallel_resample(comm, tag, ParallelOp::Interpolate, child.map(), &img, local).await?;
                    flops_spent += f;
                    (rows_in(&img, me), v)
                };
                comm.sink().peak(MemoryClass::Temporaries, 2 * 16 * data.len() as u64);
                shift_rows(&mut data, pdims, rows.clone(), sub(child.center, parent.center), setup.k);
                flops_spent += data.len() as u64 * flops::SHIFT;
                pieces.push((ci, rows, data));
            }
            comm.record(Phase::M2M, flops_spent);

            let tag = Tag::new(Phase::M2M, 2).level(l).key(parent.key.code);
            for q in parent.users() {
                if q == me {
                    continue;
                }
                let q_rows = parent.rows_of(q);
                let mut payload = Vec::new();
                for (_, rows, data) in &pieces {
                    let both = intersect(rows, &q_rows);
                    if both.is_empty() {
                        continue;
                    }
                    let a = (both.start - rows.start) * pdims.1;
                    payload.extend_from_slice(&data[a..a + both.len() * pdims.1]);
                }
                if !payload.is_empty() {
                    comm.isend(q, tag, payload)?;
                }
            }

            let my_rows = parent.rows_of(me);
            if my_rows.is_empty() {
                continue;
            }
            let images: Vec<SliceMap> = parent.children.iter().map(|&ci| image(&cl.nodes[ci], pdims)).collect();
            let mut inbox: BTreeMap<usize, (Vec<Complex64>, usize)> = BTreeMap::new();
            for r in parent.users() {
                if r != me && images.iter().any(|img| !intersect(&rows_in(img, r), &my_rows).is_empty()) {
                    inbox.insert(r, (comm.recv(r, tag).await?, 0));
                }
            }
            let np = pdims.1;
            let mut acc = vec![ZERO; my_rows.len() * np];
            let mut own = pieces.iter();
            for (&ci, img) in parent.children.iter().zip(&images) {
                let mine = if cl.nodes[ci].has_user(me) { own.next() } else { None };
                for (r, r_rows) in img.row_bounds() {
                    let both = intersect(&r_rows, &my_rows);
                    if both.is_empty() {
                        continue;
                    }
                    let piece: &[Complex64] = if r == me {
                        let (_, rows, data) = mine.unwrap();
                        let a = (both.start - rows.start) * np;
                        &data[a..a + both.len() * np]
                    } else {
                        let (buf, at) = inbox.get_mut(&r).unwrap();
                        let s = &buf[*at..*at + both.len() * np];
                        *at += both.len() * np;
                        s
                    };
                    let a = (both.start - my_rows.start) * np;
                    for (x, y) in acc[a..a + piece.len()].iter_mut().zip(piece) {
                        *x += y;
                    }
                }
            }
            for (r, (buf, at)) in &inbox {
                if *at != buf.len() {
                    return Err(Error::Protocol(format!("aggregation message from rank {r} has {} unread samples", buf.len() - at)));
                }
            }
            store(comm, &mut state.multipoles[l as usize - 1], pi, Expansion { rows: my_rows, data: acc });
        }
    }
    Ok(())
}

/// Translation offsets in box units, `observer − source`.
fn offset(obs: &NodeInfo, src: &NodeInfo) -> [i64; 3] {
    let a = obs.key.indices();
    let b = src.key.indices();
    [a[0] as i64 - b[0] as i64, a[1] as i64 - b[1] as i64, a[2] as i64 - b[2] as i64]
}

struct Translator<'a> {
    setup: &'a Setup,
    cache: OperatorCache,
    staged: HashMap<(u32, usize), Vec<(Range<usize>, Vec<Complex64>)>>,
}

impl Translator<'_> {
    fn source_rows(&self, state: &RankState, me: usize, level: u32, si: usize, rows: &Range<usize>) -> Result<Vec<Complex64>> {
        let np = self.setup.level(level).dims().1;
        let src = &self.setup.level(level).nodes[si];
        let mine = src.rows_of(me);
        let held = state.multipoles[level as usize - 1].get(&si);
        if mine.start <= rows.start && rows.end <= mine.end {
            return Ok(rows_slice(held.unwrap(), rows, np).to_vec());
        }
        let staged = self.staged.get(&(level, si));
        let mut out = Vec::with_capacity(rows.len() * np);
        for t in rows.clone() {
            if mine.contains(&t) {
                out.extend_from_slice(rows_slice(held.unwrap(), &(t..t + 1), np));
                continue;
            }
            let (r, data) = staged
                .and_then(|s| s.iter().find(|(r, _)| r.contains(&t)))
                .ok_or_else(|| Error::Protocol(format!("row {t} of source {:?} was never received", src.key)))?;
            let a = (t - r.start) * np;
            out.extend_from_slice(&data[a..a + np]);
        }
        Ok(out)
    }

    fn is_local(&self, me: usize, level: u32, oi: usize, rows: &Range<usize>) -> bool {
        let data = self.setup.level(level);
        self.setup.lists.far_of(level, oi).iter().all(|&si| {
            let m = data.nodes[si as usize].rows_of(me);
            m.start <= rows.start && rows.end <= m.end
        })
    }

    fn translate(&self, comm: &Comm, state: &RankState, level: u32, oi: usize, rows: &Range<usize>) -> Result<Vec<Complex64>> {
        let me = comm.rank();
        let data = self.setup.level(level);
        let sampling = data.sampling.unwrap();
        let obs = &data.nodes[oi];
        let mut acc = vec![ZERO; rows.len() * sampling.n_phi];
        let mut spent = 0;
        for &si in self.setup.lists.far_of(level, oi) {
            let src = &data.nodes[si as usize];
            let off = offset(obs, src);
            let samples = self.source_rows(state, me, level, si as usize, rows)?;
            let on_the_fly;
            let op: &[Complex64] = match self.cache.get(level, off) {
                Some(op) => {
                    let s = op.rows_slice(rows.clone()).ok_or_else(|| Error::Misaligned("cached operator rows".into()))?;
                    // keep the Arc alive for the borrow
                    on_the_fly = s.to_vec();
                    &on_the_fly
                }
                None => {
                    let d = sub(obs.center, src.center);
                    on_the_fly = translation_rows(sampling.dims(), rows.clone(), d, self.setup.k, sampling.trunc_order);
                    comm.record(
                        Phase::Setup,
                        crate::operators::TranslationOperator::eval_flops(rows.len(), sampling.n_phi, sampling.trunc_order),
                    );
                    &on_the_fly
                }
            };
            spent += m2l_apply(&samples, op, &mut acc)?;
        }
        comm.record(Phase::M2L, spent);
        Ok(acc)
    }
}

fn stream_tag(part: usize) -> Tag {
    Tag::new(Phase::M2L, 1).part(part as u64)
}

/// Translation with the precomputed plan: remote pieces go out first in
/// capped chunks, fully local observers are translated while they travel,
/// the rest once everything has arrived. Sources are always summed in
/// Morton order.
pub async fn m2l_pass(setup: &Setup, comm: &Comm, state: &mut RankState) -> Result<()> {
    if !setup.has_far_field() {
        return Ok(());
    }
    let me = comm.rank();
    let mut cache = OperatorCache::new(setup.config.operator_budget);
    let mut hulls: BTreeMap<(u32, [i64; 3]), Range<usize>> = BTreeMap::new();
    let mut observers: Vec<(u32, usize, Range<usize>)> = Vec::new();
    for level in setup.expansion_levels() {
        let data = setup.level(level);
        for (oi, obs) in data.nodes.iter().enumerate() {
            if !obs.has_user(me) {
                continue;
            }
            let rows = obs.rows_of(me);
            if rows.is_empty() {
                continue;
            }
            for &si in setup.lists.far_of(level, oi) {
                let h = hulls.entry((level, offset(obs, &data.nodes[si as usize]))).or_insert(rows.clone());
                *h = h.start.min(rows.start)..h.end.max(rows.end);
            }
            observers.push((level, oi, rows));
        }
    }
    for ((level, off), rows) in hulls {
        let data = setup.level(level);
        let s = data.sampling.unwrap();
        if cache.bytes() + (rows.len() * s.n_phi) as u64 * 16 > cache.budget {
            continue;
        }
        let op = translation_operator(level, s.dims(), off, data.side, setup.k, s.trunc_order, rows.clone())?;
        comm.record(
            Phase::Setup,
            crate::operators::TranslationOperator::eval_flops(rows.len(), s.n_phi, s.trunc_order),
        );
        cache.insert(op);
    }
    comm.sink().peak(MemoryClass::TranslationOperators, cache.bytes());

    let chunk = chunk_samples(setup.config.buffer_bytes);
    let mut out_bytes = 0u64;
    for (q, entries) in setup.plan.outgoing(me) {
        let mut stream = Vec::new();
        for e in entries {
            let held = state.multipoles[e.level as usize - 1]
                .get(&e.source)
                .ok_or_else(|| Error::Protocol("plan names a multipole this rank does not hold".into()))?;
            stream.extend_from_slice(rows_slice(held, &e.rows, e.n_phi));
        }
        out_bytes += stream.len() as u64 * 16;
        for (part, piece) in stream.chunks(chunk).enumerate() {
            comm.isend(q, stream_tag(part), piece.to_vec())?;
        }
    }

    let mut tr = Translator {
        setup,
        cache,
        staged: HashMap::new(),
    };
    let mut done = vec![false; observers.len()];
    for (i, (level, oi, rows)) in observers.iter().enumerate() {
        if tr.is_local(me, *level, *oi, rows) {
            let acc = tr.translate(comm, state, *level, *oi, rows)?;
            store(comm, &mut state.locals[*level as usize - 1], *oi, Expansion { rows: rows.clone(), data: acc });
            done[i] = true;
        }
    }

    // gather the incoming streams in whatever order chunks complete
    let incoming: Vec<(usize, &Vec<PlanEntry>)> = setup.plan.incoming(me).collect();
    let mut buffers: Vec<Vec<Complex64>> = incoming.iter().map(|_| Vec::new()).collect();
    let mut next: Vec<usize> = vec![0; incoming.len()];
    let totals: Vec<usize> = incoming
        .iter()
        .map(|(_, entries)| {
            let samples: usize = entries.iter().map(|e| e.samples()).sum();
            CommPlan::message_count(samples, setup.config.buffer_bytes)
        })
        .collect();
    let in_bytes: u64 = incoming.iter().flat_map(|(_, e)| e.iter()).map(|e| e.samples() as u64 * 16).sum();
    comm.sink().peak(MemoryClass::Buffers, out_bytes + in_bytes);
    loop {
        let waiting: Vec<(usize, usize)> = (0..incoming.len()).filter(|&i| next[i] < totals[i]).map(|i| (i, incoming[i].0)).collect();
        if waiting.is_empty() {
            break;
        }
        let expect: Vec<(usize, Tag)> = waiting.iter().map(|&(i, a)| (a, stream_tag(next[i]))).collect();
        let (w, piece) = comm.wait_any(&expect).await?;
        let i = waiting[w].0;
        buffers[i].extend(piece);
        next[i] += 1;
    }
    for ((_, entries), buf) in incoming.iter().zip(buffers) {
        let mut at = 0;
        for e in entries.iter() {
            let n = e.samples();
            if at + n > buf.len() {
                return Err(Error::Protocol("M2L stream shorter than planned".into()));
            }
            tr.staged.entry((e.level, e.source)).or_default().push((e.rows.clone(), buf[at..at + n].to_vec()));
            at += n;
        }
        if at != buf.len() {
            return Err(Error::Protocol("M2L stream longer than planned".into()));
        }
    }
    for (i, (level, oi, rows)) in observers.iter().enumerate() {
        if !done[i] {
            let acc = tr.translate(comm, state, *level, *oi, rows)?;
            store(comm, &mut state.locals[*level as usize - 1], *oi, Expansion { rows: rows.clone(), data: acc });
        }
    }
    Ok(())
}

/// Downward pass, the mirror of [`m2m_pass`]: parent slices travel to the
/// owners of the children's images, are shifted, weighted and anterpolated
/// with the adjoint of the interpolation, and added to the children.
pub async fn l2l_pass(setup: &Setup, comm: &Comm, state: &mut RankState) -> Result<()> {
    let me = comm.rank();
    let depth = setup.num_levels();
    if depth <= FIRST_EXPANSION_LEVEL {
        return Ok(());
    }
    for l in FIRST_EXPANSION_LEVEL..depth {
        let pl = setup.level(l);
        let cl = setup.level(l + 1);
        let (pdims, cdims) = (pl.dims(), cl.dims());
        let (pw, cw) = (pl.quadrature.as_ref().unwrap(), cl.quadrature.as_ref().unwrap());
        let np = pdims.1;
        for (pi, parent) in pl.nodes.iter().enumerate() {
            if !parent.has_user(me) {
                continue;
            }
            let my_rows = parent.rows_of(me);
            let images: Vec<SliceMap> = parent.children.iter().map(|&ci| image(&cl.nodes[ci], pdims)).collect();
            let (upper, lower) = state.locals.split_at_mut(l as usize);
            let local = upper[l as usize - 1].get(&pi);
            let tag = Tag::new(Phase::L2L, 2).level(l).key(parent.key.code);
            for q in parent.users() {
                if q == me {
                    continue;
                }
                let mut payload = Vec::new();
                for img in &images {
                    let both = intersect(&my_rows, &rows_in(img, q));
                    if !both.is_empty() {
                        payload.extend_from_slice(rows_slice(local.unwrap(), &both, np));
                    }
                }
                if !payload.is_empty() {
                    comm.isend(q, tag, payload)?;
                }
            }
            let mut inbox: BTreeMap<usize, (Vec<Complex64>, usize)> = BTreeMap::new();
            for r in parent.users() {
                if r == me {
                    continue;
                }
                let r_rows = parent.rows_of(r);
                if images.iter().any(|img| !intersect(&r_rows, &rows_in(img, me)).is_empty()) {
                    inbox.insert(r, (comm.recv(r, tag).await?, 0));
                }
            }
            for (&ci, img) in parent.children.iter().zip(&images) {
                let child = &cl.nodes[ci];
                if !child.has_user(me) {
                    continue;
                }
                let rows = rows_in(img, me);
                let mut buf = vec![ZERO; rows.len() * np];
                for r in parent.users() {
                    let both = intersect(&parent.rows_of(r), &rows);
                    if both.is_empty() {
                        continue;
                    }
                    let piece: &[Complex64] = if r == me {
                        rows_slice(local.unwrap(), &both, np)
                    } else {
                        let (b, at) = inbox.get_mut(&r).unwrap();
                        let s = &b[*at..*at + both.len() * np];
                        *at += both.len() * np;
                        s
                    };
                    let a = (both.start - rows.start) * np;
                    buf[a..a + piece.len()].copy_from_slice(piece);
                }
                comm.sink().peak(MemoryClass::Temporaries, 2 * 16 * buf.len() as u64);
                shift_rows(&mut buf, pdims, rows.clone(), sub(parent.center, child.center), setup.k);
                for (i, t) in rows.clone().enumerate() {
                    let w = pw.weight(t);
                    buf[i * np..(i + 1) * np].iter_mut().for_each(|v| *v *= w);
                }
                let mut spent = buf.len() as u64 * (flops::SHIFT + 2);
                let (child_rows, mut down) = if !child.is_plural() {
                    let g = SphereGrid::from_samples(pdims.0, pdims.1, buf)?;
                    spent += interpolation_flops(cdims, pdims);
                    (0..cdims.0, fft_anterpolate_adjoint(&g, cdims)?.samples)
                } else {
                    let tag = Tag::new(Phase::L2L, 1).level(l + 1).key(child.key.code);
                    let (v, f) = parallel_resample(comm, tag, ParallelOp::Adjoint, img, child.map(), &buf).await?;
                    spent += f;
                    (child.rows_of(me), v)
                };
                for (i, t) in child_rows.clone().enumerate() {
                    let w = 1.0 / cw.weight(t);
                    down[i * cdims.1..(i + 1) * cdims.1].iter_mut().for_each(|v| *v *= w);
                }
                spent += down.len() as u64 * 2;
                comm.record(Phase::L2L, spent);
                if child_rows.is_empty() {
                    continue;
                }
                let table = &mut lower[0];
                match table.get_mut(&ci) {
                    Some(e) => {
                        for (x, y) in e.data.iter_mut().zip(&down) {
                            *x += y;
                        }
                    }
                    None => store(comm, table, ci, Expansion { rows: child_rows, data: down }),
                }
            }
            for (r, (b, at)) in &inbox {
                if *at != b.len() {
                    return Err(Error::Protocol(format!("L2L message from rank {r} has {} unread samples", b.len() - at)));
                }
            }
        }
    }
    Ok(())
}

fn encode(index: usize, p: &Particle) -> [Complex64; 3] {
    [
        Complex64::new(p.position[0], p.position[1]),
        Complex64::new(p.position[2], index as f64),
        p.intensity,
    ]
}

fn decode(chunk: &[Complex64]) -> Result<(usize, Particle)> {
    let position: Vec3 = [chunk[0].re, chunk[0].im, chunk[1].re];
    Ok((chunk[1].im as usize, Particle::new(position, chunk[2])?))
}

/// Direct interactions of owned leaves with their neighbours; neighbour
/// particles on other ranks arrive as ghosts.
pub async fn near_pass(setup: &Setup, comm: &Comm) -> Result<HashMap<usize, Complex64>> {
    let me = comm.rank();
    let tag = Tag::new(Phase::Near, 1);
    let leaf = setup.leaf_level();
    for (&(a, q), leaves) in &setup.ghosts {
        if a != me {
            continue;
        }
        let mut payload = Vec::new();
        for &li in leaves {
            for p in setup.particles_of_leaf(li) {
                payload.extend(encode(p, &setup.particles[p]));
            }
        }
        comm.isend(q, tag, payload)?;
    }
    let mut ghosts: HashMap<usize, Vec<(usize, Particle)>> = HashMap::new();
    for (&(a, q), leaves) in &setup.ghosts {
        if q != me {
            continue;
        }
        let payload = comm.recv(a, tag).await?;
        let mut chunks = payload.chunks_exact(3);
        for &li in leaves {
            let n = setup.leaf_particles[li].len();
            let list = (0..n)
                .map(|_| decode(chunks.next().ok_or_else(|| Error::Protocol("short ghost message".into()))?))
                .collect::<Result<Vec<_>>>()?;
            ghosts.insert(li, list);
        }
    }
    let owned = setup.owned_leaves(me);
    let mut out = HashMap::new();
    let depth = setup.num_levels();
    for li in owned.clone() {
        let observers: Vec<(usize, Vec3)> = setup.particles_of_leaf(li).map(|p| (p, setup.particles[p].position)).collect();
        let mut acc = vec![ZERO; observers.len()];
        for &nj in setup.lists.near_of(depth, li) {
            let nj = nj as usize;
            let sources: Vec<(usize, Particle)> = if owned.contains(&nj) {
                setup.particles_of_leaf(nj).map(|p| (p, setup.particles[p])).collect()
            } else {
                ghosts
                    .get(&nj)
                    .cloned()
                    .ok_or_else(|| Error::Protocol(format!("ghost leaf {:?} missing", leaf.nodes[nj].key)))?
            };
            let (v, f) = near_field(&observers, &sources, setup.k)?;
            comm.record(Phase::Near, f);
            for (x, y) in acc.iter_mut().zip(v) {
                *x += y;
            }
        }
        for ((p, _), v) in observers.iter().zip(acc) {
            out.insert(*p, v);
        }
    }
    Ok(out)
}

pub fn l2o_pass(setup: &Setup, comm: &Comm, state: &RankState) -> Result<HashMap<usize, Complex64>> {
    let mut out = HashMap::new();
    if !setup.has_far_field() {
        return Ok(out);
    }
    let leaf = setup.leaf_level();
    let dims = leaf.dims();
    let rule = leaf.quadrature.as_ref().unwrap();
    let depth = setup.num_levels() as usize;
    for li in setup.owned_leaves(comm.rank()) {
        let node = &leaf.nodes[li];
        let ids: Vec<usize> = setup.particles_of_leaf(li).collect();
        let observers: Vec<Vec3> = ids.iter().map(|&p| setup.particles[p].position).collect();
        let data = match state.locals[depth - 1].get(&li) {
            Some(e) => e.data.clone(),
            None => vec![ZERO; dims.0 * dims.1],
        };
        let grid = SphereGrid::from_samples(dims.0, dims.1, data)?;
        let v = l2o(&grid, node.center, &observers, rule, setup.k)?;
        comm.record(Phase::L2O, (observers.len() * grid.len()) as u64 * flops::L2O_TERM);
        for (p, x) in ids.into_iter().zip(v) {
            out.insert(p, x);
        }
    }
    Ok(out)
}
