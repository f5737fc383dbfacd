//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. An optional argument selects criteria by name.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use hfmm::kernel::{generate_geometry, GeometryKind, GeometrySpec, IntensityRule, Particle};
use hfmm::report::efficiency;
use hfmm::sphere::{fft_anterpolate, fft_interpolate, parallel_resample, ParallelOp, SphereGrid};
use hfmm::spmd::{spawn_world, Phase, Scheduler, Tag, WorldOptions};
use hfmm::traversal::{build_setup, evaluate_potential, EvalOutput, RunConfig};
use hfmm::tree::{AlignmentPolicy, SliceMap};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grid(extent: f64, seed: u64) -> Vec<Particle> {
    geometry(GeometryKind::PlanarGrid, extent, seed)
}

fn geometry(kind: GeometryKind, extent: f64, seed: u64) -> Vec<Particle> {
    let spec = GeometrySpec::new(kind, extent, 0.25).unwrap();
    generate_geometry(&spec, 1.0, IntensityRule::Random { seed }).unwrap()
}

fn run(ps: &[Particle], cfg: &RunConfig) -> EvalOutput {
    evaluate_potential(ps, cfg).unwrap()
}

fn rel_rms(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Direct sum with `g = e^{-jkr} / 4πr`, λ = 1, skipping the self term.
fn exact(ps: &[Particle]) -> Vec<Complex64> {
    let k = 2.0 * std::f64::consts::PI;
    ps.iter()
        .map(|o| {
            ps.iter()
                .filter(|s| s.position != o.position)
                .map(|s| {
                    let d = s.position.iter().zip(&o.position).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    Complex64::from_polar(1.0, -k * d) / (4.0 * std::f64::consts::PI * d) * s.intensity
                })
                .sum()
        })
        .collect()
}

/// R² of `y` against `scale · f` with the least-squares scale.
fn r2_scaled(f: &[f64], y: &[f64]) -> f64 {
    let s = f.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / f.iter().map(|a| a * a).sum::<f64>();
    r2(y, f.iter().map(|a| s * a))
}

/// R² of `y` against `a + b · f` with least-squares `a, b`.
fn r2_affine(f: &[f64], y: &[f64]) -> f64 {
    let n = f.len() as f64;
    let (mf, my) = (f.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let b = f.iter().zip(y).map(|(a, c)| (a - mf) * (c - my)).sum::<f64>()
        / f.iter().map(|a| (a - mf).powi(2)).sum::<f64>();
    let a = my - b * mf;
    r2(y, f.iter().map(|v| a + b * v))
}

fn r2(y: &[f64], fit: impl Iterator<Item = f64>) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let res: f64 = y.iter().zip(fit).map(|(a, b)| (a - b).powi(2)).sum();
    let tot: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    1.0 - res / tot
}

fn frob_rel(a: &SphereGrid, b: &SphereGrid) -> f64 {
    let num: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.samples.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn random_grid(rng: &mut ChaCha8Rng, nt: usize, np: usize) -> SphereGrid {
    let s = (0..nt * np)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    SphereGrid::from_samples(nt, np, s).unwrap()
}

fn accuracy() -> Outcome {
    let ps = grid(8.0, 1);
    let reference = exact(&ps);
    let mut errs = Vec::new();
    let mut levels = 0;
    let start = Instant::now();
    for digits in [2.0, 3.0, 4.0] {
        let out = run(&ps, &RunConfig { digits, ..Default::default() });
        levels = out.setup.num_levels();
        errs.push(rel_rms(&out.potentials, &reference));
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "N=1024 levels={levels} err(d=2,3,4)={:.2e},{:.2e},{:.2e} in {secs:.1}s",
        errs[0], errs[1], errs[2]
    );
    ensure(ps.len() == 1024 && levels == 6, || format!("wrong setup: {detail}"))?;
    ensure(errs[1] <= 1e-3 && errs[2] <= 1e-4, || format!("accuracy: {detail}"))?;
    ensure(errs[0] >= errs[1] && errs[1] >= errs[2], || format!("not monotone: {detail}"))?;
    ensure(secs <= 60.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn transparency() -> Outcome {
    let ps = grid(8.0, 2);
    let base = run(&ps, &RunConfig::default()).potentials;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n_ranks in [1, 2, 3, 4, 8, 16] {
        for alignment in [AlignmentPolicy::Aligned, AlignmentPolicy::RankOrdered] {
            for buffer_bytes in [u64::MAX, 16] {
                let cfg = RunConfig { n_ranks, alignment, buffer_bytes, ..Default::default() };
                let out = run(&ps, &cfg);
                if buffer_bytes == 16 && n_ranks > 1 {
                    let streams = out.setup.plan.streams.len();
                    let split = streams == 0 || out.ledger.phase_total(Phase::M2L).messages as usize > streams;
                    ensure(split, || format!("N_p={n_ranks}: tiny buffer did not split the plan"))?;
                }
                let e = rel_rms(&out.potentials, &base);
                ensure(e <= 1e-10, || format!("N_p={n_ranks} {alignment:?} M_S={buffer_bytes}: {e:.2e}"))?;
                worst = worst.max(e);
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} layouts, worst relative RMS {worst:.2e}"))
}

/// Random consecutive row blocks over `ranks` covering `nt` rows.
fn random_layout(rng: &mut ChaCha8Rng, nt: usize, np: usize, ranks: &[usize]) -> SliceMap {
    let mut cuts: Vec<usize> = (0..ranks.len() - 1).map(|_| rng.gen_range(0..=nt)).collect();
    cuts.push(0);
    cuts.push(nt);
    cuts.sort_unstable();
    let blocks: Vec<(usize, usize)> = ranks.iter().zip(cuts.windows(2)).map(|(&r, w)| (r, w[1] - w[0])).collect();
    SliceMap::from_rows(nt, np, &blocks)
}

fn parallel_interpolate(g: &SphereGrid, src: &SliceMap, dst: &SliceMap, world: usize) -> SphereGrid {
    let out = spawn_world(world, WorldOptions::default(), |comm| async move {
        let rows = src.rows_of(comm.rank()).unwrap_or(0..0);
        let local = g.samples[rows.start * g.n_phi..rows.end * g.n_phi].to_vec();
        let tag = Tag::new(Phase::M2M, 1);
        let (v, _) = parallel_resample(&comm, tag, ParallelOp::Interpolate, src, dst, &local).await?;
        Ok(v)
    })
    .unwrap();
    let mut samples = vec![Complex64::new(f64::NAN, 0.0); dst.total()];
    for (r, rows) in dst.row_bounds() {
        samples[rows.start * dst.n_phi..rows.end * dst.n_phi].copy_from_slice(&out.results[r]);
    }
    SphereGrid::from_samples(dst.n_theta, dst.n_phi, samples).unwrap()
}

fn parallel_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let r = rng.gen_range(1..=8);
        let (nt, np) = (rng.gen_range(1..=12), 2 * rng.gen_range(1..=8));
        let (mt, mp) = (nt + rng.gen_range(0..=10), np + 2 * rng.gen_range(0..=5));
        let world = r + rng.gen_range(0..=2);
        let mut ranks: Vec<usize> = (0..world).collect();
        ranks.shuffle(&mut rng);
        let src = random_layout(&mut rng, nt, np, &ranks[..r]);
        let dst = if trial % 2 == 0 {
            src.image(mt, mp)
        } else {
            ranks.shuffle(&mut rng);
            let r2 = rng.gen_range(1..=r);
            random_layout(&mut rng, mt, mp, &ranks[..r2])
        };
        let g = random_grid(&mut rng, nt, np);
        let e = frob_rel(&parallel_interpolate(&g, &src, &dst, world), &fft_interpolate(&g, (mt, mp)).unwrap());
        ensure(e <= 1e-12, || format!("trial {trial}: {nt}x{np} -> {mt}x{mp} over {r} ranks: {e:.2e}"))?;
        worst = worst.max(e);
    }
    let g = random_grid(&mut rng, 3, 4);
    let src = SliceMap::from_rows(3, 4, &[(0, 1), (1, 1), (2, 1)]);
    let dst = src.image(5, 6);
    let par = parallel_interpolate(&g, &src, &dst, 3);
    let ser = fft_interpolate(&g, (5, 6)).unwrap();
    ensure(par == ser, || format!("3x4 -> 5x6 over 3 ranks differs: {:.2e}", frob_rel(&par, &ser)))?;
    Ok(format!("200 trials, worst {worst:.2e}; 3x4 -> 5x6 (R=3) bitwise equal"))
}

fn total_flops(ps: &[Particle]) -> f64 {
    let cfg = RunConfig { n_ranks: 1, ..Default::default() };
    run(ps, &cfg).ledger.total().flops as f64
}

fn complexity_shape() -> Outcome {
    let start = Instant::now();
    let (mut n, mut c) = (Vec::new(), Vec::new());
    for extent in [8.0, 16.0, 32.0, 64.0] {
        let ps = grid(extent, 5);
        n.push(ps.len() as f64);
        c.push(total_flops(&ps));
    }
    let model: Vec<f64> = n.iter().map(|x| x * x.log2().powi(2)).collect();
    let planar = r2_scaled(&model, &c);
    let (mut vn, mut vc) = (Vec::new(), Vec::new());
    for extent in [2.0, 4.0, 8.0] {
        let ps = geometry(GeometryKind::CubicVolume, extent, 6);
        vn.push(ps.len() as f64);
        vc.push(total_flops(&ps));
    }
    let volume = r2_scaled(&vn, &vc);
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "planar N={:?} R²(N log²N)={planar:.4}; volume N={:?} R²(N)={volume:.4}; {secs:.0}s",
        n, vn
    );
    ensure(planar >= 0.98 && volume >= 0.98 && secs <= 900.0, || detail.clone())?;
    Ok(detail)
}

/// 33 × 33 grid: every level has plural nodes for the rank counts used.
fn odd_grid() -> Vec<Particle> {
    let spec = GeometrySpec::new(GeometryKind::PlanarGrid, 8.25, 0.25).unwrap();
    generate_geometry(&spec, 1.0, IntensityRule::Random { seed: 7 }).unwrap()
}

fn message_shape() -> Outcome {
    let ps = odd_grid();
    let ranks = [4.0, 8.0, 16.0, 32.0];
    let mut lines = Vec::new();
    for alignment in [AlignmentPolicy::Aligned, AlignmentPolicy::RankOrdered] {
        let mut msgs = Vec::new();
        for &p in &ranks {
            let cfg = RunConfig { n_ranks: p as usize, alignment, scheduler: Scheduler::Threaded, ..Default::default() };
            let led = run(&ps, &cfg).ledger;
            let (m2m, l2l) = (led.phase_total(Phase::M2M), led.phase_total(Phase::L2L));
            ensure((m2m.messages, m2m.bytes) == (l2l.messages, l2l.bytes), || {
                format!("N_p={p} {alignment:?}: M2M {m2m:?} vs L2L {l2l:?}")
            })?;
            msgs.push(m2m.messages as f64);
        }
        let p2: Vec<f64> = ranks.iter().map(|p| p * p).collect();
        let fit = r2_affine(&p2, &msgs);
        ensure(fit >= 0.95, || format!("{alignment:?}: messages {msgs:?} R²={fit:.4}"))?;
        lines.push(format!("{alignment:?} {msgs:?} R²={fit:.4}"));
    }
    Ok(format!("N=1089, {}; L2L = M2M", lines.join(", ")))
}

fn alignment_traffic(ps: &[Particle], n_ranks: usize, alignment: AlignmentPolicy) -> u64 {
    let cfg = RunConfig { n_ranks, alignment, audit: true, scheduler: Scheduler::Threaded, ..Default::default() };
    let out = run(ps, &cfg);
    let aggregation: u64 = out
        .log
        .iter()
        .filter(|m| m.tag.phase == Phase::M2M && m.tag.kind == 2)
        .map(|m| m.bytes)
        .sum();
    aggregation + out.ledger.phase_total(Phase::L2L).bytes
}

fn alignment_benefit() -> Outcome {
    let mut lines = Vec::new();
    for (name, ps) in [("32x32", grid(8.0, 8)), ("33x33", odd_grid())] {
        let mut deltas = Vec::new();
        for n in [4, 8, 16, 32] {
            let a = alignment_traffic(&ps, n, AlignmentPolicy::Aligned);
            let r = alignment_traffic(&ps, n, AlignmentPolicy::RankOrdered);
            ensure(a <= r, || format!("{name} N_p={n}: aligned {a} > rank-ordered {r} bytes"))?;
            deltas.push(a as i64 - r as i64);
        }
        lines.push(format!("{name} delta bytes {deltas:?}"));
    }
    Ok(lines.join("; "))
}

fn efficiency_formula() -> Outcome {
    let e = efficiency(128.0, 18.55, 2048.0, 2.38);
    let shown = format!("{e:.2}");
    ensure(shown == "0.49", || format!("efficiency {e}"))?;
    Ok(format!("efficiency(128, 18.55 s -> 2048, 2.38 s) = {e:.4} ~ {shown}"))
}

fn invariants_of(ps: &[Particle], cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let setup = build_setup(ps, cfg).map_err(|e| e.to_string())?;
    let n_leaves = setup.leaf_level().nodes.len();

    let mut next = 0;
    for r in 0..setup.n_ranks() {
        let own = setup.owned_leaves(r);
        ensure(own.start == next && !own.is_empty(), || format!("rank {r} leaves {own:?} after {next}"))?;
        next = own.end;
    }
    ensure(next == n_leaves, || format!("leaves end at {next} of {n_leaves}"))?;
    let mut seen = vec![0u8; ps.len()];
    for leaf in 0..n_leaves {
        for i in setup.particles_of_leaf(leaf) {
            seen[i] += 1;
        }
    }
    ensure(seen.iter().all(|&c| c == 1), || "particles not assigned exactly once".into())?;

    let mut per_level: BTreeMap<(u32, usize), usize> = BTreeMap::new();
    for node in setup.plural_nodes() {
        for r in node.users() {
            *per_level.entry((node.key.level, r)).or_default() += 1;
        }
        if let Some(map) = &node.map {
            ensure(map.is_exact_cover(), || format!("slice map of {:?} is not an exact cover", node.key))?;
            ensure(map.ranks().all(|r| node.has_user(r)), || format!("slice of {:?} given to a non-user", node.key))?;
        }
    }
    if let Some((&(l, r), &c)) = per_level.iter().find(|(_, &c)| c > 2) {
        return Err(format!("rank {r} shares {c} plural nodes at level {l}"));
    }

    let out = evaluate_potential(ps, cfg).map_err(|e| e.to_string())?;
    ensure(out.ledger.conserved(), || "sent != received in some phase".into())?;
    let m2l = out.ledger.phase_total(Phase::M2L);
    ensure(m2l.bytes == out.setup.plan.total_bytes(), || {
        format!("M2L sent {} bytes, plan {}", m2l.bytes, out.setup.plan.total_bytes())
    })?;

    let levels: Vec<u32> = setup.expansion_levels().collect();
    for w in levels.windows(2) {
        let (coarse, fine) = (setup.level(w[1]).dims(), setup.level(w[0]).dims());
        let g = random_grid(rng, coarse.0, coarse.1);
        let back = fft_anterpolate(&fft_interpolate(&g, fine).unwrap(), coarse).unwrap();
        let e = frob_rel(&back, &g);
        ensure(e <= 1e-12, || format!("anterp(interp) {coarse:?} -> {fine:?}: {e:.2e}"))?;
    }
    Ok(())
}

fn structural_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut kinds = BTreeMap::new();
    for trial in 0..100 {
        let (kind, extent) = match rng.gen_range(0..3) {
            0 => (GeometryKind::PlanarGrid, 0.25 * rng.gen_range(8..=24) as f64),
            1 => (GeometryKind::CubicVolume, 0.25 * rng.gen_range(4..=8) as f64),
            _ => (GeometryKind::SphereSurface, 0.5 * rng.gen_range(3..=8) as f64),
        };
        let ps = geometry(kind, extent, trial);
        let cfg = RunConfig {
            n_ranks: rng.gen_range(1..=16),
            alignment: if rng.gen() { AlignmentPolicy::Aligned } else { AlignmentPolicy::RankOrdered },
            buffer_bytes: if rng.gen() { u64::MAX } else { rng.gen_range(16..=4096) },
            digits: rng.gen_range(2.0..4.0),
            leaf_diameter: [0.25, 0.5][rng.gen_range(0..2)],
            scheduler: Scheduler::Adversarial { seed: trial },
            ..Default::default()
        };
        let n_leaves = build_setup(&ps, &RunConfig { n_ranks: 1, ..cfg.clone() }).unwrap().leaf_level().nodes.len();
        let cfg = RunConfig { n_ranks: cfg.n_ranks.min(n_leaves), ..cfg };
        invariants_of(&ps, &cfg, &mut rng)
            .map_err(|e| format!("config {trial} ({kind:?} {extent}, N_p={}): {e}", cfg.n_ranks))?;
        *kinds.entry(format!("{kind:?}")).or_insert(0) += 1;
    }
    Ok(format!("100 configurations {kinds:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle accuracy", accuracy),
        ("rank transparency", transparency),
        ("parallel interpolation", parallel_oracle),
        ("complexity shape", complexity_shape),
        ("message-count shape", message_shape),
        ("alignment benefit", alignment_benefit),
        ("efficiency formula", efficiency_formula),
        ("structural invariants", structural_invariants),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
