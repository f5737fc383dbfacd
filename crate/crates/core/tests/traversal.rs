use hfmm::kernel::{generate_geometry, self_potential, GeometryKind, GeometrySpec, IntensityRule, Particle, Wavenumber};
use hfmm::operators::flops;
use hfmm::spmd::{Phase, Scheduler};
use hfmm::traversal::serial::serial_evaluate;
use hfmm::traversal::{build_setup, evaluate_potential, CommPlan, EvalOutput, RunConfig};
use hfmm::tree::AlignmentPolicy;
use hfmm::Error;
use num_complex::Complex64;

fn grid(extent: f64, seed: u64) -> Vec<Particle> {
    let spec = GeometrySpec::new(GeometryKind::PlanarGrid, extent, 0.25).unwrap();
    generate_geometry(&spec, 1.0, IntensityRule::Random { seed }).unwrap()
}

fn rel_rms(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn run(ps: &[Particle], cfg: RunConfig) -> EvalOutput {
    evaluate_potential(ps, &cfg).unwrap()
}

/// Gathers the rows every rank holds of each node at `level` into whole grids.
fn assemble(out: &EvalOutput, level: u32, locals: bool) -> Vec<Vec<Complex64>> {
    let data = out.setup.level(level);
    let (nt, np) = data.dims();
    let mut grids = vec![vec![Complex64::new(f64::NAN, 0.0); nt * np]; data.nodes.len()];
    for r in &out.ranks {
        let table = if locals { &r.state.locals } else { &r.state.multipoles };
        for (&i, e) in &table[level as usize - 1] {
            grids[i][e.rows.start * np..e.rows.end * np].copy_from_slice(&e.data);
        }
    }
    grids
}

fn frob_rel(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

#[test]
fn single_rank_matches_serial_oracle() {
    let ps = grid(4.0, 3);
    let out = run(&ps, RunConfig::default());
    let ser = serial_evaluate(&out.setup).unwrap();
    assert!(rel_rms(&out.potentials, &ser.potentials) < 1e-12);
    for level in out.setup.expansion_levels() {
        for (i, g) in assemble(&out, level, false).iter().enumerate() {
            assert!(frob_rel(g, &ser.multipoles[level as usize - 1][i].samples) < 1e-12);
        }
    }
}

#[test]
fn upward_pass_on_several_ranks_matches_serial() {
    let ps = grid(4.0, 5);
    for n in [2, 3, 5] {
        let out = run(&ps, RunConfig { n_ranks: n, ..Default::default() });
        let ser = serial_evaluate(&out.setup).unwrap();
        for (i, g) in assemble(&out, 3, false).iter().enumerate() {
            assert!(frob_rel(g, &ser.multipoles[2][i].samples) < 1e-12, "n_ranks {n} node {i}");
        }
    }
}

#[test]
fn leaf_locals_match_serial_under_adversarial_delivery() {
    let ps = grid(4.0, 9);
    for (n, seed) in [(2, 1), (4, 2), (6, 3)] {
        let cfg = RunConfig {
            n_ranks: n,
            scheduler: Scheduler::Adversarial { seed },
            ..Default::default()
        };
        let out = run(&ps, cfg);
        let ser = serial_evaluate(&out.setup).unwrap();
        let leaf = out.setup.num_levels();
        for (i, g) in assemble(&out, leaf, true).iter().enumerate() {
            assert!(frob_rel(g, &ser.locals[leaf as usize - 1][i].samples) < 1e-12);
        }
        assert!(rel_rms(&out.potentials, &ser.potentials) < 1e-12);
    }
}

#[test]
fn accurate_against_direct_sum() {
    let ps = grid(4.0, 11);
    let exact = self_potential(&ps, Wavenumber::from_wavelength(1.0).unwrap()).unwrap();
    let mut last = f64::INFINITY;
    for digits in [2.0, 3.0, 4.0] {
        let out = run(&ps, RunConfig { digits, ..Default::default() });
        let err = rel_rms(&out.potentials, &exact);
        assert!(err <= 10f64.powf(-digits), "digits {digits}: {err}");
        assert!(err <= last);
        last = err;
    }
}

#[test]
fn volume_512_particles_five_levels() {
    let spec = GeometrySpec::new(GeometryKind::CubicVolume, 2.0, 0.25).unwrap();
    let ps = generate_geometry(&spec, 1.0, IntensityRule::Random { seed: 4 }).unwrap();
    assert_eq!(ps.len(), 512);
    let out = run(&ps, RunConfig { leaf_diameter: 0.125, n_ranks: 3, ..Default::default() });
    assert_eq!(out.setup.num_levels(), 5);
    let exact = self_potential(&ps, Wavenumber::from_wavelength(1.0).unwrap()).unwrap();
    assert!(rel_rms(&out.potentials, &exact) <= 1e-3);
}

#[test]
fn potentials_do_not_depend_on_layout() {
    let ps = grid(4.0, 21);
    let base = run(&ps, RunConfig::default()).potentials;
    for n in [2, 3, 7] {
        for alignment in [AlignmentPolicy::Aligned, AlignmentPolicy::RankOrdered] {
            for buffer_bytes in [u64::MAX, 16] {
                let cfg = RunConfig { n_ranks: n, alignment, buffer_bytes, ..Default::default() };
                assert_eq!(run(&ps, cfg).potentials, base, "{n} {alignment:?} {buffer_bytes}");
            }
        }
    }
}

#[test]
fn schedulers_agree_on_results_and_counters() {
    let ps = grid(4.0, 2);
    let mk = |scheduler| RunConfig { n_ranks: 4, scheduler, ..Default::default() };
    let a = run(&ps, mk(Scheduler::Deterministic));
    let b = run(&ps, mk(Scheduler::Adversarial { seed: 99 }));
    let c = run(&ps, mk(Scheduler::Threaded));
    assert_eq!(a.potentials, b.potentials);
    assert_eq!(a.potentials, c.potentials);
    for phase in Phase::ALL {
        let (x, y, z) = (a.ledger.phase_total(phase), b.ledger.phase_total(phase), c.ledger.phase_total(phase));
        assert_eq!((x.flops, x.messages, x.bytes), (y.flops, y.messages, y.bytes));
        assert_eq!((x.flops, x.messages, x.bytes), (z.flops, z.messages, z.bytes));
    }
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let ps = grid(4.0, 8);
    let cfg = RunConfig { n_ranks: 5, ..Default::default() };
    let (a, b) = (run(&ps, cfg.clone()), run(&ps, cfg));
    assert_eq!(a.potentials, b.potentials);
    assert_eq!(a.ledger.to_json().unwrap(), b.ledger.to_json().unwrap());
}

#[test]
fn counters_conserve_and_match_the_plan() {
    let ps = grid(4.0, 6);
    let out = run(&ps, RunConfig { n_ranks: 6, audit: true, ..Default::default() });
    assert!(out.ledger.conserved());
    let m2l = out.ledger.phase_total(Phase::M2L);
    assert_eq!(m2l.bytes, out.setup.plan.total_bytes());
    let logged: u64 = out.log.iter().filter(|m| m.tag.phase == Phase::M2L).map(|m| m.bytes).sum();
    assert_eq!(logged, m2l.bytes);
    let m2m = out.ledger.phase_total(Phase::M2M);
    let l2l = out.ledger.phase_total(Phase::L2L);
    assert!(m2m.messages > 0);
    assert_eq!((m2m.messages, m2m.bytes), (l2l.messages, l2l.bytes));
}

#[test]
fn buffer_cap_splits_streams() {
    let ps = grid(4.0, 6);
    let free = run(&ps, RunConfig { n_ranks: 3, audit: true, ..Default::default() });
    let (&(a, q), _) = free.setup.plan.streams.iter().next().unwrap();
    let total = free.setup.plan.bytes(a, q);
    let cap = total / 4;
    let capped = run(&ps, RunConfig { n_ranks: 3, audit: true, buffer_bytes: cap, ..Default::default() });
    let sent = capped
        .log
        .iter()
        .filter(|m| m.tag.phase == Phase::M2L && m.source == a && m.destination == q)
        .count();
    assert_eq!(sent as u64, total.div_ceil(cap / 16 * 16));
    assert_eq!(sent, CommPlan::message_count(total as usize / 16, cap));
    assert!(capped.log.iter().filter(|m| m.tag.phase == Phase::M2L).all(|m| m.bytes <= cap));
    assert_eq!(capped.potentials, free.potentials);
}

#[test]
fn single_rank_sends_nothing() {
    let out = run(&grid(4.0, 1), RunConfig::default());
    assert_eq!(out.ledger.total().messages, 0);
    assert_eq!(out.ledger.total().bytes, 0);
}

#[test]
fn zero_intensities_give_zero_potentials() {
    let ps: Vec<Particle> = grid(4.0, 1)
        .into_iter()
        .map(|p| Particle::new(p.position, Complex64::new(0.0, 0.0)).unwrap())
        .collect();
    let out = run(&ps, RunConfig { n_ranks: 2, ..Default::default() });
    assert!(out.potentials.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    assert!(out.ledger.phase_total(Phase::M2L).flops > 0);
}

#[test]
fn one_particle_per_leaf_limits_near_work() {
    let ps = grid(4.0, 1);
    let out = run(&ps, RunConfig { one_particle_per_leaf: true, ..Default::default() });
    let depth = out.setup.num_levels();
    let pairs: usize = (0..out.setup.leaf_level().nodes.len())
        .map(|i| out.setup.lists.near_of(depth, i).len() - 1)
        .sum();
    assert_eq!(out.ledger.phase_total(Phase::Near).flops, pairs as u64 * flops::NEAR_PAIR);

    let crowded = run_err(&ps, RunConfig { one_particle_per_leaf: true, leaf_diameter: 0.5, ..Default::default() });
    assert!(matches!(crowded, Error::InvalidInput(_)));
}

fn run_err(ps: &[Particle], cfg: RunConfig) -> Error {
    match evaluate_potential(ps, &cfg) {
        Ok(_) => panic!("expected an error"),
        Err(e) => e,
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let ps = grid(2.0, 1);
    for cfg in [
        RunConfig { buffer_bytes: 0, ..Default::default() },
        RunConfig { n_ranks: 0, ..Default::default() },
        RunConfig { digits: 0.0, ..Default::default() },
    ] {
        assert!(matches!(run_err(&ps, cfg), Error::InvalidInput(_)));
    }
}

#[test]
fn small_trees_without_far_field() {
    let ps = grid(1.0, 1);
    let cfg = RunConfig { n_ranks: 2, leaf_diameter: 1.0, ..Default::default() };
    let setup = build_setup(&ps, &cfg).unwrap();
    assert!(setup.num_levels() < 3, "{} levels", setup.num_levels());
    let out = run(&ps, cfg);
    let exact = self_potential(&ps, Wavenumber::from_wavelength(1.0).unwrap()).unwrap();
    assert!(rel_rms(&out.potentials, &exact) < 1e-13);
}
