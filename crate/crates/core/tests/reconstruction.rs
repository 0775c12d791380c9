use pmace_core::baselines::{
    amplitude_loss, awf_reconstruct, epie_sweep, reconstruct, BaselineConfig,
};
use pmace_core::fft::Fft2;
use pmace_core::metrics::Region;
use pmace_core::ptycho::{
    far_field, generate_phantom, generate_probe, generate_scan_pattern, simulate_measurements,
    MeasurementSet, NoiseConfig, PhantomSpec, Probe, ProbeKind,
};
use pmace_core::recon::{Method, MethodConfig, Reference};
use pmace_core::solver::{pmace_reconstruct, PmaceConfig};
use pmace_core::ComplexImage;

struct Instance {
    x: ComplexImage,
    probe: Probe,
    data: MeasurementSet,
}

fn instance(noise: NoiseConfig) -> Instance {
    let x = generate_phantom((48, 48), &PhantomSpec::new("blobs".parse().unwrap()), 5).unwrap();
    let probe = generate_probe(16, &ProbeKind::default(), 0).unwrap();
    let scan = generate_scan_pattern((48, 48), 16, 6, 1, 5).unwrap();
    let data = simulate_measurements(&x, &probe, &scan, &noise).unwrap();
    Instance { x, probe, data }
}

fn configs(iters: usize) -> Vec<MethodConfig> {
    let mut out = vec![MethodConfig::Pmace(PmaceConfig {
        max_iters: iters,
        residual_tol: 0.0,
        ..PmaceConfig::with_alpha(0.8)
    })];
    for (m, t) in [
        (Method::Epie, 1.0),
        (Method::Awf, 1.0),
        (Method::Sharp, 0.8),
    ] {
        out.push(MethodConfig::Baseline(BaselineConfig {
            max_iters: iters,
            residual_tol: 0.0,
            ..BaselineConfig::new(m, t)
        }));
    }
    out
}

#[test]
fn every_method_costs_two_ffts_per_position_per_iteration() {
    let inst = instance(NoiseConfig::default());
    let j = inst.data.len() as u64;
    for iters in [1, 3] {
        for cfg in configs(iters) {
            let r = reconstruct(&cfg, &inst.data, &inst.probe, None).unwrap();
            assert_eq!(r.iterations_run, iters);
            assert_eq!(r.fft_calls, 2 * j * iters as u64, "{}", r.method);
            assert_eq!(r.trace.len(), iters);
        }
    }
}

#[test]
fn every_method_improves_on_the_initial_guess() {
    let inst = instance(NoiseConfig::noiseless());
    let region = Region::Mask(inst.data.scan().support());
    for cfg in configs(30) {
        let r = reconstruct(
            &cfg,
            &inst.data,
            &inst.probe,
            Some(Reference::new(&inst.x, &region)),
        )
        .unwrap();
        let start = r.trace.initial_nrmse.unwrap();
        let end = r.final_nrmse().unwrap();
        assert!(end < 0.8 * start, "{}: {start} -> {end}", r.method);
    }
}

#[test]
fn pmace_ignores_position_order() {
    let inst = instance(NoiseConfig::default());
    let j = inst.data.len();
    let perm: Vec<usize> = (0..j).map(|i| (i * 7 + 3) % j).collect();
    let shuffled = inst.data.permuted(&perm).unwrap();
    let cfg = PmaceConfig {
        max_iters: 10,
        ..PmaceConfig::with_alpha(0.6)
    };
    let a = pmace_reconstruct(&inst.data, &inst.probe, &cfg, None).unwrap();
    let b = pmace_reconstruct(&shuffled, &inst.probe, &cfg, None).unwrap();
    let scale = a.image.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let diff = a
        .image
        .iter()
        .zip(b.image.iter())
        .map(|(p, q)| (p - q).norm_sqr())
        .sum::<f64>()
        .sqrt();
    assert!(
        diff <= 1e-10 * scale,
        "relative difference {}",
        diff / scale
    );
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let inst = instance(NoiseConfig::default());
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            configs(4)
                .iter()
                .map(|cfg| {
                    reconstruct(cfg, &inst.data, &inst.probe, None)
                        .unwrap()
                        .image
                })
                .collect::<Vec<_>>()
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn epie_leaves_data_consistent_images_unchanged() {
    let inst = instance(NoiseConfig::noiseless());
    let fft = Fft2::square(16);
    let scan = inst.data.scan().clone();
    let amplitudes = (0..scan.len())
        .map(|j| {
            far_field(&fft, &inst.probe, &scan.extract_patch(&inst.x, j).unwrap())
                .unwrap()
                .mapv(|z| z.norm())
        })
        .collect();
    let consistent = MeasurementSet::new(amplitudes, scan).unwrap();
    let order: Vec<usize> = (0..consistent.len()).collect();
    let mut x = inst.x.clone();
    epie_sweep(&fft, &consistent, &inst.probe, &mut x, &order, 1.0).unwrap();
    let diff = x
        .iter()
        .zip(inst.x.iter())
        .map(|(p, q)| (p - q).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let scale = inst.x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    assert!(diff <= 1e-12 * scale);
}

#[test]
fn momentum_reaches_a_loss_level_no_later_than_plain_descent() {
    let inst = instance(NoiseConfig::noiseless());
    let fft = Fft2::square(16);
    let run = |momentum| {
        let cfg = BaselineConfig {
            momentum,
            max_iters: 60,
            residual_tol: 0.0,
            ..BaselineConfig::new(Method::Awf, 1.0)
        };
        awf_reconstruct(&inst.data, &inst.probe, &cfg, None).unwrap()
    };
    let plain = run(false);
    let fast = run(true);
    let target = amplitude_loss(&fft, &inst.data, &inst.probe, &plain.image).unwrap();
    let first_below = |r: &pmace_core::recon::ReconstructionResult| {
        r.trace
            .records()
            .iter()
            .position(|t| t.objective.unwrap() <= target * 1.0001)
    };
    let plain_hit = first_below(&plain).unwrap_or(usize::MAX);
    let fast_hit = first_below(&fast).expect("accelerated run reaches the plain final loss");
    assert!(fast_hit <= plain_hit, "{fast_hit} vs {plain_hit}");
}

#[test]
fn baselines_reject_bad_tunables() {
    let inst = instance(NoiseConfig::default());
    for (m, t) in [
        (Method::Epie, -1.0),
        (Method::Awf, 0.0),
        (Method::Sharp, 1.5),
        (Method::Pmace, 0.5),
    ] {
        let cfg = MethodConfig::Baseline(BaselineConfig::new(m, t));
        assert!(reconstruct(&cfg, &inst.data, &inst.probe, None).is_err());
    }
}
