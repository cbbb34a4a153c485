//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use magfield::dataset::Measurement;
use magfield::eval::Metrics;
use magfield::experiment::{cell_dataset, execute_run, Cell, ExperimentConfig, Method, Run};
use magfield::mlp::{Embedding, MlpParams};
use magfield::model::{LossWeights, NetworkShape, PrbModel};
use magfield::optim::{adamw_step, AdamWConfig, OptimizerState};
use magfield::room::{reflection_coeff_from_t60, FieldSynthesizer, RoomSpec, SourceSpec};
use magfield::train::{lr_at, TrainConfig, TrainLog};
use magfield::{Complex64, Point3};
use ndarray::array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_point(rng: &mut ChaCha8Rng, half: f64) -> Point3 {
    Point3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

const AXES: [Point3; 3] = [
    Point3 { x: 1.0, y: 0.0, z: 0.0 },
    Point3 { x: 0.0, y: 1.0, z: 0.0 },
    Point3 { x: 0.0, y: 0.0, z: 1.0 },
];

/// Fourth-order central first and second derivatives along each axis.
fn fd_derivatives(f: impl Fn(Point3) -> f64, x: Point3, h: f64) -> ([f64; 3], f64) {
    let f0 = f(x);
    let mut grad = [0.0; 3];
    let mut lap = 0.0;
    for (i, e) in AXES.iter().enumerate() {
        let p1 = f(x + *e * h);
        let p2 = f(x + *e * (2.0 * h));
        let m1 = f(x - *e * h);
        let m2 = f(x - *e * (2.0 * h));
        grad[i] = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
        lap += (-p2 + 16.0 * p1 - 30.0 * f0 + 16.0 * m1 - m2) / (12.0 * h * h);
    }
    (grad, lap)
}

fn reduced_model(seed: u64) -> PrbModel {
    PrbModel::new(
        &NetworkShape {
            rff_rows: 128,
            hidden_layers: 2,
            width: 8,
        },
        seed,
    )
}

fn criterion_1() -> Outcome {
    let model = reduced_model(11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-3;
    let mut worst_jet: f64 = 0.0;
    for _ in 0..20 {
        let x = random_point(&mut rng, 0.5);
        let (g, phi) = model.log_jets(x).unwrap();
        let direct = model.log_magnitudes(&[x]).unwrap()[0];
        worst_jet = worst_jet.max(rel(g.value, direct, 1e-12));
        for (which, jet) in [(0, g), (1, phi)] {
            let f = |p: Point3| {
                let (g, phi) = model.log_jets(p).unwrap();
                if which == 0 {
                    g.value
                } else {
                    phi.value
                }
            };
            let (grad, lap) = fd_derivatives(f, x, h);
            let gnorm = jet.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (a, b) in jet.grad.iter().zip(grad) {
                worst_jet = worst_jet.max((a - b).abs() / gnorm.max(1e-12));
            }
            worst_jet = worst_jet.max(rel(jet.lap, lap, 1e-12));
        }
    }

    // Parameter gradients of the weighted objective, every entry.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let meas: Vec<Measurement> = (0..3)
        .map(|_| Measurement {
            position: random_point(&mut rng, 0.5),
            magnitude: rng.random_range(0.2..3.0),
        })
        .collect();
    let colloc: Vec<Point3> = (0..3).map(|_| random_point(&mut rng, 0.5)).collect();
    let k = 3.66;
    let weights = LossWeights { data: 0.1, pde: 1e-3 };
    let total = |m: &PrbModel| m.total_loss(&meas, &colloc, k, weights).unwrap().total;
    let (_, grad) = model.loss_and_gradient(&meas, &colloc, k, weights).unwrap();
    let analytic = grad.to_flat();
    let mut worst_param: f64 = 0.0;
    let mut checked = 0;
    let mut idx = 0;
    let mut probe = model.clone();
    for t in 0..model.tensors().len() {
        for i in 0..model.tensors()[t].len() {
            let theta = model.tensors()[t][i];
            let step = 1e-6 * theta.abs().max(1.0);
            probe.tensors_mut()[t][i] = theta + step;
            let plus = total(&probe);
            probe.tensors_mut()[t][i] = theta - step;
            let minus = total(&probe);
            probe.tensors_mut()[t][i] = theta;
            let fd = (plus - minus) / (2.0 * step);
            let a = analytic[idx];
            idx += 1;
            if a.abs() < 1e-8 && fd.abs() < 1e-8 {
                continue;
            }
            worst_param = worst_param.max(rel(a, fd, 0.0));
            checked += 1;
        }
    }
    outcome(
        worst_jet < 1e-4 && worst_param < 1e-4,
        format!(
            "jet max rel err {worst_jet:.2e} (20 pts, h=1e-3); param-gradient max rel err {worst_param:.2e} over {checked}/{} entries",
            model.param_count()
        ),
    )
}

fn plane_wave(kappa: [f64; 3]) -> PrbModel {
    let mut phase = MlpParams::zeros(&[3, 1]);
    phase.layers[0].weight = array![[kappa[0], kappa[1], kappa[2]]];
    PrbModel::from_parts(Embedding::Identity, MlpParams::zeros(&[3, 1]), phase).unwrap()
}

fn criterion_2() -> Outcome {
    let k = RoomSpec::default().wavenumber(400.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dir = random_point(&mut rng, 1.0);
    let dir = dir * (1.0 / dir.norm());
    let model = plane_wave([k * dir.x, k * dir.y, k * dir.z]);
    let pts: Vec<Point3> = (0..64).map(|_| random_point(&mut rng, 0.5)).collect();
    let pde = model.pde_loss(&pts, k).unwrap();
    let mut worst: f64 = 0.0;
    for x in &pts {
        let u = model.reconstruct(*x).unwrap().value();
        worst = worst.max(model.helmholtz_residual(*x, k).unwrap().norm() / u.norm());
    }

    let mut mag = MlpParams::zeros(&[3, 4, 1]);
    mag.layers[1].bias[0] = 0.0;
    let constant = PrbModel::from_parts(Embedding::Identity, mag, MlpParams::zeros(&[3, 4, 1])).unwrap();
    let c_pde = constant.pde_loss(&pts, k).unwrap();
    let c_rel = rel(c_pde, k.powi(4), 0.0);
    outcome(
        pde < 1e-18 && worst < 1e-9 && c_rel < 1e-10,
        format!("plane wave pde_loss {pde:.2e}, max |r|/|u| {worst:.2e}; constant field pde_loss rel err vs k^4 {c_rel:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let room = RoomSpec::default();
    let beta = reflection_coeff_from_t60(&room).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let source = SourceSpec::random(&room, 0.1, &mut rng).unwrap();
    let mut worst: f64 = 0.0;
    let h = 1e-3;
    for freq in [200.0, 600.0] {
        let synth = FieldSynthesizer::new(&room, std::slice::from_ref(&source), freq, 30).unwrap();
        let k = synth.wavenumber();
        for _ in 0..25 {
            let x = random_point(&mut rng, 0.5 - 2.0 * h);
            let u = synth.pressure(x).unwrap();
            let mut lap = Complex64::new(0.0, 0.0);
            for e in AXES {
                lap += synth.pressure(x + e * h).unwrap() + synth.pressure(x - e * h).unwrap() - 2.0 * u;
            }
            lap /= h * h;
            worst = worst.max((lap + k * k * u).norm() / (k * k * u.norm() + 1e-12));
        }
    }
    outcome(
        worst < 1e-3 && (beta - 0.6804).abs() < 1e-3,
        format!("max FD Helmholtz residual {worst:.2e} (50 pts, 200/600 Hz); Sabine beta {beta:.7}"),
    )
}

fn criterion_4() -> Outcome {
    let unit = PrbModel::from_parts(Embedding::Identity, MlpParams::zeros(&[3, 1]), MlpParams::zeros(&[3, 1])).unwrap();
    let at = |a: f64| {
        vec![Measurement {
            position: Point3::new(0.1, -0.2, 0.3),
            magnitude: a,
        }]
    };
    let perfect = unit.data_loss(&at(1.0)).unwrap();
    let decade = unit.data_loss(&at(10.0)).unwrap();
    let double = unit.data_loss(&at(2.0)).unwrap();
    let examples_ok = perfect.abs() < 1e-9
        && (decade - 20.0).abs() < 1e-9
        && (double - 20.0 * 2f64.log10()).abs() < 1e-9
        && (double - 6.0206).abs() < 1e-4;

    let model = reduced_model(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let meas: Vec<Measurement> = (0..10)
        .map(|_| Measurement {
            position: random_point(&mut rng, 0.5),
            magnitude: rng.random_range(0.1..2.0),
        })
        .collect();
    let colloc: Vec<Point3> = (0..16).map(|_| random_point(&mut rng, 0.5)).collect();
    let k = 3.66;
    let w = LossWeights { data: 0.1, pde: 1e-3 };
    let b = model.total_loss(&meas, &colloc, k, w).unwrap();
    let sum_ok = b.total == w.data * b.data + w.pde * b.pde;

    let mut shifted = model.clone();
    *shifted.phase_net.layers.last_mut().unwrap().bias.first_mut().unwrap() += 1.234;
    let s = shifted.total_loss(&meas, &colloc, k, w).unwrap();
    let inv = rel(s.data, b.data, 1e-300).max(rel(s.pde, b.pde, 1e-300));
    outcome(
        examples_ok && sum_ok && inv < 1e-12,
        format!(
            "data_loss examples {perfect:.3e} / {decade:.9} / {double:.9} dB; weighted sum exact: {sum_ok}; phase-bias invariance rel {inv:.2e}"
        ),
    )
}

struct SeedRuns {
    seed: u64,
    nearest: Metrics,
    nf: Metrics,
    prb: Metrics,
    prb_strong: Metrics,
}

fn desk_runs() -> Vec<SeedRuns> {
    let cfg = ExperimentConfig::desk_scale();
    cfg.seeds
        .iter()
        .map(|&seed| {
            let cell = Cell {
                frequency_hz: 200.0,
                num_measurements: 20,
                seed,
            };
            let ds = cell_dataset(&cfg, &cell).unwrap();
            let run = |r: Run| {
                let t = Instant::now();
                let m = execute_run(&cfg, &ds, &r, None).unwrap().metrics;
                println!(
                    "  seed {seed} {:<24} median {:.3} dB  mean {:.3} dB  pde_rms {}  ({:.0}s)",
                    m.method,
                    m.median_lsd_db,
                    m.mean_lsd_db,
                    m.pde_rms.map_or("-".into(), |r| format!("{r:.4}")),
                    t.elapsed().as_secs_f64()
                );
                m
            };
            SeedRuns {
                seed,
                nearest: run(Run::plain(Method::Nearest)),
                nf: run(Run::plain(Method::Nf)),
                prb: run(Run::plain(Method::PrbPinn)),
                prb_strong: run(Run {
                    method: Method::PrbPinn,
                    lambda_pde: Some(1.0),
                }),
            }
        })
        .collect()
}

fn criterion_5(runs: &[SeedRuns]) -> Outcome {
    let ordered = runs
        .iter()
        .filter(|r| r.prb.median_lsd_db < r.nf.median_lsd_db && r.nf.median_lsd_db < r.nearest.median_lsd_db)
        .count();
    let n = runs.len() as f64;
    let mean = |f: fn(&SeedRuns) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let p = mean(|r| r.prb.median_lsd_db);
    let nf = mean(|r| r.nf.median_lsd_db);
    let nn = mean(|r| r.nearest.median_lsd_db);
    outcome(
        ordered >= 2 && p < nf && nf < nn,
        format!(
            "prb_pinn < nf < nearest in {ordered}/{} seeds; mean medians {p:.3} / {nf:.3} / {nn:.3} dB",
            runs.len()
        ),
    )
}

fn criterion_6(runs: &[SeedRuns]) -> Outcome {
    let best = runs
        .iter()
        .filter(|r| r.prb.median_lsd_db < r.nf.median_lsd_db && r.prb.median_lsd_db < r.prb_strong.median_lsd_db)
        .count();
    let monotone = runs.iter().all(|r| {
        let (a, b, c) = (r.nf.pde_rms.unwrap(), r.prb.pde_rms.unwrap(), r.prb_strong.pde_rms.unwrap());
        a >= b && b >= c
    });
    let rms: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: {:.3e}/{:.3e}/{:.3e}",
                r.seed,
                r.nf.pde_rms.unwrap(),
                r.prb.pde_rms.unwrap(),
                r.prb_strong.pde_rms.unwrap()
            )
        })
        .collect();
    outcome(
        2 * best > runs.len() && monotone,
        format!(
            "lambda_pde=1e-3 best in {best}/{} seeds; pde_rms at lambda 0/1e-3/1 non-increasing: {monotone} ({})",
            runs.len(),
            rms.join(", ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let config = AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut theta = [0.0];
    let mut state = OptimizerState::new(1);
    adamw_step(&mut [&mut theta[..]], &[&[1.0][..]], &mut state, 1e-3, &config).unwrap();
    let expected = -1e-3 / (1.0 + 1e-8);
    let step_err = (theta[0] - expected).abs();

    let decayed = AdamWConfig::default();
    let mut theta2 = [2.0];
    let mut state2 = OptimizerState::new(1);
    adamw_step(&mut [&mut theta2[..]], &[&[1.0][..]], &mut state2, 1e-3, &decayed).unwrap();
    let expected2 = 2.0 - 1e-3 * (1.0 / (1.0 + 1e-8) + 1e-4 * 2.0);
    let decay_err = (theta2[0] - expected2).abs();

    let cfg = TrainConfig::default();
    let lrs = [lr_at(&cfg, 0), lr_at(&cfg, 10_000), lr_at(&cfg, 25_000)];
    let exact = lrs == [1e-3, 9e-4, 8.1e-4];
    outcome(
        step_err < 1e-12 && decay_err < 1e-12 && exact,
        format!("t=1 update err {step_err:.1e} (wd=0), {decay_err:.1e} (wd=1e-4); lr_at(0, 1e4, 2.5e4) = {lrs:?}"),
    )
}

fn max_log_diff(a: &TrainLog, b: &TrainLog) -> f64 {
    if a.entries.len() != b.entries.len() {
        return f64::INFINITY;
    }
    a.entries
        .iter()
        .zip(&b.entries)
        .map(|(x, y)| {
            if x.iteration != y.iteration {
                return f64::INFINITY;
            }
            [(x.data_db, y.data_db), (x.pde, y.pde), (x.total, y.total), (x.lr, y.lr)]
                .iter()
                .map(|(p, q)| rel(*p, *q, 1e-300))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn max_metrics_diff(a: &Metrics, b: &Metrics) -> f64 {
    if a.per_point_lsd.len() != b.per_point_lsd.len() || a.method != b.method {
        return f64::INFINITY;
    }
    let mut d = rel(a.mean_lsd_db, b.mean_lsd_db, 1e-300).max(rel(a.median_lsd_db, b.median_lsd_db, 1e-300));
    if let (Some(p), Some(q)) = (a.pde_rms, b.pde_rms) {
        d = d.max(rel(p, q, 1e-300));
    }
    a.per_point_lsd
        .iter()
        .zip(&b.per_point_lsd)
        .fold(d, |acc, (p, q)| acc.max((p - q).abs()))
}

fn criterion_8() -> Outcome {
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.lattice_n = 9;
    cfg.train.iterations = 400;
    cfg.train.log_every = 20;
    let cell = Cell {
        frequency_hz: 400.0,
        num_measurements: 10,
        seed: 5,
    };
    let mut worst: f64 = 0.0;
    for method in [Method::PrbPinn, Method::Nf, Method::Nearest] {
        let a = execute_run(&cfg, &cell_dataset(&cfg, &cell).unwrap(), &Run::plain(method), None).unwrap();
        let b = execute_run(&cfg, &cell_dataset(&cfg, &cell).unwrap(), &Run::plain(method), None).unwrap();
        if let (Some(la), Some(lb)) = (&a.log, &b.log) {
            worst = worst.max(max_log_diff(la, lb));
        }
        worst = worst.max(max_metrics_diff(&a.metrics, &b.metrics));
    }
    outcome(worst <= 1e-9, format!("max deviation across two runs {worst:.1e} (train logs and metrics, 3 methods)"))
}

fn main() -> ExitCode {
    println!("acceptance suite");
    let mut failures = 0;
    let mut report = |n: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = run();
        let secs = t.elapsed().as_secs_f64();
        if !o.pass {
            failures += 1;
        }
        println!(
            "criterion {n} {}: {name}: {} [{secs:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    report(1, "derivative correctness", &mut || {
        let t = Instant::now();
        let mut o = criterion_1();
        let secs = t.elapsed().as_secs_f64();
        o.pass &= secs < 10.0;
        o
    });
    report(2, "analytic Helmholtz solutions", &mut criterion_2);
    report(3, "simulator physics", &mut || {
        let t = Instant::now();
        let mut o = criterion_3();
        o.pass &= t.elapsed().as_secs_f64() < 30.0;
        o
    });
    report(4, "loss identities", &mut criterion_4);
    println!("  desk-scale runs: 17^3 lattice, 200 Hz, M = 20, 2e4 iterations");
    let t = Instant::now();
    let runs = desk_runs();
    println!("  desk-scale runs finished in {:.0}s", t.elapsed().as_secs_f64());
    report(5, "method ordering", &mut || criterion_5(&runs));
    report(6, "lambda_pde sensitivity", &mut || criterion_6(&runs));
    report(7, "optimizer and schedule", &mut criterion_7);
    report(8, "determinism", &mut criterion_8);
    if failures == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
