// Scratch pilot for timing the solvers at benchmark scale.
use std::time::Instant;

use qudit_pulse::basis::build_control_basis;
use qudit_pulse::gates::{haar_random, qft};
use qudit_pulse::grape::{grape_optimize, rescale_execution_time, GrapeConfig};
use qudit_pulse::graph::{build_graph, GraphKind};
use qudit_pulse::grd;
use qudit_pulse::linalg::special_unitarize;
use qudit_pulse::magicarp::{solve, MagicarpConfig, SolveStatus};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("d4");

    match which {
        "d4" => {
            let g = build_graph(GraphKind::Linear, 4, None).unwrap();
            let basis = build_control_basis(&g);
            let target = special_unitarize(&qft(4)).unwrap();

            let t0 = Instant::now();
            let seq = grd::decompose(&target, &g).unwrap();
            let sched = grd::to_pulse_schedule(&seq, &basis).unwrap();
            println!("GRD    d=4 QFT: T={:.3} steps={} wall={:?}", sched.total_time, seq.steps.len(), t0.elapsed());

            for seed in 0..3u64 {
                let t0 = Instant::now();
                let out = grape_optimize(&target, &basis, &GrapeConfig { seed, ..Default::default() }).unwrap();
                let sched = rescale_execution_time(&out.controls);
                println!(
                    "GRAPE  d=4 QFT seed={seed}: J={:.2e} T={:.3} iters={} conv={} wall={:?}",
                    out.infidelity, sched.total_time, out.iterations, out.converged, t0.elapsed()
                );
            }
            for seed in 0..3u64 {
                let t0 = Instant::now();
                let out = solve(&target, &basis, &MagicarpConfig { seed, ..Default::default() }).unwrap();
                println!(
                    "MAGIC  d=4 QFT seed={seed}: J={:.2e} T={:.3} iters={} status={:?} mesh={} wall={:?} drift={:.2e} c0={:.3}",
                    out.validated_infidelity, out.execution_time, out.outer_iterations, out.status,
                    out.final_mesh, t0.elapsed(), out.conservation.max_speed_deviation, out.conservation.initial_speed
                );
            }
        }
        "d16" => {
            let g = build_graph(GraphKind::Grid, 16, None).unwrap();
            let basis = build_control_basis(&g);
            println!("d=16 grid: m = {}", basis.len());
            let target = special_unitarize(&haar_random(16, 1)).unwrap();

            let t0 = Instant::now();
            let seq = grd::decompose(&target, &g).unwrap();
            let sched = grd::to_pulse_schedule(&seq, &basis).unwrap();
            println!("GRD    d=16 haar: T={:.3} steps={} wall={:?}", sched.total_time, seq.steps.len(), t0.elapsed());

            let t0 = Instant::now();
            let out = grape_optimize(&target, &basis, &GrapeConfig { seed: 1, ..Default::default() }).unwrap();
            let gsched = rescale_execution_time(&out.controls);
            println!(
                "GRAPE  d=16 haar: J={:.2e} T={:.3} iters={} conv={} wall={:?}",
                out.infidelity, gsched.total_time, out.iterations, out.converged, t0.elapsed()
            );

            let t0 = Instant::now();
            let cfg = MagicarpConfig {
                seed: 1,
                initial_mesh: if let Some(m) = args.get(2) { m.parse().unwrap() } else { 64 },
                krylov_tol: if let Some(t) = args.get(3) { t.parse().unwrap() } else { 1e-2 },
                krylov_max_iters: 40,
                max_outer_iterations: 400,
                ..Default::default()
            };
            let out = solve(&target, &basis, &cfg).unwrap();
            println!(
                "MAGIC  d=16 haar: J={:.2e} T={:.3} iters={} status={:?} mesh={} restarts={} wall={:?}",
                out.validated_infidelity, out.execution_time, out.outer_iterations, out.status,
                out.final_mesh, out.restarts_used, t0.elapsed()
            );
            println!(
                "       conservation: c0={:.3} drift={:.2e} tol={:.2e} unit={:.2e} area={:.3}",
                out.conservation.initial_speed,
                out.conservation.max_speed_deviation,
                1e-6 * (1.0 + out.conservation.initial_speed),
                out.conservation.max_unitarity_defect,
                out.conservation.pulse_area,
            );
        }
        "cons" => {
            // Calibrate the conservation-check mesh factor.
            use num_complex::Complex64;
            use qudit_pulse::magicarp::ShootingParameter;
            use qudit_pulse::propagate::conservation_report;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            for d in [4usize, 16] {
                let kind = if d == 16 { GraphKind::Grid } else { GraphKind::Linear };
                let g = build_graph(kind, d, None).unwrap();
                let basis = build_control_basis(&g);
                for scale in [1.0f64, 5.0, 20.0] {
                    let m = ShootingParameter::random(d, scale, &mut rng);
                    let mat = m.matrix() * Complex64::new(1.0, 0.0);
                    let c0 = basis.projected_norm(&mat);
                    for n in [256usize, 1024, 4096] {
                        let rep = conservation_report(&mat, &basis, n).unwrap();
                        println!(
                            "d={d} |M|={scale:5.1} c0={c0:7.3} n={n:5}: drift={:.3e} rel={:.3e} (ch)^2={:.3e}",
                            rep.max_speed_deviation,
                            rep.max_speed_deviation / (1.0 + c0),
                            (c0 / n as f64).powi(2)
                        );
                    }
                }
            }
        }
        other => eprintln!("unknown pilot '{other}'"),
    }
}
