mod oracle;

use gridlife::dispatch::{build_lp, constraint_violation, solve_dispatch};
use oracle::{close, exact_optimum, to_f64, vertex_enumeration, Instance};

fn lp_objective(inst: &Instance) -> f64 {
    let dlp = build_lp(&inst.problem()).unwrap();
    let sol = dlp.lp.solve().unwrap();
    dlp.lp.evaluate(&sol.x)
}

#[test]
fn simplex_matches_exact_rational_optimum() {
    for seed in 0..100u64 {
        let horizon = 1 + (seed % 6) as usize;
        let inst = Instance::random(seed, horizon);
        let exact = exact_optimum(&inst).expect("instances are feasible by construction");
        let ours = lp_objective(&inst);
        assert!(close(ours, to_f64(&exact), 1e-9), "seed {seed}, T={horizon}: {ours} vs {exact}");
    }
}

#[test]
fn simplex_matches_vertex_enumeration() {
    for seed in 100..200u64 {
        let horizon = 1 + (seed % 4) as usize;
        let inst = Instance::random(seed, horizon);
        let reference = vertex_enumeration(&inst).unwrap();
        let ours = lp_objective(&inst);
        assert!(close(ours, reference, 1e-6), "seed {seed}, T={horizon}: {ours} vs {reference}");
    }
}

#[test]
fn solutions_satisfy_every_constraint() {
    for seed in 200..300u64 {
        let p = Instance::random(seed, 1 + (seed % 6) as usize).problem();
        let sol = solve_dispatch(&p).unwrap();
        assert!(constraint_violation(&p, &sol) <= 1e-9, "seed {seed}");
    }
}

#[test]
fn oracles_agree_with_each_other() {
    for seed in 300..330u64 {
        let inst = Instance::random(seed, 1 + (seed % 4) as usize);
        let a = to_f64(&exact_optimum(&inst).unwrap());
        let b = vertex_enumeration(&inst).unwrap();
        assert!(close(a, b, 1e-9), "seed {seed}: {a} vs {b}");
    }
}
