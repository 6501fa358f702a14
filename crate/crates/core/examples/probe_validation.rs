use certdesc::validation::{convergence_study, StudyConfig};

fn main() {
    let cfg = StudyConfig {
        levels: 4,
        h0: 0.5,
        dg: Default::default(),
    };
    let t0 = std::time::Instant::now();
    let rows = convergence_study(&cfg).unwrap();
    for r in &rows {
        println!(
            "level {} {:?}: dofs {:7} exact {:+.6e} est {:.6e} eta {:.4}",
            r.level, r.disc, r.dofs, r.exact_error, r.estimate, r.effectivity
        );
    }
    println!("elapsed: {:.1?}", t0.elapsed());
}
