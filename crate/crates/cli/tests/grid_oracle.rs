use adacrit_cli::config::ExperimentConfig;
use adacrit_cli::experiment::execute;
use adacrit_cli::grid::tune;
use adacrit_cli::registry::build;

const BODY: &str = r#"
[objective]
kind = "quadratic"
diag = [1.0]
[start]
kind = "fixed"
values = [3.0]
[optimizer]
method = "nag"
[run]
max_steps = 30
[grid]
"#;

fn config(axes: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!("{BODY}{axes}")).unwrap()
}

#[test]
fn grid_matches_brute_force_over_momentum() {
    let cfg = config("alpha = [0.5, 0.2, 0.05, 0.02, 0.005]\nmu = [0.9, 0.99]\ninterior_rule = false\n");
    let p = build(&cfg.objective).unwrap();
    let g = tune(&cfg, cfg.grid.as_ref().unwrap(), &p).unwrap();

    let mut best = (f64::INFINITY, 0.0, 0.0);
    for alpha in [0.5, 0.2, 0.05, 0.02, 0.005] {
        for mu in [0.9, 0.99] {
            let mut c = cfg.clone();
            c.optimizer.alpha = Some(alpha);
            c.optimizer.mu = Some(mu);
            let loss = execute(&c, &p, 0, false).unwrap().final_loss();
            if loss < best.0 {
                best = (loss, alpha, mu);
            }
        }
    }
    assert_eq!(g.cells.len(), 10);
    assert_eq!((g.best_loss, g.best.alpha, g.best.mu), best);
}

#[test]
fn grid_is_invariant_to_listing_order() {
    let a = config("alpha = [0.5, 0.2, 0.05]\nmu = [0.9, 0.99]\n");
    let b = config("alpha = [0.05, 0.5, 0.2]\nmu = [0.99, 0.9]\n");
    let p = build(&a.objective).unwrap();
    let ga = tune(&a, a.grid.as_ref().unwrap(), &p).unwrap();
    let gb = tune(&b, b.grid.as_ref().unwrap(), &p).unwrap();
    assert_eq!(ga, gb);
}
