use std::collections::BTreeMap;
use thermopose_cli::plots::emit_plots;
use thermopose_cli::stages::ReportFile;

fn main() {
    let mk = |method: &str, order: usize, base: f64| ReportFile {
        method: method.into(),
        order,
        backbone: "Hourglass".into(),
        threshold: 0.5,
        aggregate: base,
        per_joint: (0..14).map(|j| (base + 3.0 * j as f64).min(100.0)).collect(),
        per_domain: BTreeMap::from([("thin".to_string(), base + 3.0), ("thick".to_string(), base - 3.0)]),
        n_samples: 36,
        excluded: 0,
        sweep: vec![(0.1, base * 0.4), (0.5, base), (1.0, (base * 1.4).min(100.0)), (2.0, (base * 1.8).min(100.0))],
    };
    let reports = vec![mk("source_only", 0, 14.0), mk("cycaug", 1, 33.0), mk("cycaug_extreme", 2, 28.0), mk("distilled", 3, 30.0)];
    let files = emit_plots(&reports, std::path::Path::new("/tmp/plotcheck")).unwrap();
    for f in files { println!("{}", f.display()); }
}
