use s2g_core::dataset::{generate_split, GenSpec, Task};
use s2g_core::model::{presets, Model};
use s2g_core::train::*;
use std::time::Instant;

fn main() {
    let spec = GenSpec { task: Task::Delaunay, n_min: 20, n_max: 20, knn_k: 0, d_in: 2, clusters_min: 0, clusters_max: 0, spread: 0.0 };
    let train_data = generate_split(&spec, 2000, 42, 0);
    let val_data = generate_split(&spec, 300, 42, 1);
    let test_data = generate_split(&spec, 300, 42, 2);

    for (name, cfg_m) in [("s2g", presets::delaunay_s2g(1)), ("siam", presets::delaunay_siam(1))] {
        let model = Model::new(cfg_m).unwrap();
        let cfg = TrainConfig { max_epochs: 15, patience: 20, seed: 7, ..TrainConfig::default() };
        let t = Instant::now();
        let (report, test) = train_and_evaluate(model, &train_data, &val_data, &test_data, &cfg).unwrap();
        let val_f1s: Vec<String> = report.history.iter().filter(|r| r.split == "val").map(|r| format!("{:.3}", r.f1.unwrap())).collect();
        println!("{name}: val F1 by epoch: {} | test F1 {:.4} ({:.0?})", val_f1s.join(" "), test.f1, t.elapsed());
    }

    let spec = GenSpec { task: Task::HullSpherical, n_min: 30, n_max: 30, knn_k: 10, d_in: 3, clusters_min: 0, clusters_max: 0, spread: 0.0 };
    let train_data = generate_split(&spec, 800, 42, 0);
    let val_data = generate_split(&spec, 100, 42, 1);
    let test_data = generate_split(&spec, 100, 42, 2);
    let model = Model::new(presets::hull_s2g(1, 10)).unwrap();
    let cfg = TrainConfig { batch_size: 16, max_epochs: 10, patience: 20, seed: 7, ..TrainConfig::default() };
    let t = Instant::now();
    let (report, test) = train_and_evaluate(model, &train_data, &val_data, &test_data, &cfg).unwrap();
    let aucs: Vec<String> = report.history.iter().filter(|r| r.split == "val").map(|r| format!("{:.3}", r.auc.unwrap_or(f64::NAN))).collect();
    println!("hull: val AUC by epoch: {} | test AUC {:.4} F1 {:.4} ({:.0?})", aucs.join(" "), test.auc.unwrap(), test.f1, t.elapsed());
}
